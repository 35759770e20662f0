from enum import Enum


class Speaker(str, Enum):
    SYSTEM = "system"
    USER = "user"


class SystemAction(str, Enum):
    REQUEST = "request"
    CONFIRM = "confirm"
    INFORM_RESULT = "inform_result"
    REPEAT = "repeat"
    BYE = "bye"
    GREET = "greet"


class UserAction(str, Enum):
    INFORM_NORM = "inform_norm"
    INFORM_MULTI = "inform_multi"
    UPDATE_SUB = "update_sub"
    DENY = "deny"
    AFFIRM = "affirm"
    SILENCE = "silence"
    RESTART_SLOT = "restart_slot"
    BYE = "bye"


# Actions whose decision carries a slot argument
SLOT_BEARING_SYSTEM_ACTIONS = frozenset({SystemAction.REQUEST.value, SystemAction.CONFIRM.value})
SLOT_BEARING_USER_ACTIONS = frozenset({
    UserAction.INFORM_NORM.value,
    UserAction.INFORM_MULTI.value,
    UserAction.UPDATE_SUB.value,
    UserAction.RESTART_SLOT.value,
})
# Actions that hand the system slot values
INFORM_FAMILY = SLOT_BEARING_USER_ACTIONS


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    ONGOING = "ongoing"


class RunMode(str, Enum):
    SL = "SL"
    RL_FIXED_DST = "RL-fixed_DST"
    RL_TRAIN_DST = "RL-train_DST"
    AURL = "AURL"
    AURL_MURL = "AURL-MURL"


class Level(str, Enum):
    EASY = "easy"
    MIDDLE = "middle"
    HARD = "hard"


class UserStatus:
    NOT_PROVIDED = 0
    PROVIDED = 1
    NEED_UPDATE = 2


class DecodeMode(str, Enum):
    SAMPLE = "sample"
    GREEDY = "greedy"


class UpdateType(str, Enum):
    FAST = "fast_modules"
    DST = "dst"
    DST_CURRICULUM = "dst_curriculum"


class BufferName(str, Enum):
    USER_DP = "user_dp"
    USER_NLU = "user_nlu"
    SYS_DP = "sys_dp"
    SYS_DST = "sys_dst"


class DefaultValues:
    SLOT_COUNT = 3
    VOCAB_SIZE = 8
    NOISE_RATE = 0.15
    UPDATE_PROB = 0.3
    MAX_TURNS = 16
    DB_SIZE = 50
    SEED = 0

    # inventory ceilings
    MAX_SYSTEM_ACTIONS = 16
    MAX_USER_ACTIONS = 25

    HIDDEN_WIDTH = 64
    HIDDEN_LAYERS = 2
    SL_LEARNING_RATE = 1e-3
    RL_LEARNING_RATE = 3e-4
    CLIP_NORM = 5.0
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8
    ENTROPY_COEF = 0.01

    SUCCESS_REWARD = 2.0
    FAILURE_PENALTY = -1.0
    SYSTEM_PENALTY_UNIT = -0.05
    USER_PENALTY_UNIT = -0.02
    GAMMA = 0.99

    USER_DP_CAPACITY = 6
    USER_NLU_CAPACITY = 6
    SYS_DP_CAPACITY = 6
    SYS_DST_CAPACITY = 3000

    EASY_THRESHOLD = 0.85
    MIDDLE_THRESHOLD = 0.55
    CURRICULUM_BATCH = 32
    MIN_ACTION_COVERAGE = 20

    EPOCHS = 2000
    DIALOGS_PER_EPOCH = 6
    EVAL_INTERVAL = 100
    CORPUS_DIALOGS = 2000
    HELD_OUT_FRACTION = 0.1

    EVAL_DIALOGS = 300
    EVAL_REPEATS = 3
    TRAIN_EVAL_DIALOGS = 100

    # multi-seed acceptance
    ACCEPTANCE_SEEDS = 5
    SL_ACCURACY_TARGET = 0.99
    EASY_SHARE_TARGET = 0.75
    EASY_SHARE_TOLERANCE = 0.05
    SUCCESS_MARGIN = 0.05
    ORDERING_SEED_SHARE = 0.8

    CHECKPOINT_MAGIC = b"AURL"
    CHECKPOINT_VERSION = 1
