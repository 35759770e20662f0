from typing import Dict

from aurl.core.domain import build_environment
from aurl.core.encoding import FeatureEncoder
from aurl.schemas.config import DomainConfig
from aurl.schemas.models import Environment, Schema

_environments: Dict[str, Environment] = {}
_encoders: Dict[str, FeatureEncoder] = {}


def get_environment(domain: DomainConfig) -> Environment:
    """
    Get or build the environment (schema + entity table) for a domain block
    📝 File: dependencies.py, Function: get_environment
    """
    key = domain.model_dump_json()
    if key not in _environments:
        _environments[key] = build_environment(domain)
    return _environments[key]


def get_encoder(schema: Schema) -> FeatureEncoder:
    """
    Get or create the feature encoder of a schema
    📝 File: dependencies.py, Function: get_encoder
    """
    key = schema.model_dump_json()
    if key not in _encoders:
        _encoders[key] = FeatureEncoder(schema)
    return _encoders[key]


def reset_cache() -> None:
    _environments.clear()
    _encoders.clear()
