from aurl.main import main

main()
