import sys

from cnls_kam.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
