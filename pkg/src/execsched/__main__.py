"""``python -m execsched`` delegates to the console entry point."""
import sys

from execsched.cli import main

if __name__ == "__main__":
    sys.exit(main())
