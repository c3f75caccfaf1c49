import sys

from crowd_points.cli import main

if __name__ == "__main__":
    sys.exit(main())
