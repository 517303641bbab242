"""Allow running SFMIPA as: python -m sfmipa <command>"""

import sys

from sfmipa.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
