import sys

from qreplay.cli import main

sys.exit(main())
