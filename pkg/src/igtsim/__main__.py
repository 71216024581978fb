import sys

from igtsim.cli import main

sys.exit(main())
