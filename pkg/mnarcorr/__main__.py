import sys

from mnarcorr.cli import main

sys.exit(main())
