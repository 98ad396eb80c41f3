import sys

from ldprobust.cli import main

sys.exit(main())
