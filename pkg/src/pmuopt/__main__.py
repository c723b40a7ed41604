import sys

from pmuopt.cli import main

sys.exit(main())
