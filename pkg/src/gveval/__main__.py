import sys

from gveval.cli import main

sys.exit(main())
