import sys

from latentbin.cli import main

sys.exit(main())
