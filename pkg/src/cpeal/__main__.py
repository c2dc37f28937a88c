import sys

from cpeal.cli import main

sys.exit(main())
