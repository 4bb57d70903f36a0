import sys

from phisolver.cli import main

sys.exit(main())
