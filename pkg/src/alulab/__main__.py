import sys

from alulab.cli import main

sys.exit(main())
