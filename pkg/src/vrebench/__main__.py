import sys

from vrebench.cli import main

sys.exit(main())
