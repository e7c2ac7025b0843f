import sys

from graphshap.cli import main

sys.exit(main())
