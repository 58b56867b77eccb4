import sys

from jppf.cli import main

sys.exit(main())
