import sys

from grasplab.cli import main

sys.exit(main())
