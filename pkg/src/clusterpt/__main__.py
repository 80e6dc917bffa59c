import sys

from clusterpt.cli import main

sys.exit(main())
