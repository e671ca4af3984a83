import sys

from sdesr.cli import main

sys.exit(main())
