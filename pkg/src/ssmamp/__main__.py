import sys

from ssmamp.cli import main

sys.exit(main())
