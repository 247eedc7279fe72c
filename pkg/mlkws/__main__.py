import sys

from mlkws.cli import main

sys.exit(main())
