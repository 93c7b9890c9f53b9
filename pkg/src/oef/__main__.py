import sys

from oef.cli import main

sys.exit(main())
