import sys

from evomas.cli import main

sys.exit(main())
