import sys

from foresthash.cli import main

sys.exit(main())
