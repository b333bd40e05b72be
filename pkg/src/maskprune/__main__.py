import sys

from maskprune.cli import main

sys.exit(main())
