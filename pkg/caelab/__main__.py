import sys

from caelab.cli import main

sys.exit(main())
