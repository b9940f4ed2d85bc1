import sys

from rotorfp.cli import main

sys.exit(main())
