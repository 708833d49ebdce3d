import sys

from nerfpc.cli import main

sys.exit(main())
