import sys

from .crlb_cli import main

sys.exit(main())
