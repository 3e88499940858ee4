import sys

from rre.cli import main

sys.exit(main())
