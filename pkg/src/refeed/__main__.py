import sys

from refeed.cli import main

sys.exit(main())
