import sys

from fedrouter.cli import main

sys.exit(main())
