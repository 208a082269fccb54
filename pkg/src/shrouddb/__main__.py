import sys

from shrouddb.cli import main

sys.exit(main())
