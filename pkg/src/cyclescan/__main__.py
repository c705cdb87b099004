import sys

from cyclescan.cli import cli_main

sys.exit(cli_main())
