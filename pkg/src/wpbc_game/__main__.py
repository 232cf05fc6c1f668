import sys

from wpbc_game.cli import main

sys.exit(main())
