import sys

from factored_rl.cli.main import main

sys.exit(main())
