import sys

from emission_sentinel.cli import main

sys.exit(main())
