"""Allow ``python3 -m slq`` as an alias for the ``slq`` console script."""

import sys

from .cli import main

sys.exit(main())
