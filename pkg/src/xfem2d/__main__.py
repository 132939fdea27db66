"""Module execution hook: ``python -m xfem2d``."""

import sys

from xfem2d.cli import main

sys.exit(main())
