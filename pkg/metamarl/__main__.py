import sys

from .metamarl import main

sys.exit(main())
