import sys

from cgf.main import main

sys.exit(main())
