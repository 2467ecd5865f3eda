import sys

from tetmg.main import main

sys.exit(main())
