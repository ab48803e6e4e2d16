import sys

from hilat.main import main

sys.exit(main())
