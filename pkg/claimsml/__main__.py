import sys

from claimsml.main import main

sys.exit(main())
