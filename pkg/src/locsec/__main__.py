from locsec.cli import main
import sys

sys.exit(main())
