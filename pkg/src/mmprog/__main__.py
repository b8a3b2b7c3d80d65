from mmprog.cli import main
import sys

sys.exit(main())
