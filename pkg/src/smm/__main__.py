from smm.cli import main
import sys
sys.exit(main())
