from feras.cli import main
import sys
sys.exit(main())
