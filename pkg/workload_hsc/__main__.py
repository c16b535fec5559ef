import sys

from workload_hsc.cli import main

sys.exit(main())
