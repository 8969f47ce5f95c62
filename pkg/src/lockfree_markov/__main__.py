import sys

from lockfree_markov.cli import main

sys.exit(main())
