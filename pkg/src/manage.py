#!/usr/bin/env python
"""splitleak management utility; same commands as the `splitleak` entry point."""

import sys
from pathlib import Path

if __name__ == '__main__':
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent))
    from main import main

    main(sys.argv)
