#!/usr/bin/env python3
"""
roaflow launcher

Linear fits along trajectories and region-of-attraction estimation by boundary flow.
"""

import os
import sys

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from commands import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
