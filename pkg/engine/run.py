#!/usr/bin/env python3
"""
Command-line runner for the informative planning toolkit
"""
import os
import sys

# Add the current directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.main import cli_main  # noqa: E402

if __name__ == "__main__":
    sys.exit(cli_main())
