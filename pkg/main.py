"""
Grade-aware Course Recommender
Entry point: python main.py <command> [options]
"""
import sys

from app.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
