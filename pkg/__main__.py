# elasticdb/__main__.py
"""
Entry point: python -m elasticdb bench run|validate ...
"""
import sys

from elasticdb.config.cli import run

if __name__ == "__main__":
    sys.exit(run())
