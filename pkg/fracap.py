"""Run the fracap command line from a source checkout: ``python fracap.py <command> ...``."""

from src.experiments.cli import main

if __name__ == "__main__":
    main()
