"""Run the fig6 reproduction driver; extra arguments go to the CLI (e.g. --out DIR)."""
import sys

from fermiphot.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce", "fig6", *sys.argv[1:]]))
