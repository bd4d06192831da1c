"""Main entry point for the redundancy-lens package."""

import sys

from redundancy_lens.cli import main as cli_main


def main() -> None:
    """Run the ``lens`` command line."""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
