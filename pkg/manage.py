#!/usr/bin/env python
"""Run coreset experiments from the repository root: run, verify-theorems, summarize, sweep."""
import sys

from coresets.cli import cli_main


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == '__main__':
    main()
