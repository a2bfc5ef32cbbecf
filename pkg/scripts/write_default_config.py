#!/usr/bin/env python3
"""Dump the shipped default experiment configuration to a JSON file."""

import argparse
import json
from pathlib import Path

from jumpflux.config import default_config_dict


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("path", nargs="?", default="config.json")
    args = parser.parse_args()
    Path(args.path).write_text(json.dumps(default_config_dict(), indent=2) + "\n")
    print(f"wrote {args.path}")


if __name__ == "__main__":
    main()
