"""Set or bump the version of this package with hatch."""

import argparse
from pathlib import Path
from subprocess import run

ROOT = Path(__file__).parent.parent


def bump(spec: str):
    # hatch accepts an explicit version or a segment: major, minor, patch, ...
    run(["hatch", "version", spec], check=True, cwd=ROOT)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("spec", nargs="?", default="patch")
    bump(parser.parse_args().spec)
