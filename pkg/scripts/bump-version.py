"""Bump the three uttverify packages to the same version."""

import argparse
from pathlib import Path
from subprocess import run

ROOT = Path(__file__).parent.parent
PACKAGES = ["uttverify_core", "uttverify_lab", "uttverify"]


def bump(spec: str):
    for package in PACKAGES:
        run(["hatch", "version", spec], check=True, cwd=ROOT / "python" / package)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("spec", help="new version, or a segment: major, minor, patch, ...")
    bump(parser.parse_args().spec)
