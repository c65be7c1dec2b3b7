#!/usr/bin/env python3
"""Regenerate the golden SVG files under tests/golden/.

Run after an intentional change to the SVG renderer, then review the
diff before committing.
"""

import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from _golden import BUILDERS  # noqa: E402

from fmekit.viz import render_svg  # noqa: E402


def main():
    out_dir = REPO / "tests" / "golden"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        path = out_dir / name
        render_svg(build(), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
