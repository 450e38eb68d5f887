#!/usr/bin/env python3
"""Checks that every method-map anchor cited in the sources exists."""

import pathlib
import re
import sys


def anchors(markdown: str) -> set[str]:
    out = set()
    for line in markdown.splitlines():
        m = re.match(r"#+\s+(.*)", line)
        if m:
            slug = re.sub(r"[^a-z0-9 -]", "", m.group(1).strip().lower()).replace(" ", "-")
            out.add(slug)
    return out


def main() -> int:
    root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    known = anchors((root / "docs" / "method_map.md").read_text())
    cite = re.compile(r"method_map\.md#([a-z0-9-]+)")
    missing = []
    for sub in ("core", "tools", "tests", "benchmarks"):
        for path in sorted((root / sub).rglob("*")):
            if path.suffix not in {".cpp", ".hpp", ".py"}:
                continue
            for n, line in enumerate(path.read_text().splitlines(), 1):
                for a in cite.findall(line):
                    if a not in known:
                        missing.append(f"{path.relative_to(root)}:{n}: #{a}")
    for m in missing:
        print(f"unresolved anchor {m}")
    return 1 if missing else 0


if __name__ == "__main__":
    sys.exit(main())
