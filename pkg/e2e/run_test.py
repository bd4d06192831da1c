#!/usr/bin/env python3
"""
E2E Test Runner for redundancy-lens

Runs the demo pipeline twice with the same seed in separate processes and
checks that every CSV and JSON output is byte-identical.
"""

import filecmp
import os
import subprocess
import sys
import tempfile
import time

# Get the absolute path to the parent directory
PARENT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
COMPARED_SUFFIXES = (".csv", ".json", ".jsonl", ".bin")


def run_demo(out_dir: str) -> int:
    """Run ``lens demo`` into ``out_dir`` and return its exit code."""
    env = dict(os.environ, PYTHONPATH=PARENT_DIR)
    started = time.monotonic()
    result = subprocess.run(
        [sys.executable, "-m", "redundancy_lens", "demo", "--out", out_dir],
        capture_output=True,
        text=True,
        env=env,
        cwd=PARENT_DIR,
    )
    print(f"demo -> {out_dir} in {time.monotonic() - started:.1f}s")
    if result.returncode != 0:
        print("Demo stdout:", result.stdout)
        print("Demo stderr:", result.stderr)
    return result.returncode


def main() -> int:
    """Run the e2e test."""
    with tempfile.TemporaryDirectory() as tmp:
        first = os.path.join(tmp, "first")
        second = os.path.join(tmp, "second")
        for out_dir in (first, second):
            code = run_demo(out_dir)
            if code != 0:
                return code

        names = sorted(
            name for name in os.listdir(first) if name.endswith(COMPARED_SUFFIXES)
        )
        if not names:
            print("Demo produced no outputs!")
            return 1
        _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
        for name in names:
            status = "differs" if name in mismatch or name in errors else "identical"
            print(f"{name}: {status}")
        if mismatch or errors:
            return 1
    print("All demo outputs are byte-identical.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
