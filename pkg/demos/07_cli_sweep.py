"""Driving experiments from a JSON config with the command-line runner.

A cross-section sweep on a uniform map is written to a temporary directory
and run twice through ``python -m bathscatter run``. The first run solves
and caches every field; the second reads them back and produces
byte-identical outputs. The manifest lists every file with its parameters.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

CONFIG = {
    "geometry": {"kind": "homogeneous"},
    "grid": {"width": 4.0, "resolution": 32},
    "emitter": {"freq0": 0.35, "V0": [0.1, 0.3]},
    "experiment": {"kind": "cross_sections", "freq_window": [0.345, 0.355], "count": 11},
    "output": "out",
}


def run(cfg, *flags):
    proc = subprocess.run([sys.executable, "-m", "bathscatter", "run", str(cfg), "-v", *flags],
                          capture_output=True, text=True)
    cache_line = [ln for ln in proc.stderr.splitlines() if "cache:" in ln]
    return proc.returncode, cache_line


def main():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "sweep.json"
        cfg.write_text(json.dumps(CONFIG, indent=2))
        out = Path(tmp) / "out"

        code, info = run(cfg, "--emit-manifest-only")
        plan = json.loads((out / "manifest.json").read_text())
        print("planned:", code, plan["status"], [f["path"] for f in plan["files"]])

        code, info = run(cfg, "--threads", "2")
        print("first run:", code, *info)
        first = {p.name: p.read_bytes() for p in out.glob("*.csv")}
        code, info = run(cfg)
        print("second run:", code, *info)
        same = all(p.read_bytes() == first[p.name] for p in out.glob("*.csv"))
        print("outputs identical:", same)

        manifest = json.loads((out / "manifest.json").read_text())
        print("status", manifest["status"], "geometry", manifest["geometry_hash"][:12])
        print((out / "cross_sections_V0-0.csv").read_text().splitlines()[6])

        bad = dict(CONFIG, emitter={"freq0": 0.35, "V0": []})
        cfg.write_text(json.dumps(bad))
        print("empty V0 list exits with", run(cfg)[0])


if __name__ == "__main__":
    main()
