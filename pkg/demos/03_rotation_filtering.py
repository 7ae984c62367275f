"""Filtering out pure-rotation pairs before depth training.

Pure rotation induces a flow that one homography explains at every pixel,
so such pairs carry no depth signal. A RANSAC homography fit on the dense
flow exposes them: inlier ratios near 100% mean "discard".
"""

import tempfile
from pathlib import Path

import numpy as np

from flowdepth import fileio
from flowdepth.rotfilter import RansacConfig, filter_sequence, write_verdicts
from flowdepth.synth import corpus, read_manifest

workdir = Path(tempfile.mkdtemp(prefix="flowdepth_demo_"))
out_dir = Path("demo_output/03_rotation_filter")
out_dir.mkdir(parents=True, exist_ok=True)

manifest_path = corpus("mixed", 10, workdir, rng_seed=3)
rows = read_manifest(manifest_path)
entries = [(r["pair_id"], str(workdir / r["dir"] / "flow.flo")) for r in rows]

report = filter_sequence(entries, RansacConfig(min_outlier_ratio=0.20))
write_verdicts(out_dir / "verdicts.csv", report)

print(f"{'pair':12s}{'true motion':>14s}{'outlier ratio':>15s}{'verdict':>10s}")
labels = {r["pair_id"]: r["motion"] for r in rows}
correct = 0
for e in report.entries:
    expected = "discard" if labels[e.pair_id] == "rotation" else "keep"
    correct += e.verdict == expected
    print(f"{e.pair_id:12s}{labels[e.pair_id]:>14s}{e.outlier_ratio:>15.3f}{e.verdict:>10s}")
print(f"\n{correct}/{len(report.entries)} verdicts match the generating motion; "
      f"discard fraction {report.discard_fraction:.0%}")
print(f"verdict table written to {out_dir}/verdicts.csv")
