"""Sparse-to-dense flow on a scene that is 40% blank wall.

Matches Harris corners between the views, propagates the sparse seed flows
to every pixel with optimized diffusion kernels, and compares against a
photometric-only baseline that has no signal inside the blank region.
"""

from pathlib import Path

import numpy as np

from flowdepth import fileio
from flowdepth.matching import detect_corners, match_seeds
from flowdepth.pnp import flow_epe
from flowdepth.propagation import SolveFlowConfig, solve_flow, solve_flow_baseline
from flowdepth.synth import build_scene, render

out_dir = Path("demo_output/02_sparse_to_dense")
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(7)
spec, _ = build_scene("low-texture-40", rng)
result = render(spec)
blank = result.blank_mask
print(f"blank-texture coverage: {blank.mean():.0%} of the image")

corners = detect_corners(result.image_a)
seeds = match_seeds(result.image_a, result.image_b, corners)
seed_err = np.linalg.norm(
    seeds.flows - result.flow[seeds.positions[:, 1], seeds.positions[:, 0]], axis=1
)
print(f"{len(corners)} corners -> {len(seeds)} seeds "
      f"(median error {np.median(seed_err):.2f} px, all on textured surface: "
      f"{not blank[seeds.positions[:, 1], seeds.positions[:, 0]].any()})")

cfg = SolveFlowConfig()
flow = solve_flow(result.image_a, result.image_b, seeds, cfg)
baseline = solve_flow_baseline(result.image_a, result.image_b, cfg)

everywhere = np.ones(blank.shape, dtype=bool)
print(f"{'':24s}{'whole image':>14s}{'blank region':>14s}")
for name, estimate in (("with propagation", flow), ("photometric baseline", baseline)):
    print(f"{name:24s}"
          f"{flow_epe(estimate, result.flow, everywhere):>11.2f} px"
          f"{flow_epe(estimate, result.flow, blank):>11.2f} px")

fileio.write_flo(out_dir / "flow_propagated.flo", flow)
fileio.write_flo(out_dir / "flow_baseline.flo", baseline)
fileio.write_pgm(out_dir / "blank_mask.pgm", blank.astype(np.uint8) * 255)
print(f"artifacts written to {out_dir}/")
