"""TOML-backed configuration for the CLI and pipeline.

Every tunable of the processing stages lives here with its library default;
a config file only overrides what it names. Unknown sections or keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import InvalidInputError
from .losses import LossWeights
from .propagation import SolveFlowConfig
from .recon import ReconConfig
from .rotfilter import RansacConfig


@dataclass(frozen=True)
class MatchingConfig:
    max_corners: int = 200
    quality: float = 0.01
    patch: int = 7
    search_radius: int = 16
    min_score: float = 0.8
    min_margin: float = 0.05


@dataclass(frozen=True)
class OracleConfig:
    ransac_iterations: int = 200
    inlier_px: float = 2.0


@dataclass(frozen=True)
class FilterConfig:
    iterations: int = 500
    inlier_px: float = 3.0
    min_outlier_ratio: float = 0.20
    sample_stride: int = 8


@dataclass(frozen=True)
class ReconWeightsConfig:
    flow: float = 1.0
    photometric: float = 1.0
    depth_smooth: float = 0.1
    normal_smooth: float = 0.05
    ssim_mix: float = 0.5
    iterations: int = 800
    step_size: float = 1e-2


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    flow: SolveFlowConfig = field(default_factory=SolveFlowConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    recon: ReconWeightsConfig = field(default_factory=ReconWeightsConfig)

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(
            iterations=self.filter.iterations,
            inlier_px=self.filter.inlier_px,
            min_outlier_ratio=self.filter.min_outlier_ratio,
            rng_seed=self.seed,
        )

    def flow_config(self) -> SolveFlowConfig:
        return dataclasses.replace(self.flow, rng_seed=self.seed)

    def loss_weights(self) -> LossWeights:
        r = self.recon
        return LossWeights(
            flow=r.flow,
            photometric=r.photometric,
            depth_smooth=r.depth_smooth,
            normal_smooth=r.normal_smooth,
            ssim_mix=r.ssim_mix,
        )

    def recon_config(self) -> ReconConfig:
        return ReconConfig(
            iterations=self.recon.iterations,
            step_size=self.recon.step_size,
            patience=self.recon.iterations,
            rng_seed=self.seed,
        )


_SECTIONS = {
    "matching": MatchingConfig,
    "flow": SolveFlowConfig,
    "filter": FilterConfig,
    "oracle": OracleConfig,
    "recon": ReconWeightsConfig,
}
_TOP_LEVEL = {"seed", "jobs"}


def _build_section(cls, data: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidInputError(f"unknown config keys in [{section}]: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> PipelineConfig:
    """Parse a TOML file into a validated :class:`PipelineConfig`."""
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid TOML: {exc}") from exc
    kwargs = {}
    for key, value in data.items():
        if key in _TOP_LEVEL:
            kwargs[key] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidInputError(f"{path}: [{key}] must be a table")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise InvalidInputError(f"{path}: unknown config section or key {key!r}")
    return PipelineConfig(**kwargs)
