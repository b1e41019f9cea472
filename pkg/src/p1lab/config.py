"""Experiment configuration: validated dataclass with INI round-trip.

Configs are flat key-value files with four sections (run, weight, grid,
measure) so runs can be diffed and scripted.  Loading and saving are
lossless: floats are written with 17 significant digits.
"""
from __future__ import annotations

import configparser
import enum
import hashlib
import io
from dataclasses import dataclass

from .envelope import WeightField, parse_weight
from .errors import ConfigurationError
from .geometry import QuadratureGrid
from .measures import parse_measure


class ExperimentKind(enum.Enum):
    ENVELOPE = "envelope"
    KERNEL_CONVERGENCE = "kernel_convergence"
    RATE_FIT = "rate_fit"
    MOMENTS = "moments"
    ZERO_EQUIDISTRIBUTION = "zero_equidistribution"
    EXPECTATION_CURRENT = "expectation_current"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ExperimentKind
    weight: str = "fs"
    n_r: int = 256
    n_theta: int = 256
    degrees: tuple[int, ...] = ()
    measure: str = "gaussian_complex"
    trials: int = 200
    nu: float = 2.0
    k_values: tuple[int, ...] = (10, 100, 1000)
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs"

    def __post_init__(self):
        if not isinstance(self.kind, ExperimentKind):
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if self.n_r < 8 or self.n_theta < 8:
            raise ConfigurationError(
                f"grid {self.n_r}x{self.n_theta} too small (need >= 8x8)"
            )
        if any(p < 0 for p in self.degrees):
            raise ConfigurationError(f"negative degree in {self.degrees}")
        if any(k < 1 for k in self.k_values):
            raise ConfigurationError(f"dimensions must be >= 1, got {self.k_values}")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.nu <= 0:
            raise ConfigurationError(f"moment order must be > 0, got {self.nu}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")
        # fail on bad descriptors before any computation starts
        parse_weight(self.weight)
        parse_measure(self.measure)


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.split(","))


def config_from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    try:
        run = cp["run"]
        kind = ExperimentKind(run.get("kind", "").strip())
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad or missing run.kind: {exc}") from exc
    grid = cp["grid"] if cp.has_section("grid") else {}
    weight = cp["weight"] if cp.has_section("weight") else {}
    measure = cp["measure"] if cp.has_section("measure") else {}
    defaults = ExperimentConfig(kind=ExperimentKind.ENVELOPE)
    try:
        return ExperimentConfig(
            kind=kind,
            weight=weight.get("descriptor", defaults.weight),
            n_r=int(grid.get("n_r", defaults.n_r)),
            n_theta=int(grid.get("n_theta", defaults.n_theta)),
            degrees=_ints(run.get("degrees", "")),
            measure=measure.get("descriptor", defaults.measure),
            trials=int(run.get("trials", defaults.trials)),
            nu=float(measure.get("nu", defaults.nu)),
            k_values=_ints(measure.get("k_values", "10,100,1000")),
            seed=int(run.get("seed", defaults.seed)),
            threads=int(run.get("threads", defaults.threads)),
            out_dir=run.get("out", defaults.out_dir),
        )
    except ValueError as exc:
        raise ConfigurationError(f"malformed config value: {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigurationError(f"config file not found: {path}")
    return config_from_parser(cp)


def config_to_text(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["run"] = {
        "kind": cfg.kind.value,
        "degrees": ",".join(str(p) for p in cfg.degrees),
        "trials": str(cfg.trials),
        "seed": str(cfg.seed),
        "threads": str(cfg.threads),
        "out": cfg.out_dir,
    }
    cp["weight"] = {"descriptor": cfg.weight}
    cp["grid"] = {"n_r": str(cfg.n_r), "n_theta": str(cfg.n_theta)}
    cp["measure"] = {
        "descriptor": cfg.measure,
        "nu": f"{cfg.nu:.17g}",
        "k_values": ",".join(str(k) for k in cfg.k_values),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(cfg))


def config_digest(cfg: ExperimentConfig, n: int = 8) -> str:
    """Short stable hash of the full config, used in run directory names."""
    return hashlib.blake2b(config_to_text(cfg).encode(), digest_size=16).hexdigest()[:n]


def cache_key(weight: WeightField, p: int, grid: QuadratureGrid) -> str:
    """Stable key for a cached orthonormal basis.

    Combines the weight content hash (descriptor plus canonical samples of
    phi, so any numeric perturbation of the weight changes the key) with
    the degree and grid resolution.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(weight.content_hash().encode())
    h.update(f"|p={p}|grid={grid.n_r}x{grid.n_theta}".encode())
    return h.hexdigest()
