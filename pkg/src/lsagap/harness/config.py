"""Experiment configuration: a flat INI-style ``key = value`` format.

Grammar (sections in any order, unknown keys rejected)::

    [experiment]
    kind = exact-gap | mc-gap | rate | uniform-gap | multilayer |
           ar1-warmstart | train-eval-tf | train-eval-cot | context-scan |
           layer-scan | softmax-compare | feature-collapse
    out = runs/my_experiment        ; output directory
    plots = false                   ; render default charts after the run

    [process]
    p = 5
    p_list = 3, 5, 7                ; optional, scan experiments only
    rho = 0.35, 0.12, -0.08, 0.05, 0.2   ; fixed coefficients, or "draw"
    sigma_eps = 0.05
    innovation = gaussian | uniform | laplace

    [grid]
    n = 8                           ; history lengths
    n_offsets = 5, 25, 50, 100, 200 ; alternative to n: use n = p + offset
    L = 1                           ; layer counts

    [data]
    T = 50000
    splits = 0.70, 0.15, 0.15

    [train]
    learning_rate = 1e-3
    batch_size = 512
    max_epochs = 100
    optimizer = momentum | gd
    early_stop_tol = 1e-8
    als_restarts = 2                ; alternating-least-squares inits tried
    als_sweeps = 100                ; sweep cap per init

    [mc]
    samples = 100000

    [rollout]
    steps = 50
    taus = 0.3, 0.5, 0.7, 0.9
    replicates = 2000
    shell = 0.3, 0.9                ; uniform-gap only
    resolution = 20                 ; uniform-gap only

    [seeds]
    list = 1, 2, 3, 4, 5, 6, 7

``--fast`` lowers T to 10_000, mc samples to 10_000, max_epochs to 10 and
replicates to 1000 (never raising configured values); the manifest records
the resolved numbers.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace

from ..attention import TrainConfig
from ..stochastic import INNOVATION_LAWS

EXPERIMENT_KINDS = (
    "exact-gap", "mc-gap", "rate", "uniform-gap", "multilayer",
    "ar1-warmstart", "train-eval-tf", "train-eval-cot", "context-scan",
    "layer-scan", "softmax-compare", "feature-collapse",
)

FAST_T = 10_000
FAST_MC_SAMPLES = 10_000
FAST_EPOCHS = 10
FAST_REPLICATES = 1_000


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    out_dir: str
    plots: bool
    p: int
    p_list: tuple[int, ...]
    rho: tuple[float, ...] | None      # None means seed-drawn stable coefficients
    sigma_eps: float
    innovation: str
    n_grid: tuple[int, ...]
    n_offsets: tuple[int, ...] | None
    l_grid: tuple[int, ...]
    T: int
    splits: tuple[float, float, float]
    train: TrainConfig
    als_restarts: int
    als_sweeps: int
    mc_samples: int
    steps: int
    taus: tuple[float, ...]
    replicates: int
    shell: tuple[float, float]
    resolution: int
    seeds: tuple[int, ...]
    fast: bool = False
    jobs: int = 1

    def n_values(self, p: int) -> tuple[int, ...]:
        if self.n_offsets is not None:
            return tuple(p + off for off in self.n_offsets)
        return self.n_grid


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


_KNOWN_KEYS = {
    "experiment": {"kind", "out", "plots"},
    "process": {"p", "p_list", "rho", "sigma_eps", "innovation"},
    "grid": {"n", "n_offsets", "l"},
    "data": {"t", "splits"},
    "train": {"learning_rate", "batch_size", "max_epochs", "optimizer",
              "early_stop_tol", "als_restarts", "als_sweeps"},
    "mc": {"samples"},
    "rollout": {"steps", "taus", "replicates", "shell", "resolution"},
    "seeds": {"list"},
}


def parse_config(path: str, fast: bool = False, jobs: int = 1,
                 seed_override: tuple[int, ...] | None = None,
                 out_override: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    try:
        kind = get("experiment", "kind", "")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"experiment kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        out_dir = out_override or get("experiment", "out", "runs/" + kind)
        plots = get("experiment", "plots", "false").lower() in ("1", "true", "yes")

        p = int(get("process", "p", "1"))
        if p < 1:
            raise ConfigError("p must be >= 1")
        p_list = _ints(get("process", "p_list", str(p)))
        if not p_list or any(v < 1 for v in p_list):
            raise ConfigError("p_list must hold positive integers")
        rho_text = get("process", "rho", "draw").strip()
        rho = None if rho_text.lower() == "draw" else _floats(rho_text)
        if rho is not None and len(rho) != p:
            raise ConfigError(f"rho has length {len(rho)}, expected p = {p}")
        sigma_eps = float(get("process", "sigma_eps", "1.0"))
        if sigma_eps <= 0:
            raise ConfigError("sigma_eps must be positive")
        innovation = get("process", "innovation", "gaussian").lower()
        if innovation not in INNOVATION_LAWS:
            raise ConfigError(f"innovation must be one of {INNOVATION_LAWS}")

        n_grid = _ints(get("grid", "n", "0"))
        n_offsets_text = get("grid", "n_offsets")
        n_offsets = _ints(n_offsets_text) if n_offsets_text else None
        if n_offsets is None and (not n_grid or any(v < 2 for v in n_grid)):
            raise ConfigError("grid n must hold integers >= 2 (or set n_offsets)")
        l_grid = _ints(get("grid", "l", "1"))
        if not l_grid or any(v < 1 for v in l_grid):
            raise ConfigError("grid L must hold positive integers")

        T = int(get("data", "t", "50000"))
        splits = _floats(get("data", "splits", "0.70, 0.15, 0.15"))
        if len(splits) != 3 or abs(sum(splits) - 1.0) > 1e-9 or min(splits) <= 0:
            raise ConfigError("splits must be three positive fractions summing to 1")

        train = TrainConfig(
            learning_rate=float(get("train", "learning_rate", "1e-3")),
            batch_size=int(get("train", "batch_size", "512")),
            max_epochs=int(get("train", "max_epochs", "100")),
            optimizer=get("train", "optimizer", "momentum"),
            early_stop_tol=float(get("train", "early_stop_tol", "1e-8")),
            splits=tuple(splits),
        )
        als_restarts = int(get("train", "als_restarts", "2"))
        als_sweeps = int(get("train", "als_sweeps", "100"))
        if als_restarts < 1 or als_sweeps < 1:
            raise ConfigError("als_restarts and als_sweeps must be positive")
        mc_samples = int(get("mc", "samples", "100000"))
        if mc_samples < 2:
            raise ConfigError("mc samples must be >= 2")
        steps = int(get("rollout", "steps", "50"))
        taus = _floats(get("rollout", "taus", "0.3, 0.5, 0.7, 0.9"))
        if any(not 0 < t < 1 for t in taus):
            raise ConfigError("taus must lie in (0, 1)")
        replicates = int(get("rollout", "replicates", "2000"))
        shell = _floats(get("rollout", "shell", "0.3, 0.9"))
        if len(shell) != 2 or not 0 < shell[0] < shell[1]:
            raise ConfigError("shell must be '<inner>, <outer>' with 0 < inner < outer")
        resolution = int(get("rollout", "resolution", "20"))

        seeds_text = get("seeds", "list", "")
        seeds = tuple(int(s) for s in seeds_text.replace(",", " ").split())
        if seed_override is not None:
            seeds = tuple(seed_override)
        if not seeds:
            raise ConfigError("seed list must be nonempty")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    cfg = ExperimentConfig(
        kind=kind, out_dir=out_dir, plots=plots, p=p, p_list=p_list, rho=rho,
        sigma_eps=sigma_eps, innovation=innovation, n_grid=n_grid,
        n_offsets=n_offsets, l_grid=l_grid, T=T, splits=tuple(splits),
        train=train, als_restarts=als_restarts, als_sweeps=als_sweeps,
        mc_samples=mc_samples, steps=steps, taus=taus,
        replicates=replicates, shell=(shell[0], shell[1]),
        resolution=resolution, seeds=seeds, fast=fast, jobs=max(1, jobs),
    )
    if fast:
        cfg = replace(
            cfg,
            T=min(cfg.T, FAST_T),
            mc_samples=min(cfg.mc_samples, FAST_MC_SAMPLES),
            replicates=min(cfg.replicates, FAST_REPLICATES),
            train=replace(cfg.train, max_epochs=min(cfg.train.max_epochs, FAST_EPOCHS)),
        )
    return cfg


def resolved_items(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Flat, sorted (key, value) pairs of the fully resolved configuration."""
    items = {
        "experiment.kind": cfg.kind,
        "experiment.plots": str(cfg.plots).lower(),
        "process.p": str(cfg.p),
        "process.p_list": ",".join(map(str, cfg.p_list)),
        "process.rho": "draw" if cfg.rho is None else ",".join(repr(v) for v in cfg.rho),
        "process.sigma_eps": repr(cfg.sigma_eps),
        "process.innovation": cfg.innovation,
        "grid.n": ",".join(map(str, cfg.n_grid)),
        "grid.n_offsets": "" if cfg.n_offsets is None else ",".join(map(str, cfg.n_offsets)),
        "grid.L": ",".join(map(str, cfg.l_grid)),
        "data.T": str(cfg.T),
        "data.splits": ",".join(repr(v) for v in cfg.splits),
        "train.learning_rate": repr(cfg.train.learning_rate),
        "train.batch_size": str(cfg.train.batch_size),
        "train.max_epochs": str(cfg.train.max_epochs),
        "train.optimizer": cfg.train.optimizer,
        "train.early_stop_tol": repr(cfg.train.early_stop_tol),
        "train.als_restarts": str(cfg.als_restarts),
        "train.als_sweeps": str(cfg.als_sweeps),
        "mc.samples": str(cfg.mc_samples),
        "rollout.steps": str(cfg.steps),
        "rollout.taus": ",".join(repr(v) for v in cfg.taus),
        "rollout.replicates": str(cfg.replicates),
        "rollout.shell": ",".join(repr(v) for v in cfg.shell),
        "rollout.resolution": str(cfg.resolution),
        "seeds.list": ",".join(map(str, cfg.seeds)),
        "fast": str(cfg.fast).lower(),
    }
    return sorted(items.items())


def config_hash(cfg: ExperimentConfig) -> str:
    text = "\n".join(f"{k}={v}" for k, v in resolved_items(cfg))
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]
