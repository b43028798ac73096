"""Run manifests: one JSON file describing a complete, seeded experiment.

Example::

    {
      "skeleton": {"generate": {"num_users": 2000, "num_items": 1500,
                                "num_interactions": 50000, "exponent": 1.0,
                                "seed": 7}},
      "scenarios": [1, 2, 3, {"id": 4, "profile_fraction": 0.2}, 5],
      "sigma": 1.0,
      "configs": [{"min_sim": -1, "over_common": false, "min_nbrs": 1}],
      "k_grid": [5, 10, 20, 40, 80],
      "n_folds": 5,
      "seeds": {"synth": 1, "folds": 0, "tune": 0},
      "output_dir": "out"
    }

``skeleton`` is either ``{"path": ...}`` (relative to the manifest file) or
``{"generate": {...}}``. A config without ``k`` has its neighbourhood size
tuned over ``k_grid``. Command-line flags override manifest values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .evaluation import GridConfig
from .synth import SCENARIOS, ScenarioSpec

DEFAULT_CONFIGS = (
    GridConfig(0.0, False, 1),
    GridConfig(0.0, False, 2),
    GridConfig(-1.0, False, 1),
    GridConfig(-1.0, False, 2),
    GridConfig(-1.0, True, 1),
)
DEFAULT_K_GRID = (5, 10, 20, 40, 80)
SEED_NAMES = ("synth", "folds", "tune")


class ManifestError(ValueError):
    """The manifest or a command-line override is invalid."""


@dataclass
class RunManifest:
    skeleton_path: Path | None = None
    skeleton_params: dict[str, Any] | None = None
    scenarios: list[ScenarioSpec] = field(default_factory=list)
    configs: list[GridConfig] = field(default_factory=lambda: list(DEFAULT_CONFIGS))
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    n_folds: int = 5
    seeds: dict[str, int] = field(default_factory=dict)
    output_dir: Path = Path("out")

    def validate(self, need: tuple[str, ...] = SEED_NAMES) -> None:
        if (self.skeleton_path is None) == (self.skeleton_params is None):
            raise ManifestError("give exactly one of skeleton.path or skeleton.generate")
        if self.skeleton_path is not None and not self.skeleton_path.is_file():
            raise ManifestError(f"skeleton file {self.skeleton_path} does not exist")
        if self.skeleton_params is not None:
            missing = {"num_users", "num_items", "num_interactions", "seed"} - set(self.skeleton_params)
            if missing:
                raise ManifestError(f"skeleton.generate is missing {sorted(missing)}")
        if not self.scenarios:
            raise ManifestError("no scenarios")
        if not self.configs:
            raise ManifestError("no configs")
        if not self.k_grid or any(k < 1 for k in self.k_grid):
            raise ManifestError(f"invalid k_grid {list(self.k_grid)}")
        if self.n_folds < 2:
            raise ManifestError("n_folds must be at least 2")
        for name in need:
            if name not in self.seeds:
                raise ManifestError(f"seed {name!r} must be given explicitly")
        for c in self.configs:
            if c.k is None and not any(k >= c.min_nbrs for k in self.k_grid):
                raise ManifestError(f"no k in the grid is >= min_nbrs for {c.label()}")

    def to_dict(self) -> dict[str, Any]:
        """Canonical content. The output directory and the skeleton's location are
        left out; a skeleton file is identified by its content digest."""
        if self.skeleton_path is not None:
            digest = hashlib.sha256(self.skeleton_path.read_bytes()).hexdigest()
            skel = {"sha256": digest}
        else:
            skel = {"generate": dict(sorted(self.skeleton_params.items()))}
        return {
            "skeleton": skel,
            "scenarios": [
                {"id": s.scenario_id, "sigma": s.sigma, "profile_fraction": s.profile_fraction}
                for s in self.scenarios
            ],
            "configs": [
                {"min_sim": c.min_sim, "over_common": c.over_common, "min_nbrs": c.min_nbrs, "k": c.k}
                for c in self.configs
            ],
            "k_grid": list(self.k_grid),
            "n_folds": self.n_folds,
            "seeds": {k: self.seeds[k] for k in SEED_NAMES if k in self.seeds},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _int(v, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ManifestError(f"{what} must be an integer, got {v!r}")
    return v


def _scenario(entry, sigma: float, fraction: float, seed: int) -> ScenarioSpec:
    if isinstance(entry, dict):
        sid = entry.get("id")
        sigma = entry.get("sigma", sigma)
        fraction = entry.get("profile_fraction", fraction)
    else:
        sid = entry
    if isinstance(sid, bool) or sid not in SCENARIOS:
        raise ManifestError(f"unknown scenario {sid!r}; expected one of 1..5")
    try:
        return ScenarioSpec(sid, float(sigma), float(fraction), seed)
    except ValueError as exc:
        raise ManifestError(str(exc)) from None


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "common"):
        return True
    if t in ("false", "0", "no", "all"):
        return False
    raise ManifestError(f"cannot read {text!r} as a boolean")


def _config(entry: dict) -> GridConfig:
    try:
        k = entry.get("k")
        cfg = GridConfig(
            float(entry.get("min_sim", 0.0)),
            parse_bool(entry.get("over_common", False)),
            _int(entry.get("min_nbrs", 1), "min_nbrs"),
            None if k is None else _int(k, "k"),
        )
        cfg.resolve(cfg.k if cfg.k is not None else max(cfg.min_nbrs, 1))
    except (ValueError, TypeError, AttributeError) as exc:
        raise ManifestError(f"invalid config {entry!r}: {exc}") from None
    return cfg


def parse_config_flag(text: str) -> GridConfig:
    """``"min_sim,over_common,min_nbrs,k"``; k may be ``auto`` (or empty) to tune."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (3, 4):
        raise ManifestError(f"--config expects min_sim,over_common,min_nbrs[,k], got {text!r}")
    try:
        min_sim = float(parts[0])
        min_nbrs = int(parts[2])
        k = None if len(parts) == 3 or parts[3] in ("", "auto", "tune") else int(parts[3])
    except ValueError:
        raise ManifestError(f"cannot parse --config {text!r}") from None
    return _config({"min_sim": min_sim, "over_common": parse_bool(parts[1]), "min_nbrs": min_nbrs, "k": k})


def parse_scenario_ids(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ManifestError(f"cannot parse scenario list {text!r}") from None


def load_manifest(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunManifest:
    """Read a manifest (or start empty) and apply command-line overrides.

    Recognised override keys: ``scenarios`` (ids), ``configs`` (GridConfig
    list), ``seed_synth``, ``seed_folds``, ``seed_tune``, ``output_dir``,
    ``skeleton_path``.
    """
    raw: dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest {path} does not exist")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ManifestError("manifest must be a JSON object")
        base = path.parent
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    m = RunManifest()
    skel = raw.get("skeleton", {})
    if "path" in skel:
        m.skeleton_path = (base / skel["path"]).resolve()
    if "generate" in skel:
        m.skeleton_params = dict(skel["generate"])
    if "skeleton_path" in ov:
        m.skeleton_path, m.skeleton_params = Path(ov["skeleton_path"]).resolve(), None

    seeds = dict(raw.get("seeds", {}))
    for name in SEED_NAMES:
        if f"seed_{name}" in ov:
            seeds[name] = ov[f"seed_{name}"]
    m.seeds = {k: _int(v, f"seeds.{k}") for k, v in seeds.items()}

    sigma = float(raw.get("sigma", 1.0))
    fraction = float(raw.get("profile_fraction", 0.2))
    entries = raw.get("scenarios", [])
    if "scenarios" in ov:
        by_id = {(e["id"] if isinstance(e, dict) else e): e for e in entries}
        entries = [by_id.get(sid, sid) for sid in ov["scenarios"]]
    m.scenarios = [_scenario(e, sigma, fraction, m.seeds.get("synth", 0)) for e in entries]

    if "configs" in ov:
        m.configs = list(ov["configs"])
    elif "configs" in raw:
        m.configs = [_config(c) for c in raw["configs"]]
    if "k_grid" in raw:
        m.k_grid = tuple(_int(k, "k_grid entry") for k in raw["k_grid"])
    m.n_folds = _int(raw.get("n_folds", 5), "n_folds")
    m.output_dir = Path(ov.get("output_dir", raw.get("output_dir", "out")))
    return m
