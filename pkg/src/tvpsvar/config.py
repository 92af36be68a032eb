"""Run configuration: one JSON file drives estimation, identification and analysis.

Schema (``schema_version`` 1)::

    {
      "schema_version": 1,
      "data": {                      # either a CSV source ...
        "path": "data.csv", "year_column": "year", "columns": null,
        "splice_plan": [{"base": .., "donor": .., "join_year": .., "direction": "backward", "output": ..}],
        "variables": [{"name": "output", "source": "gdp", "transform": "dlog", "per_capita": "pop"}],
        "start_year": null, "end_year": null
      },
      "simulate": null,              # ... or a DgpSpec mapping for synthetic data
      "model": {"lags": 2, "training_len": 50},
      "priors": {"hyperq_factor": 1e-4, "s_factor": 1e-3, "a0_cov_factor": 10, "g_shape": 0.5,
                 "g_scale": 5e-5, "v0": 20, "v_dof": 2},
      "sampler": {SamplerConfig fields},
      "identification": {"scheme": "maxshare", "target": "output", "horizon": 1,
                         "sign_csv": null, "roles": null, "sign_horizon": 0, "max_tries": 1000, "seed": 0},
      "analysis": {"irf_horizon": 5, "fevd_horizon": 5, "predictability_horizons": [1],
                   "episodes": [{"name": .., "start_year": .., "end_year": ..}]},
      "output_dir": "out"
    }

Relative paths are resolved against the directory of the config file.
The estimation hash covers ``data``, ``simulate``, ``model``, ``priors`` and
``sampler``; it is stored in the draw-store manifest so analysis can refuse
draws that came from a different estimation setup.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .drawstore import config_hash
from .sampler import SamplerConfig

SCHEMA_VERSION = 1

DEFAULT_PRIORS = {
    "hyperq_factor": 1e-4,
    "s_factor": 1e-3,
    "a0_cov_factor": 10.0,
    "s_dof": None,
    "g_shape": 0.5,
    "g_scale": 5e-5,
    "v0": 20.0,
    "v_dof": 2.0,
}
DEFAULT_IDENTIFICATION = {
    "scheme": "maxshare",
    "target": 0,
    "horizon": 1,
    "sign_csv": None,
    "roles": None,
    "sign_horizon": 0,
    "max_tries": 1000,
    "seed": 0,
}
DEFAULT_ANALYSIS = {
    "irf_horizon": 5,
    "fevd_horizon": 5,
    "predictability_horizons": [1],
    "episodes": [],
}
DEFAULT_DATA = {
    "path": None,
    "year_column": "year",
    "columns": None,
    "splice_plan": [],
    "variables": [],
    "start_year": None,
    "end_year": None,
}
DEFAULT_MODEL = {"lags": 2, "training_len": 50}
ESTIMATION_SECTIONS = ("data", "simulate", "model", "priors", "sampler")


class ConfigError(ValueError):
    pass


def _merge(defaults: dict, given: dict | None, section: str) -> dict:
    given = dict(given or {})
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


@dataclass
class RunConfig:
    data: dict
    simulate: dict | None
    model: dict
    priors: dict
    sampler: dict
    identification: dict
    analysis: dict
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        known = {"data", "simulate", "model", "priors", "sampler", "identification", "analysis", "output_dir"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {unknown}")
        simulate = d.get("simulate")
        data = _merge(DEFAULT_DATA, d.get("data"), "data")
        if simulate is None and not data["path"]:
            raise ConfigError("config needs data.path or a simulate section")
        sampler = SamplerConfig.from_dict(d.get("sampler") or {}).to_dict()
        cfg = cls(
            data=data,
            simulate=copy.deepcopy(simulate),
            model=_merge(DEFAULT_MODEL, d.get("model"), "model"),
            priors=_merge(DEFAULT_PRIORS, d.get("priors"), "priors"),
            sampler=sampler,
            identification=_merge(DEFAULT_IDENTIFICATION, d.get("identification"), "identification"),
            analysis=_merge(DEFAULT_ANALYSIS, d.get("analysis"), "analysis"),
            output_dir=str(d.get("output_dir", "out")),
            base_dir=Path(base_dir),
        )
        if cfg.identification["scheme"] not in ("maxshare", "sign", "cholesky"):
            raise ConfigError(f"unknown identification scheme {cfg.identification['scheme']!r}")
        if cfg.model["lags"] < 1 or cfg.model["training_len"] < cfg.model["lags"]:
            raise ConfigError("model: need lags >= 1 and training_len >= lags")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "data": copy.deepcopy(self.data),
            "simulate": copy.deepcopy(self.simulate),
            "model": dict(self.model),
            "priors": dict(self.priors),
            "sampler": dict(self.sampler),
            "identification": dict(self.identification),
            "analysis": copy.deepcopy(self.analysis),
            "output_dir": self.output_dir,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        d = self.to_dict()
        d["sampler"]["seed"] = int(seed)
        return RunConfig.from_dict(d, self.base_dir)

    def estimation_hash(self) -> str:
        d = self.to_dict()
        return config_hash({k: d[k] for k in ESTIMATION_SECTIONS})

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_path(self) -> Path:
        return self.resolve(self.output_dir)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig.from_dict(self.sampler)
