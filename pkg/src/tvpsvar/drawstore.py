"""Posterior draw storage: in memory, or as a directory of flat CSV files.

Directory layout::

    manifest.json   model dimensions, seed, counts, config hash, completion flag
    phi.csv         one row per draw, T*k columns (date-major, coefficient-minor)
    alpha.csv       T*n(n-1)/2 columns
    lnsig.csv       T*n columns
    lambda.csv      T*n columns
    hyper.csv       HyperQ (k*k, row-major), S blocks (row-major, in order), g (n), v (n)
    panel.csv       the full panel the chain was run on (training rows included)
    priors.json     the PriorSet

Numbers are written with 17 significant digits so a read gives back the
exact doubles that were written.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .varutil import n_alpha

MANIFEST = "manifest.json"
BLOCKS = ("phi", "alpha", "lnsig", "lambda", "hyper")


class DrawStoreError(RuntimeError):
    pass


@dataclass
class VarState:
    """One path of all time-varying quantities, first axis = date."""

    phi: np.ndarray
    alpha: np.ndarray
    lnsig: np.ndarray
    lam: np.ndarray

    def copy(self) -> "VarState":
        return VarState(self.phi.copy(), self.alpha.copy(), self.lnsig.copy(), self.lam.copy())

    @property
    def T(self) -> int:
        return self.phi.shape[0]


@dataclass
class Hyperparams:
    """Innovation covariances and Student-t degrees of freedom."""

    hyperq: np.ndarray
    s_blocks: list[np.ndarray]
    g: np.ndarray
    v: np.ndarray

    def copy(self) -> "Hyperparams":
        return Hyperparams(self.hyperq.copy(), [s.copy() for s in self.s_blocks], self.g.copy(), self.v.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.hyperq.ravel()] + [s.ravel() for s in self.s_blocks] + [self.g, self.v])

    @classmethod
    def from_flat(cls, x: np.ndarray, n: int, k: int) -> "Hyperparams":
        pos = k * k
        hq = x[:pos].reshape(k, k)
        blocks = []
        for i in range(1, n):
            blocks.append(x[pos : pos + i * i].reshape(i, i))
            pos += i * i
        g = x[pos : pos + n]
        v = x[pos + n : pos + 2 * n]
        return cls(hq.copy(), [b.copy() for b in blocks], g.copy(), v.copy())


def config_hash(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _fmt_row(x: np.ndarray) -> str:
    return ",".join(format(float(v), ".17g") for v in np.ravel(x)) + "\n"


def _parse_row(line: str) -> np.ndarray:
    line = line.strip()
    if not line:
        return np.zeros(0)
    return np.array(line.split(","), dtype=float)


@dataclass
class DrawStore:
    """In-memory draw store: a manifest plus ``(VarState, Hyperparams)`` records."""

    manifest: dict
    records: list[tuple[VarState, Hyperparams]] = field(default_factory=list)

    def append(self, state: VarState, hyper: Hyperparams) -> None:
        self.records.append((state.copy(), hyper.copy()))
        self.manifest["records"] = len(self.records)

    def finish(self, complete: bool = True, error: str | None = None, extra: dict | None = None) -> None:
        self.manifest["complete"] = bool(complete)
        self.manifest["error"] = error
        if extra:
            self.manifest.update(extra)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[tuple[VarState, Hyperparams]]:
        return iter(self.records)

    def stack(self, name: str) -> np.ndarray:
        """All draws of one state block, ``(n_records, T, ...)``."""
        attr = {"lambda": "lam"}.get(name, name)
        return np.stack([getattr(s, attr) for s, _ in self.records])

    def save(self, path: str | Path) -> None:
        writer = DrawStoreWriter(path, dict(self.manifest))
        for s, h in self.records:
            writer.append(s, h)
        writer.finish(self.manifest.get("complete", True), self.manifest.get("error"))


class DrawStoreWriter:
    """Streams records to a draw-store directory; the manifest is rewritten on ``finish``."""

    def __init__(self, path: str | Path, manifest: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = dict(manifest)
        self.manifest["records"] = 0
        self.manifest["complete"] = False
        self.manifest.setdefault("error", None)
        self._files = {b: open(self.path / f"{b}.csv", "w", encoding="ascii") for b in BLOCKS}
        self._write_manifest()

    def _write_manifest(self) -> None:
        text = json.dumps(self.manifest, indent=1, sort_keys=True) + "\n"
        (self.path / MANIFEST).write_text(text, encoding="utf-8")

    def append(self, state: VarState, hyper: Hyperparams) -> None:
        self._files["phi"].write(_fmt_row(state.phi))
        self._files["alpha"].write(_fmt_row(state.alpha))
        self._files["lnsig"].write(_fmt_row(state.lnsig))
        self._files["lambda"].write(_fmt_row(state.lam))
        self._files["hyper"].write(_fmt_row(hyper.flat()))
        self.manifest["records"] += 1

    def finish(self, complete: bool = True, error: str | None = None, extra: dict | None = None) -> None:
        for fh in self._files.values():
            fh.close()
        self.manifest["complete"] = bool(complete)
        self.manifest["error"] = error
        if extra:
            self.manifest.update(extra)
        self._write_manifest()


def read_manifest(path: str | Path) -> dict:
    p = Path(path) / MANIFEST
    if not p.is_file():
        raise DrawStoreError(f"no draw store manifest at {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def iter_records(path: str | Path) -> Iterator[tuple[VarState, Hyperparams]]:
    """Stream ``(VarState, Hyperparams)`` records from a draw-store directory."""
    path = Path(path)
    man = read_manifest(path)
    T, n, k = man["T"], man["n"], man["k"]
    na = n_alpha(n)
    files = [open(path / f"{b}.csv", encoding="ascii") for b in BLOCKS]
    try:
        for lines in zip(*files):
            phi, alpha, lnsig, lam, hyper = (_parse_row(l) for l in lines)
            yield (
                VarState(phi.reshape(T, k), alpha.reshape(T, na), lnsig.reshape(T, n), lam.reshape(T, n)),
                Hyperparams.from_flat(hyper, n, k),
            )
    finally:
        for fh in files:
            fh.close()


def load(path: str | Path) -> DrawStore:
    store = DrawStore(read_manifest(path))
    store.records = list(iter_records(path))
    return store
