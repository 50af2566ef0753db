"""Synthetic Blob / HDGM samplers and a delimited-text table loader."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOB_VARIANCE = 0.03


class TableParseError(ValueError):
    pass


def blob_deltas() -> np.ndarray:
    """Off-diagonal covariance of the nine Q modes, i = 1..9."""
    out = np.zeros(9)
    for i in range(1, 10):
        if i < 5:
            out[i - 1] = -0.02 - 0.002 * (i - 1)
        elif i > 5:
            out[i - 1] = 0.02 + 0.002 * (i - 6)
    return out


@dataclass(frozen=True)
class BlobSpec:
    """Nine modes on the {0,1,2}^2 grid in row-major order: mode i sits at
    (floor((i-1)/3), (i-1) mod 3)."""

    variance: float = BLOB_VARIANCE
    deltas: tuple = tuple(blob_deltas())
    centers: np.ndarray = field(init=False, repr=False)
    chol_p: np.ndarray = field(init=False, repr=False)
    chol_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        centers = np.array([[i, j] for i in range(3) for j in range(3)], float)
        if len(self.deltas) != 9:
            raise ValueError("need nine mode deltas")
        chol_q = []
        for dlt in self.deltas:
            if abs(dlt) >= self.variance:
                raise ValueError(f"|delta| = {abs(dlt)} makes the covariance indefinite")
            cov = np.array([[self.variance, dlt], [dlt, self.variance]])
            chol_q.append(np.linalg.cholesky(cov))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "chol_p", np.sqrt(self.variance) * np.eye(2))
        object.__setattr__(self, "chol_q", np.array(chol_q))


@dataclass(frozen=True)
class HdgmSpec:
    d: int = 10
    shift: float = 0.5
    deltas: tuple = (0.5, -0.5)
    chol_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("HDGM needs d >= 2")
        blocks = []
        for dlt in self.deltas:
            if abs(dlt) >= 1:
                raise ValueError("|delta| must be < 1")
            blocks.append(np.linalg.cholesky(np.array([[1.0, dlt], [dlt, 1.0]])))
        object.__setattr__(self, "chol_q", np.array(blocks))

    @property
    def means(self) -> np.ndarray:
        return np.stack([np.zeros(self.d), self.shift * np.ones(self.d)])


def _check_which(which):
    if which not in ("P", "Q"):
        raise ValueError("which must be 'P' or 'Q'")


def sample_blob(spec: BlobSpec, which: str, n: int, rng: np.random.Generator,
                return_modes: bool = False):
    _check_which(which)
    modes = rng.integers(0, 9, size=n)
    eps = rng.standard_normal((n, 2))
    if which == "P":
        noise = eps @ spec.chol_p.T
    else:
        noise = np.einsum("nij,nj->ni", spec.chol_q[modes], eps)
    x = spec.centers[modes] + noise
    return (x, modes) if return_modes else x


def sample_hdgm(spec: HdgmSpec, which: str, n: int, rng: np.random.Generator,
                return_modes: bool = False):
    _check_which(which)
    modes = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, spec.d))
    if which == "Q":
        x[:, :2] = np.einsum("nij,nj->ni", spec.chol_q[modes], x[:, :2])
    x += spec.means[modes]
    return (x, modes) if return_modes else x


def load_table(path, columns=None, normalize: bool = False, delimiter: str | None = None) -> np.ndarray:
    """Read a numeric comma- or whitespace-delimited file.

    ``columns`` selects column indices; ``normalize`` maps every column
    affinely onto [-1, 1] (constant columns map to 0). Lines starting with
    ``#`` and blank lines are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            sep = delimiter or ("," if "," in text else None)
            cells = next(csv.reader([text], delimiter=sep)) if sep else text.split()
            try:
                vals = [float(c) for c in cells]
            except ValueError as exc:
                raise TableParseError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise TableParseError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise TableParseError(f"{path}: no data rows")
    x = np.array(rows, float)
    if columns is not None:
        cols = list(columns)
        bad = [c for c in cols if not -x.shape[1] <= c < x.shape[1]]
        if bad:
            raise TableParseError(f"{path}: column(s) {bad} out of range for width {x.shape[1]}")
        x = x[:, cols]
    if normalize:
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = np.where(hi > lo, 2.0 * (x - lo) / span - 1.0, 0.0)
    return x


class PairSampler:
    """Draws (S_P, S_Q) pairs of equal size from a named distribution pair.

    ``null=True`` draws both sets from P (Type-I mode).
    """

    def __init__(self, draw, null: bool = False, draw_pair=None, rows_per_unit: int = 1):
        self._draw = draw
        self._draw_pair = draw_pair
        self.null = null
        # sizes passed to __call__ are multiplied by this (9 = "n per blob mode")
        self.rows_per_unit = rows_per_unit

    def __call__(self, n: int, rng: np.random.Generator):
        n = n * self.rows_per_unit
        if self._draw_pair is not None:
            return self._draw_pair(n, rng)
        sp = self._draw("P", n, rng)
        sq = self._draw("P" if self.null else "Q", n, rng)
        return sp, sq


def blob_sampler(spec: BlobSpec | None = None, null: bool = False, per_mode: bool = False) -> PairSampler:
    """``per_mode=True`` reads the requested size as samples per mode, so
    ``n`` yields ``9 n`` rows (the usual Blob benchmark convention)."""
    spec = spec or BlobSpec()
    return PairSampler(lambda which, n, rng: sample_blob(spec, which, n, rng), null,
                       rows_per_unit=len(spec.centers) if per_mode else 1)


def hdgm_sampler(spec: HdgmSpec | None = None, null: bool = False) -> PairSampler:
    spec = spec or HdgmSpec()
    return PairSampler(lambda which, n, rng: sample_hdgm(spec, which, n, rng), null)


def table_sampler(p_rows: np.ndarray, q_rows: np.ndarray, null: bool = False) -> PairSampler:
    """Subsample rows without replacement from two pools (e.g. Higgs
    background vs signal)."""

    def draw(which, n, rng):
        pool = p_rows if which == "P" else q_rows
        return pool[rng.choice(pool.shape[0], size=n, replace=False)]

    if not null:
        return PairSampler(draw)

    def draw_null(n, rng):
        # both halves from P, disjoint rows
        idx = rng.choice(p_rows.shape[0], size=2 * n, replace=False)
        return p_rows[idx[:n]], p_rows[idx[n:]]

    return PairSampler(draw, null=True, draw_pair=draw_null)
