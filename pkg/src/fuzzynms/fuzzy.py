"""Mamdani fuzzy classifier mapping (density, volume) to a box category.

Rules fire with ``min`` over the two antecedents, clip their output set with
``min``, and the clipped sets are aggregated by pointwise *sum* before a
discrete centroid over the output domain. The crisp value is decoded to the
output set with the largest membership.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import ClusterAssignment
from .geometry import Frame, volumes

DEGENERATE_MASS = 1e-12
DEFAULT_RESOLUTION = 1001


class Category(str, enum.Enum):
    LD = "LD"
    SVHD = "SVHD"
    LVHD = "LVHD"


# output fuzzy set -> box category
OUTPUT_CATEGORY = {"S": Category.LD, "M": Category.SVHD, "B": Category.LVHD}


@dataclass(frozen=True)
class TriangularMF:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError(f"membership parameters must be finite: {self}")
        if not self.a <= self.b <= self.c:
            raise ValueError(f"membership parameters must satisfy a <= b <= c, got {self}")

    def __call__(self, x):
        return mf_eval(self, x)

    @property
    def peak(self) -> float:
        return self.b


def mf_eval(mf: TriangularMF, x):
    """Triangle membership; a flat side evaluates to 1 at the shared point."""
    x = np.asarray(x, dtype=float)
    a, b, c = mf.a, mf.b, mf.c
    with np.errstate(divide="ignore", invalid="ignore"):
        rise = (x - a) / (b - a) if b > a else np.ones_like(x)
        fall = (c - x) / (c - b) if c > b else np.ones_like(x)
    mu = np.where(x <= b, rise, fall)
    mu = np.where((x < a) | (x > c), 0.0, mu)
    # feet are zero unless a side is flat there
    if b > a:
        mu = np.where(x == a, 0.0, mu)
    if c > b:
        mu = np.where(x == c, 0.0, mu)
    mu = np.clip(mu, 0.0, 1.0)
    return float(mu) if mu.ndim == 0 else mu


@dataclass(frozen=True)
class FuzzyVariable:
    name: str
    lo: float
    hi: float
    sets: tuple  # ((set_name, TriangularMF), ...)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: domain must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        names = [n for n, _ in self.sets]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate set names in {names}")
        if not names:
            raise ValueError(f"{self.name}: at least one fuzzy set required")
        for n, mf in self.sets:
            if mf.a < self.lo or mf.c > self.hi:
                raise ValueError(
                    f"{self.name}.{n}: support [{mf.a}, {mf.c}] outside domain [{self.lo}, {self.hi}]"
                )

    @classmethod
    def from_table(cls, name: str, domain: Sequence[float], sets: Mapping[str, Sequence[float]]):
        return cls(name, float(domain[0]), float(domain[1]),
                   tuple((k, TriangularMF(*map(float, v))) for k, v in sets.items()))

    @property
    def set_names(self) -> list:
        return [n for n, _ in self.sets]

    def mf(self, set_name: str) -> TriangularMF:
        for n, mf in self.sets:
            if n == set_name:
                return mf
        raise KeyError(f"{self.name} has no set {set_name!r}")

    def fuzzify(self, x) -> np.ndarray:
        """Memberships ``(..., n_sets)`` after clamping ``x`` to the domain.

        A value at or past a domain bound gets full membership in every set
        whose support reaches that bound, so clamped inputs keep the
        boundary set instead of falling off its foot.
        """
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.lo, self.hi)
        cols = []
        for _, mf in self.sets:
            mu = np.asarray(mf_eval(mf, xc), dtype=float)
            if mf.c >= self.hi:
                mu = np.where(xc >= self.hi, 1.0, mu)
            if mf.a <= self.lo:
                mu = np.where(xc <= self.lo, 1.0, mu)
            cols.append(mu)
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class RuleBase:
    rules: tuple  # ((density_set, volume_set, output_set), ...)

    def validate(self, density: FuzzyVariable, volume: FuzzyVariable, output: FuzzyVariable):
        seen = {}
        for d, v, o in self.rules:
            for var, name in ((density, d), (volume, v), (output, o)):
                if name not in var.set_names:
                    raise ValueError(f"rule ({d}, {v}) -> {o}: unknown {var.name} set {name!r}")
            if (d, v) in seen:
                raise ValueError(f"duplicate rule antecedent ({d}, {v})")
            seen[(d, v)] = o
        missing = [(d, v) for d in density.set_names for v in volume.set_names if (d, v) not in seen]
        if missing:
            raise ValueError(
                f"incomplete rule table: {len(self.rules)} rules, missing antecedents {missing}"
            )

    def as_dict(self) -> dict:
        return {(d, v): o for d, v, o in self.rules}


@dataclass(frozen=True)
class BoxCategory:
    category: Category
    value: float  # crisp centroid v_O
    output_set: str


# Default membership parameters and rule table.
DENSITY_SETS = {
    "ZE": (0.0, 0.0, 0.1),
    "PS": (0.1, 0.2, 0.5),
    "PM": (0.4, 0.8, 0.9),
    "PB": (0.9, 1.0, 1.0),
}
VOLUME_SETS = {
    "ZE": (0.0, 0.0, 3.0),
    "PS": (2.0, 5.0, 10.0),
    "PM": (9.0, 12.0, 20.0),
    "PB": (17.0, 20.0, 35.0),
}
CLASS_SETS = {
    "S": (0.0, 0.25, 0.35),
    "M": (0.34, 0.5, 0.65),
    "B": (0.64, 0.85, 1.0),
}
DENSITY_DOMAIN = (0.0, 1.0)
VOLUME_DOMAIN = (0.0, 35.0)
CLASS_DOMAIN = (0.0, 1.0)

# Listed as IF density AND volume THEN class, in the published rule order.
DEFAULT_RULES = (
    ("ZE", "ZE", "S"),
    ("ZE", "PM", "S"),
    ("ZE", "PS", "S"),
    ("ZE", "PB", "S"),
    ("PS", "ZE", "S"),
    ("PS", "PM", "M"),
    ("PS", "PS", "B"),
    ("PS", "PB", "B"),
    ("PM", "ZE", "M"),
    ("PM", "PM", "M"),
    ("PM", "PS", "B"),
    ("PM", "PB", "B"),
    ("PB", "ZE", "M"),
    ("PB", "PM", "B"),
    ("PB", "PS", "B"),
    ("PB", "PB", "B"),
)


class FuzzySystem:
    """Immutable two-input Mamdani system; all methods are pure."""

    def __init__(self, density: FuzzyVariable, volume: FuzzyVariable, output: FuzzyVariable,
                 rules: RuleBase, resolution: int = DEFAULT_RESOLUTION):
        if resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {resolution}")
        rules.validate(density, volume, output)
        unknown = [n for n in output.set_names if n not in OUTPUT_CATEGORY]
        if unknown:
            raise ValueError(f"output sets {unknown} have no category; expected {list(OUTPUT_CATEGORY)}")
        self.density = density
        self.volume = volume
        self.output = output
        self.rules = rules
        self.resolution = int(resolution)

        d_idx = {n: i for i, n in enumerate(density.set_names)}
        v_idx = {n: i for i, n in enumerate(volume.set_names)}
        o_idx = {n: i for i, n in enumerate(output.set_names)}
        self._rule_d = np.array([d_idx[d] for d, _, _ in rules.rules])
        self._rule_v = np.array([v_idx[v] for _, v, _ in rules.rules])
        self._rule_o = np.array([o_idx[o] for _, _, o in rules.rules])

        self.grid = np.linspace(output.lo, output.hi, self.resolution)
        self._out_mu = np.stack([np.asarray(mf_eval(mf, self.grid)) for _, mf in output.sets])
        # Per output set, memberships sorted ascending with prefix sums so
        # sum_j min(w, mu_j) and sum_j v_j * min(w, mu_j) are O(log n).
        self._tables = []
        total_v = float(self.grid.sum())
        for mu in self._out_mu:
            order = np.argsort(mu, kind="stable")
            m = mu[order]
            v = self.grid[order]
            s0 = np.concatenate([[0.0], np.cumsum(m)])
            s1 = np.concatenate([[0.0], np.cumsum(v * m)])
            cv = np.concatenate([[0.0], np.cumsum(v)])
            self._tables.append((m, s0, s1, cv, total_v))
        self._fallback = 0.5 * (output.lo + output.hi)

    @classmethod
    def default(cls, resolution: int = DEFAULT_RESOLUTION) -> "FuzzySystem":
        return cls(
            FuzzyVariable.from_table("density", DENSITY_DOMAIN, DENSITY_SETS),
            FuzzyVariable.from_table("volume", VOLUME_DOMAIN, VOLUME_SETS),
            FuzzyVariable.from_table("class", CLASS_DOMAIN, CLASS_SETS),
            RuleBase(DEFAULT_RULES),
            resolution,
        )

    def firing_strengths(self, density, volume) -> np.ndarray:
        """Rule strengths ``(..., n_rules)``; non-finite inputs raise."""
        density = np.asarray(density, dtype=float)
        volume = np.asarray(volume, dtype=float)
        if not (np.all(np.isfinite(density)) and np.all(np.isfinite(volume))):
            raise ValueError("fuzzy inputs must be finite")
        mu_d = self.density.fuzzify(density)
        mu_v = self.volume.fuzzify(volume)
        return np.minimum(mu_d[..., self._rule_d], mu_v[..., self._rule_v])

    def aggregate(self, density: float, volume: float) -> np.ndarray:
        """Summed clipped output sets sampled on :attr:`grid`."""
        w = self.firing_strengths(density, volume)
        agg = np.zeros_like(self.grid)
        for r, strength in enumerate(w):
            if strength > 0:
                agg += np.minimum(strength, self._out_mu[self._rule_o[r]])
        return agg

    def infer_detail(self, density: float, volume: float):
        """``(v_O, degenerate)`` evaluated directly on the sampled output domain."""
        agg = self.aggregate(density, volume)
        mass = agg.sum()
        if mass < DEGENERATE_MASS:
            return self._fallback, True
        return float((self.grid * agg).sum() / mass), False

    def infer(self, density: float, volume: float) -> float:
        return self.infer_detail(density, volume)[0]

    def infer_many(self, density, volume):
        """Vectorised :meth:`infer_detail`; returns ``(v_O, degenerate)`` arrays.

        Evaluation is memoised over distinct (density, volume) pairs, which
        repeat heavily within a frame since cluster members share a density.
        """
        density = np.asarray(density, dtype=float).ravel()
        volume = np.asarray(volume, dtype=float).ravel()
        if density.shape != volume.shape:
            raise ValueError("density and volume must have the same length")
        if density.size == 0:
            return np.zeros(0), np.zeros(0, dtype=bool)
        if not (np.all(np.isfinite(density)) and np.all(np.isfinite(volume))):
            raise ValueError("fuzzy inputs must be finite")
        # complex numbers sort lexicographically, so this is a fast 2-column unique
        uniq, inverse = np.unique(density + 1j * volume, return_inverse=True)
        inverse = inverse.ravel()
        w = self.firing_strengths(uniq.real, uniq.imag)
        num = np.zeros(len(uniq))
        den = np.zeros(len(uniq))
        n_grid = self.resolution
        for k, (m, s0, s1, cv, total_v) in enumerate(self._tables):
            cols = np.nonzero(self._rule_o == k)[0]
            if cols.size == 0:
                continue
            wk = w[:, cols]
            idx = np.searchsorted(m, wk, side="left")
            den += (s0[idx] + wk * (n_grid - idx)).sum(axis=1)
            num += (s1[idx] + wk * (total_v - cv[idx])).sum(axis=1)
        degenerate = den < DEGENERATE_MASS
        with np.errstate(divide="ignore", invalid="ignore"):
            vo = np.where(degenerate, self._fallback, num / np.where(degenerate, 1.0, den))
        return vo[inverse], degenerate[inverse]

    def classify(self, v_o: float) -> BoxCategory:
        return classify(v_o, self.output)

    def classify_many(self, v_o) -> list:
        v_o = np.asarray(v_o, dtype=float)
        mu = np.stack([np.asarray(mf_eval(mf, v_o), dtype=float).reshape(-1) for _, mf in self.output.sets], axis=1)
        peaks = np.array([mf.b for _, mf in self.output.sets])
        dist = np.abs(v_o[:, None] - peaks[None, :])
        best = np.zeros(len(v_o), dtype=int)
        rows = np.arange(len(v_o))
        for k in range(1, len(peaks)):
            mb, db = mu[rows, best], dist[rows, best]
            better = (mu[:, k] > mb) | ((mu[:, k] == mb) & (dist[:, k] < db))
            best = np.where(better, k, best)
        names = self.output.set_names
        memo = {}
        out = []
        for k, v in zip(best.tolist(), v_o.tolist()):
            cat = memo.get((k, v))
            if cat is None:
                cat = memo[(k, v)] = BoxCategory(OUTPUT_CATEGORY[names[k]], v, names[k])
            out.append(cat)
        return out


def classify(v_o: float, class_var: FuzzyVariable) -> BoxCategory:
    """Decode a crisp value to the output set of largest membership.

    Ties go to the set whose peak is nearest, then to declaration order.
    """
    best = None
    for k, (name, mf) in enumerate(class_var.sets):
        key = (-mf_eval(mf, v_o), abs(v_o - mf.b), k)
        if best is None or key < best[0]:
            best = (key, name)
    name = best[1]
    return BoxCategory(OUTPUT_CATEGORY[name], float(v_o), name)


def infer(density: float, volume: float, system: FuzzySystem | None = None) -> float:
    return (system or FuzzySystem.default()).infer(density, volume)


@dataclass(frozen=True)
class FrameClassification:
    """Per-box fuzzy inputs and outputs for one frame."""

    volume: np.ndarray
    density: np.ndarray
    cluster_id: np.ndarray
    value: np.ndarray  # v_O
    degenerate: np.ndarray
    categories: list  # BoxCategory per box

    def category_names(self) -> list:
        return [c.category.value for c in self.categories]


def classify_boxes(frame: Frame, assignment: ClusterAssignment, system: FuzzySystem,
                   volume=None) -> FrameClassification:
    """Fuzzy category of every box; ``volume`` may be passed precomputed."""
    if len(assignment) != len(frame.boxes):
        raise ValueError(
            f"assignment has {len(assignment)} entries for {len(frame.boxes)} boxes"
        )
    vol = volumes(frame.boxes) if volume is None else np.asarray(volume, dtype=float)
    vo, degenerate = system.infer_many(assignment.density, vol)
    return FrameClassification(
        volume=vol,
        density=np.asarray(assignment.density, dtype=float),
        cluster_id=np.asarray(assignment.cluster_id),
        value=vo,
        degenerate=degenerate,
        categories=system.classify_many(vo),
    )
