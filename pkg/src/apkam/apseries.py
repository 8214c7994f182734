"""Truncated almost periodic series.

A series in x is stored as integer mode vectors k over a finite frequency
window together with complex coefficients, so that

    f(x) = sum_k f_k exp(i <k, omega> x).

The shell function F(theta) = sum_k f_k exp(i <k, theta>) lives on a torus
of dimension d = len(omega) and f(x) = F(omega x).  Series in (x, y) carry
a vector of Chebyshev coefficients in y on [y0 - s, y0 + s] for each mode.

Nonlinear operations (composition, inversion) are done by collocation at
quasi-random torus points followed by a least-squares projection onto the
retained mode set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.stats import qmc

from .errors import (
    BasisMismatch,
    DomainExceeded,
    NoCoveringSet,
    NotMonotone,
    ProjectionResidualExceeded,
    ResonantBasis,
)

K_MAX = 12
DROP_TOL = 1e-16
CHEB_DEGREE = 16
SAMPLE_FACTOR = 4
FORMAT_VERSION = 1


# ---------------------------------------------------------------- basis


@dataclass(frozen=True, eq=False)
class FrequencyBasis:
    """Frequencies omega_lam for the window lam = lo, ..., lo + d - 1."""

    lo: int
    omega: np.ndarray

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).ravel()
        if omega.size == 0:
            raise ValueError("frequency window is empty")
        if not np.all(np.isfinite(omega)) or np.any(omega == 0.0):
            raise ValueError("frequencies must be finite and nonzero")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "lo", int(self.lo))

    @classmethod
    def centered(cls, omega: Sequence[float]) -> "FrequencyBasis":
        """Window -L..L for 2L+1 frequencies, or 0..d-1 when d is even."""
        d = len(omega)
        lo = -(d // 2) if d % 2 == 1 else 0
        return cls(lo, np.asarray(omega, float))

    @property
    def d(self) -> int:
        return int(self.omega.size)

    @property
    def hi(self) -> int:
        return self.lo + self.d - 1

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(range(self.lo, self.lo + self.d))

    def position(self, index: int) -> int:
        if not self.lo <= index <= self.hi:
            raise KeyError(f"index {index} outside window [{self.lo}, {self.hi}]")
        return index - self.lo

    def scaled(self, beta: float) -> "FrequencyBasis":
        return FrequencyBasis(self.lo, self.omega / beta)

    def key(self) -> tuple:
        return (self.lo, self.omega.tobytes())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FrequencyBasis)
            and self.lo == other.lo
            and self.d == other.d
            and bool(np.array_equal(self.omega, other.omega))
        )

    def __hash__(self) -> int:
        return hash(self.key())

    def find_relation(self, kmax: int = 6, rtol: float = 1e-12) -> tuple[int, ...] | None:
        """Smallest integer vector k with <k, omega> = 0 up to rounding, or None."""
        scale = float(np.max(np.abs(self.omega)))
        for k in _l1_ball(self.d, kmax):
            if not any(k) or _first_nonzero_sign(k) < 0:
                continue
            val = math.fsum(ki * w for ki, w in zip(k, self.omega))
            if abs(val) <= rtol * scale * sum(abs(v) for v in k):
                return k
        return None

    def require_independent(self, kmax: int = 6) -> "FrequencyBasis":
        rel = self.find_relation(kmax)
        if rel is not None:
            raise ResonantBasis(f"integer relation {rel} among frequencies")
        return self


def _first_nonzero_sign(k: Sequence[int]) -> int:
    for v in k:
        if v:
            return 1 if v > 0 else -1
    return 0


def _l1_ball(npos: int, kmax: int):
    """All integer vectors of length npos with sum |k_i| <= kmax."""

    def rec(i: int, rem: int):
        if i == npos:
            yield ()
            return
        for v in range(-rem, rem + 1):
            for rest in rec(i + 1, rem - abs(v)):
                yield (v,) + rest

    yield from rec(0, kmax)


# ------------------------------------------------------------- structure


def weight(A: Iterable[int], varrho: float = 3.0) -> float:
    """[A] = 1 + sum_{i in A} log(1 + |i|)^varrho."""
    return 1.0 + math.fsum(math.log1p(abs(int(i))) ** varrho for i in A)


@dataclass(frozen=True, eq=False)
class SpatialStructure:
    """Generators of index sets, closed under unions of overlapping members."""

    generators: tuple[frozenset[int], ...]
    varrho: float = 3.0
    max_sets: int = 4096

    def __post_init__(self):
        gens = tuple(frozenset(int(i) for i in g) for g in self.generators)
        if not gens or any(len(g) == 0 for g in gens):
            raise ValueError("structure needs nonempty generator sets")
        if not self.varrho > 2:
            raise ValueError("varrho must exceed 2")
        object.__setattr__(self, "generators", gens)

    @cached_property
    def sets(self) -> tuple[frozenset[int], ...]:
        family = set(self.generators)
        changed = True
        while changed:
            changed = False
            items = list(family)
            for i, a in enumerate(items):
                for b in items[i + 1:]:
                    if a & b:
                        u = a | b
                        if u not in family:
                            family.add(u)
                            changed = True
                            if len(family) > self.max_sets:
                                raise ValueError("structure closure too large")
        return tuple(sorted(family, key=lambda s: (len(s), sorted(s))))

    def weight(self, A: Iterable[int]) -> float:
        return weight(A, self.varrho)

    @cached_property
    def _ranked(self) -> list[tuple[float, int, tuple[int, ...], frozenset[int]]]:
        return sorted((self.weight(A), len(A), tuple(sorted(A)), A) for A in self.sets)

    def cover(self, support: Iterable[int]) -> frozenset[int]:
        """Minimal-weight set containing the support (ties: size, then lexicographic)."""
        sup = frozenset(support)
        for _, _, _, A in self._ranked:
            if sup <= A:
                return A
        raise NoCoveringSet(f"no structure set covers support {sorted(sup)}")

    def support_weight(self, k: Mapping[int, int] | Iterable[int]) -> float:
        """[[k]] for a sparse multi-index {index: value} or a bare support set."""
        if isinstance(k, Mapping):
            sup = [i for i, v in k.items() if v]
        else:
            sup = list(k)
        return self.weight(self.cover(sup))

    def key(self) -> tuple:
        return (tuple(sorted(tuple(sorted(g)) for g in self.generators)), float(self.varrho))

    def __eq__(self, other) -> bool:
        return isinstance(other, SpatialStructure) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


class _CoverTable:
    """Support bitmask over window positions -> [[k]] (or None if uncovered)."""

    def __init__(self, basis: FrequencyBasis, structure: SpatialStructure):
        self.entries = []
        for w, _, _, A in structure._ranked:
            mask = 0
            for i in A:
                if basis.lo <= i <= basis.hi:
                    mask |= 1 << (i - basis.lo)
            self.entries.append((w, mask))
        self.cache: dict[int, float | None] = {}
        self.bits = np.array([1 << j for j in range(basis.d)], dtype=object)

    def lookup(self, mask: int) -> float | None:
        if mask in self.cache:
            return self.cache[mask]
        found = None
        for w, m in self.entries:
            if mask & ~m == 0:
                found = w
                break
        self.cache[mask] = found
        return found

    def weights(self, modes: np.ndarray) -> np.ndarray:
        """[[k]] per row; nan where uncovered."""
        if modes.shape[0] == 0:
            return np.zeros(0)
        nz = modes != 0
        masks = (nz.astype(np.int64) * (1 << np.arange(modes.shape[1], dtype=np.int64))).sum(axis=1)
        out = np.empty(modes.shape[0])
        for i, m in enumerate(masks.tolist()):
            w = self.lookup(m)
            out[i] = np.nan if w is None else w
        return out


_COVER_TABLES: dict[tuple, _CoverTable] = {}


def cover_table(basis: FrequencyBasis, structure: SpatialStructure) -> _CoverTable:
    key = (basis.lo, basis.d, structure.key())
    tab = _COVER_TABLES.get(key)
    if tab is None:
        tab = _COVER_TABLES[key] = _CoverTable(basis, structure)
    return tab


@dataclass(frozen=True)
class StripParams:
    """Strip half-width r, y-radius s and weight exponent m."""

    r: float
    s: float
    m: float

    def __post_init__(self):
        if not (self.r > 0 and self.s > 0 and self.m > 0):
            raise ValueError("strip parameters must be positive")


# ---------------------------------------------------------------- modes


def sort_modes(modes: np.ndarray) -> np.ndarray:
    """Order of rows by (|k|, lexicographic)."""
    if modes.shape[0] == 0:
        return np.zeros(0, dtype=int)
    keys = [modes[:, j] for j in range(modes.shape[1] - 1, -1, -1)]
    keys.append(np.abs(modes).sum(axis=1))
    return np.lexsort(keys)


_MODE_CACHE: dict[tuple, np.ndarray] = {}


def retained_modes(basis: FrequencyBasis, structure: SpatialStructure, kmax: int = K_MAX) -> np.ndarray:
    """All covered k with |k| <= kmax, closed under negation, canonically sorted."""
    key = (basis.lo, basis.d, structure.key(), int(kmax))
    hit = _MODE_CACHE.get(key)
    if hit is not None:
        return hit
    found: set[tuple[int, ...]] = set()
    for A in structure.sets:
        pos = [i - basis.lo for i in sorted(A) if basis.lo <= i <= basis.hi]
        for vals in _l1_ball(len(pos), kmax):
            k = [0] * basis.d
            for p, v in zip(pos, vals):
                k[p] = v
            found.add(tuple(k))
    modes = np.array(sorted(found), dtype=np.int64).reshape(-1, basis.d)
    modes = modes[sort_modes(modes)]
    modes.setflags(write=False)
    _MODE_CACHE[key] = modes
    return modes


def _negation_index(modes: np.ndarray) -> np.ndarray:
    lookup = {tuple(r): i for i, r in enumerate(modes.tolist())}
    return np.array([lookup.get(tuple(-v for v in r), -1) for r in modes.tolist()], dtype=np.int64)


def _merge_modes(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Union of two mode arrays plus row maps of each input into the union."""
    if a.shape == b.shape and np.array_equal(a, b):
        idx = np.arange(a.shape[0])
        return a, idx, idx
    lookup: dict[tuple, int] = {}
    rows = []
    for r in a.tolist() + b.tolist():
        t = tuple(r)
        if t not in lookup:
            lookup[t] = len(rows)
            rows.append(t)
    d = a.shape[1] if a.ndim == 2 and a.shape[1] else b.shape[1]
    union = np.array(rows, dtype=np.int64).reshape(-1, d)
    order = sort_modes(union)
    union = union[order]
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    ia = rank[[lookup[tuple(r)] for r in a.tolist()]] if a.shape[0] else np.zeros(0, int)
    ib = rank[[lookup[tuple(r)] for r in b.tolist()]] if b.shape[0] else np.zeros(0, int)
    return union, np.asarray(ia, int), np.asarray(ib, int)


def k_to_dict(basis: FrequencyBasis, k: Sequence[int]) -> dict[int, int]:
    """Sparse {index: value} form of a dense mode row."""
    return {basis.lo + j: int(v) for j, v in enumerate(k) if v}


def k_from_dict(basis: FrequencyBasis, k: Mapping[int, int]) -> tuple[int, ...]:
    row = [0] * basis.d
    for i, v in k.items():
        row[basis.position(int(i))] = int(v)
    return tuple(row)


# ----------------------------------------------------------- chebyshev


def cheb_nodes(n: int) -> np.ndarray:
    """First-kind Chebyshev points on [-1, 1]."""
    j = np.arange(n)
    return np.cos(np.pi * (j + 0.5) / n)


_CHEB_INV: dict[int, np.ndarray] = {}


def cheb_values_to_coeffs(n: int) -> np.ndarray:
    """Matrix mapping values at cheb_nodes(n) to Chebyshev coefficients."""
    mat = _CHEB_INV.get(n)
    if mat is None:
        mat = np.linalg.inv(C.chebvander(cheb_nodes(n), n - 1))
        _CHEB_INV[n] = mat
    return mat


# ------------------------------------------------------------- series


def _rowsum(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], int(np.prod(a.shape[1:], dtype=int))).sum(axis=1)


def _as_modes(modes, d: int) -> np.ndarray:
    arr = np.asarray(modes, dtype=np.int64)
    return arr.reshape(-1, d)


@dataclass(frozen=True, eq=False)
class _Series:
    basis: FrequencyBasis
    structure: SpatialStructure
    modes: np.ndarray
    coeffs: np.ndarray
    defect: float = 0.0

    def __post_init__(self):
        modes = _as_modes(self.modes, self.basis.d)
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape[0] != modes.shape[0]:
            raise ValueError("modes and coefficients disagree in length")
        w = cover_table(self.basis, self.structure).weights(modes)
        if np.any(np.isnan(w)):
            bad = modes[np.isnan(w)][0]
            raise NoCoveringSet(f"mode {k_to_dict(self.basis, bad)} has no covering set")
        # canonical order, small coefficients dropped into the defect
        mags = _rowsum(np.abs(coeffs))
        keep = mags >= DROP_TOL
        dropped = float(mags[~keep].sum())
        modes, coeffs, w = modes[keep], coeffs[keep], w[keep]
        order = sort_modes(modes)
        modes, coeffs, w = modes[order], coeffs[order], w[order]
        modes.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "defect", float(self.defect) + dropped)
        object.__setattr__(self, "_weights", w)

    # subclasses provide these
    def _like(self, modes, coeffs, defect=None):
        raise NotImplementedError

    def _compatible(self, other) -> None:
        if not isinstance(other, type(self)):
            raise BasisMismatch(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if self.basis != other.basis or self.structure != other.structure:
            raise BasisMismatch("series have different frequency bases or structures")

    @property
    def n_modes(self) -> int:
        return int(self.modes.shape[0])

    @property
    def weights(self) -> np.ndarray:
        """[[k]] for each stored mode."""
        return self._weights

    @cached_property
    def frequencies(self) -> np.ndarray:
        """<k, omega> per stored mode."""
        return self.modes.astype(float) @ self.basis.omega

    @cached_property
    def _index(self) -> dict[tuple, int]:
        return {tuple(r): i for i, r in enumerate(self.modes.tolist())}

    def coefficient(self, k: Sequence[int] | Mapping[int, int]):
        if isinstance(k, Mapping):
            k = k_from_dict(self.basis, k)
        i = self._index.get(tuple(int(v) for v in k))
        if i is None:
            return np.zeros(self.coeffs.shape[1:], complex) if self.coeffs.ndim > 1 else 0j
        return self.coeffs[i]

    def mean(self):
        return self.coefficient((0,) * self.basis.d)

    def is_zero(self) -> bool:
        return self.n_modes == 0

    # linear ops
    def __add__(self, other):
        self._compatible(other)
        modes, ia, ib = _merge_modes(self.modes, other.modes)
        out = np.zeros((modes.shape[0],) + self._cshape(other), complex)
        np.add.at(out, ia, self._pad(other)[0])
        np.add.at(out, ib, self._pad(other)[1])
        return self._like(modes, out, self.defect + other.defect)

    def __neg__(self):
        return self._like(self.modes, -self.coeffs, self.defect)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c: float):
        return self._like(self.modes, self.coeffs * c, abs(c) * self.defect)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.scale(float(other))
        return self.mul(other)

    __rmul__ = __mul__

    def _cshape(self, other) -> tuple:
        return self.coeffs.shape[1:]

    def _pad(self, other):
        return self.coeffs, other.coeffs

    def shift(self, dx: float):
        """x -> f(x + dx)."""
        ph = np.exp(1j * self.frequencies * dx)
        return self._like(self.modes, self.coeffs * self._bcast(ph), self.defect)

    def derivative_x(self):
        return self._like(self.modes, self.coeffs * self._bcast(1j * self.frequencies), self.defect)

    def reflect(self, alpha: float):
        """x -> f(-x - alpha); coefficient at k becomes f_{-k} exp(i<k,w>alpha)."""
        modes = -self.modes
        ph = np.exp(1j * (modes.astype(float) @ self.basis.omega) * alpha)
        return self._like(modes, self.coeffs * self._bcast(ph), self.defect)

    def parity_decompose(self, alpha: float):
        """(sym, anti) with sym(-x-alpha) = sym(x) and anti(-x-alpha) = -anti(x)."""
        r = self.reflect(alpha)
        return (self + r).scale(0.5), (self - r).scale(0.5)

    def enforce_reality(self):
        """Average each coefficient with the conjugate of its mirror mode."""
        modes, ia, ib = _merge_modes(self.modes, -self.modes)
        out = np.zeros((modes.shape[0],) + self.coeffs.shape[1:], complex)
        np.add.at(out, ia, self.coeffs)
        np.add.at(out, ib, np.conj(self.coeffs))
        return self._like(modes, 0.5 * out, self.defect)

    def select(self, mask: np.ndarray):
        """Keep the modes flagged by a boolean mask (no defect accounting)."""
        return self._like(self.modes[mask], self.coeffs[mask], self.defect)

    def truncate(self, kmax: int):
        keep = np.abs(self.modes).sum(axis=1) <= kmax
        lost = float(self._majorants()[~keep].sum())
        return self._like(self.modes[keep], self.coeffs[keep], self.defect + lost)

    def mul(self, other, kmax: int = K_MAX):
        """Product with truncation to |k| <= kmax and covered supports."""
        self._compatible(other)
        if self.n_modes == 0 or other.n_modes == 0:
            return self._like(self.modes[:0], self.coeffs[:0], self.defect + other.defect)
        ksum = (self.modes[:, None, :] + other.modes[None, :, :]).reshape(-1, self.basis.d)
        prod, dropped = self._coef_product(other)
        prod = prod.reshape((ksum.shape[0],) + self._prod_shape(other))
        keep = np.abs(ksum).sum(axis=1) <= kmax
        w = cover_table(self.basis, self.structure).weights(ksum)
        keep &= ~np.isnan(w)
        lost = float(np.abs(prod[~keep]).sum()) + dropped
        ksum, prod = ksum[keep], prod[keep]
        uniq, inv = np.unique(ksum, axis=0, return_inverse=True)
        out = np.zeros((uniq.shape[0],) + prod.shape[1:], complex)
        np.add.at(out, inv.ravel(), prod)
        return self._like(uniq, out, self.defect + other.defect + lost)

    def _bcast(self, v: np.ndarray) -> np.ndarray:
        return v.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))

    def _majorants(self) -> np.ndarray:
        return _rowsum(np.abs(self.coeffs))

    def norm(self, p: StripParams | None = None, *, m: float | None = None, r: float | None = None) -> float:
        """Majorant sum_k |f_k| exp(r|k|) exp(m [[k]])."""
        if p is not None:
            m = p.m if m is None else m
            r = p.r if r is None else r
        if m is None or r is None:
            raise ValueError("norm needs m and r")
        if self.n_modes == 0:
            return 0.0
        absk = np.abs(self.modes).sum(axis=1)
        return float(np.sum(self._majorants() * np.exp(r * absk + m * self._weights)))

    def max_coeff_diff(self, other) -> float:
        d = self - other
        return float(d._majorants().max()) if d.n_modes else 0.0


class APSeries(_Series):
    """Almost periodic function of x."""

    def _like(self, modes, coeffs, defect=None):
        return APSeries(self.basis, self.structure, modes, coeffs, self.defect if defect is None else defect)

    def _coef_product(self, other):
        return self.coeffs[:, None] * other.coeffs[None, :], 0.0

    def _prod_shape(self, other):
        return ()

    @classmethod
    def zero(cls, basis, structure) -> "APSeries":
        return cls(basis, structure, np.zeros((0, basis.d), int), np.zeros(0, complex))

    @classmethod
    def constant(cls, basis, structure, c: float) -> "APSeries":
        return cls(basis, structure, np.zeros((1, basis.d), int), np.array([c], complex))

    @classmethod
    def from_terms(cls, basis, structure, terms: Iterable) -> "APSeries":
        """Build from (k, coefficient) pairs; k is a sparse dict or a dense tuple."""
        modes, coeffs = [], []
        for k, c in terms:
            modes.append(k_from_dict(basis, k) if isinstance(k, Mapping) else tuple(k))
            coeffs.append(complex(c))
        return cls(basis, structure, np.array(modes, int).reshape(-1, basis.d), np.array(coeffs, complex))

    @classmethod
    def trig(cls, basis, structure, k: Sequence[int], cos: float = 0.0, sin: float = 0.0) -> "APSeries":
        """cos * cos(<k,w>x) + sin * sin(<k,w>x)."""
        k = tuple(int(v) for v in k)
        if not any(k):
            return cls.constant(basis, structure, cos)
        nk = tuple(-v for v in k)
        c = 0.5 * cos - 0.5j * sin
        return cls(basis, structure, np.array([k, nk]), np.array([c, np.conj(c)]))

    def eval_complex(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.n_modes == 0:
            return np.zeros(x.shape, complex)
        ph = np.exp(1j * np.multiply.outer(x, self.frequencies))
        return ph @ self.coeffs

    def __call__(self, x) -> np.ndarray:
        return self.eval_complex(x).real

    def eval_shell(self, theta, r: float | None = None) -> np.ndarray:
        """F(theta) for theta of shape (..., d), possibly complex."""
        theta = np.asarray(theta)
        if r is not None and np.any(np.abs(np.imag(theta)) > r):
            raise DomainExceeded(f"|Im theta| exceeds strip half-width {r}")
        if self.n_modes == 0:
            return np.zeros(theta.shape[:-1], complex)
        return np.exp(1j * (theta @ self.modes.T.astype(float))) @ self.coeffs

    def to_series2(self, s: float, y0: float = 0.0, degree: int = CHEB_DEGREE) -> "APSeries2":
        c = np.zeros((self.n_modes, degree + 1), complex)
        c[:, 0] = self.coeffs
        return APSeries2(self.basis, self.structure, self.modes, c, self.defect, s=s, y0=y0)


@dataclass(frozen=True, eq=False)
class APSeries2(_Series):
    """Almost periodic in x, Chebyshev on [y0 - s, y0 + s] in y."""

    s: float = 1.0
    y0: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, complex)
        if coeffs.ndim != 2 or coeffs.shape[1] < 1:
            raise ValueError("APSeries2 coefficients must have shape (n_modes, degree + 1)")
        if not self.s > 0:
            raise ValueError("half-width s must be positive")
        super().__post_init__()

    @property
    def degree(self) -> int:
        return int(self.coeffs.shape[1] - 1)

    def _like(self, modes, coeffs, defect=None):
        return APSeries2(self.basis, self.structure, modes, coeffs,
                         self.defect if defect is None else defect, s=self.s, y0=self.y0)

    def _compatible(self, other) -> None:
        super()._compatible(other)
        if self.s != other.s or self.y0 != other.y0:
            raise BasisMismatch("series live on different y-intervals")

    def _cshape(self, other):
        return (max(self.coeffs.shape[1], other.coeffs.shape[1]),)

    def _pad(self, other):
        n = max(self.coeffs.shape[1], other.coeffs.shape[1])
        a = np.pad(self.coeffs, ((0, 0), (0, n - self.coeffs.shape[1])))
        b = np.pad(other.coeffs, ((0, 0), (0, n - other.coeffs.shape[1])))
        return a, b

    def _coef_product(self, other):
        deg = max(self.degree, other.degree)
        n1, n2 = self.n_modes, other.n_modes
        out = np.zeros((n1, n2, deg + 1), complex)
        dropped = 0.0
        for j in range(self.coeffs.shape[1]):
            a = self.coeffs[:, j]
            if not np.any(a):
                continue
            for l in range(other.coeffs.shape[1]):
                b = other.coeffs[:, l]
                if not np.any(b):
                    continue
                ab = a[:, None] * b[None, :]
                # T_j T_l = (T_{j+l} + T_{|j-l|}) / 2, products beyond deg dropped
                if j + l <= deg:
                    out[:, :, j + l] += 0.5 * ab
                else:
                    dropped += 0.5 * float(np.abs(ab).sum())
                out[:, :, abs(j - l)] += 0.5 * ab
        return out, dropped

    def _prod_shape(self, other):
        return (max(self.degree, other.degree) + 1,)

    @classmethod
    def zero(cls, basis, structure, s: float, y0: float = 0.0, degree: int = CHEB_DEGREE) -> "APSeries2":
        return cls(basis, structure, np.zeros((0, basis.d), int), np.zeros((0, degree + 1), complex), s=s, y0=y0)

    def _u(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y0) / self.s

    def eval_shell(self, theta, y) -> np.ndarray:
        """F(theta, y) at paired points theta (P, d), y (P,)."""
        theta = np.asarray(theta)
        y = np.asarray(y, dtype=float)
        return eval_stack(self.modes, self.coeffs[:, :, None], theta, self._u(y))[..., 0]

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        theta = np.multiply.outer(x.ravel(), self.basis.omega)
        return self.eval_shell(theta, y.ravel()).real.reshape(x.shape)

    def at_y(self, y: float) -> APSeries:
        t = C.chebvander(np.atleast_1d(self._u(y)), self.degree)[0]
        return APSeries(self.basis, self.structure, self.modes, self.coeffs @ t, self.defect)

    def derivative_y(self) -> "APSeries2":
        if self.degree == 0:
            return self._like(self.modes, np.zeros_like(self.coeffs))
        d = C.chebder(self.coeffs, axis=1) / self.s
        d = np.pad(d, ((0, 0), (0, 1)))
        return self._like(self.modes, d, self.defect / self.s)

    def reinterpolate(self, s: float, y0: float = 0.0, degree: int | None = None) -> "APSeries2":
        """Re-expand on [y0 - s, y0 + s] by interpolation at Chebyshev points."""
        degree = self.degree if degree is None else degree
        n = degree + 1
        ynodes = y0 + s * cheb_nodes(n)
        vals = self.coeffs @ C.chebvander(self._u(ynodes), self.degree).T  # (n_modes, n)
        coeffs = vals @ cheb_values_to_coeffs(n).T
        return APSeries2(self.basis, self.structure, self.modes, coeffs, self.defect, s=s, y0=y0)

    def y_majorants(self) -> np.ndarray:
        return self._majorants()


def eval_stack(modes: np.ndarray, coeffs: np.ndarray, theta: np.ndarray, u: np.ndarray,
               chunk: int = 4096) -> np.ndarray:
    """Evaluate several series sharing a mode set.

    coeffs has shape (n_modes, degree + 1, m); theta (P, d); u (P,) in [-1, 1].
    Returns (P, m) complex.
    """
    P = theta.shape[0]
    m = coeffs.shape[2]
    out = np.zeros((P, m), complex)
    if modes.shape[0] == 0:
        return out
    kT = modes.T.astype(float)
    for a in range(0, P, chunk):
        b = min(P, a + chunk)
        E = np.exp(1j * (theta[a:b] @ kT))
        T = C.chebvander(u[a:b], coeffs.shape[1] - 1)
        for j in range(m):
            out[a:b, j] = np.einsum("pc,pc->p", E @ coeffs[:, :, j], T)
    return out


# ---------------------------------------------------------- collocation


class Collocation:
    """Quasi-random torus samples and a least-squares projector onto modes."""

    _cache: dict[tuple, "Collocation"] = {}

    def __init__(self, basis: FrequencyBasis, modes: np.ndarray, n_samples: int | None = None, seed: int = 0):
        self.basis = basis
        self.modes = modes
        n = max(modes.shape[0], 1)
        self.n_samples = int(n_samples or SAMPLE_FACTOR * n)
        self.seed = seed
        sampler = qmc.Halton(d=basis.d, scramble=True, seed=seed)
        self.theta = 2 * np.pi * sampler.random(self.n_samples)
        E = np.exp(1j * (self.theta @ modes.T.astype(float)))
        self.pinv = np.linalg.pinv(E)
        self.neg = _negation_index(modes)

    @classmethod
    def get(cls, basis: FrequencyBasis, modes: np.ndarray, n_samples: int | None = None, seed: int = 0) -> "Collocation":
        key = (basis.key(), modes.tobytes(), modes.shape, n_samples, seed)
        hit = cls._cache.get(key)
        if hit is None:
            if len(cls._cache) > 32:
                cls._cache.clear()
            hit = cls._cache[key] = cls(basis, modes, n_samples, seed)
        return hit

    def project(self, values: np.ndarray) -> np.ndarray:
        """Coefficients from sample values (P, ...); mirror pairs made conjugate."""
        flat = values.reshape(values.shape[0], -1)
        c = self.pinv @ flat
        ok = self.neg >= 0
        sym = c.copy()
        sym[ok] = 0.5 * (c[ok] + np.conj(c[self.neg[ok]]))
        return sym.reshape((self.modes.shape[0],) + values.shape[1:])


def project_function(func: Callable[[np.ndarray], np.ndarray], basis: FrequencyBasis,
                     structure: SpatialStructure, kmax: int = K_MAX, seed: int = 0,
                     modes: np.ndarray | None = None) -> APSeries:
    """Series of a shell function theta -> F(theta) (real valued on real theta)."""
    modes = retained_modes(basis, structure, kmax) if modes is None else modes
    col = Collocation.get(basis, modes, seed=seed)
    vals = np.asarray(func(col.theta), dtype=float)
    return APSeries(basis, structure, modes, col.project(vals))


def project_function2(func: Callable[[np.ndarray, np.ndarray], np.ndarray], basis: FrequencyBasis,
                      structure: SpatialStructure, s: float, y0: float = 0.0,
                      degree: int = CHEB_DEGREE, kmax: int = K_MAX, seed: int = 0,
                      modes: np.ndarray | None = None) -> APSeries2:
    """Series of F(theta, y) on [y0 - s, y0 + s]."""
    modes = retained_modes(basis, structure, kmax) if modes is None else modes
    col = Collocation.get(basis, modes, seed=seed)
    n = degree + 1
    ynodes = y0 + s * cheb_nodes(n)
    P = col.theta.shape[0]
    th = np.repeat(col.theta, n, axis=0)
    yy = np.tile(ynodes, P)
    vals = np.asarray(func(th, yy), dtype=float).reshape(P, n)
    cheb = vals @ cheb_values_to_coeffs(n).T
    return APSeries2(basis, structure, modes, col.project(cheb), s=s, y0=y0)


def _modes_of(f: _Series, kmax: int) -> np.ndarray:
    return retained_modes(f.basis, f.structure, kmax)


def compose_inner(g: APSeries, f: APSeries, tol: float = 1e-10, kmax: int = K_MAX, seed: int = 0) -> APSeries:
    """x -> g(x + f(x)), re-projected onto the retained modes."""
    g._compatible(f)
    if f.is_zero():
        return g
    w = g.basis.omega

    def shell(theta):
        return g.eval_shell(theta + np.multiply.outer(f.eval_shell(theta).real, w)).real

    out = project_function(shell, g.basis, g.structure, kmax, seed)
    check = Collocation.get(g.basis, out.modes, seed=seed + 7919)
    resid = float(np.max(np.abs(out.eval_shell(check.theta).real - shell(check.theta))))
    if resid > tol:
        raise ProjectionResidualExceeded(f"held-out residual {resid:.3e} > {tol:.1e}")
    return APSeries(out.basis, out.structure, out.modes, out.coeffs, g.defect + f.defect + resid)


def invert_time(f: APSeries, beta: float, tol: float = 1e-10, kmax: int = K_MAX, seed: int = 0,
                max_iter: int = 200) -> APSeries:
    """Solve tau = beta t + f(t) as t = tau / beta + g(tau); g uses frequencies omega / beta."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    nb = f.basis.scaled(beta)
    if f.is_zero():
        return APSeries.zero(nb, f.structure)
    modes = _modes_of(f, kmax)
    col = Collocation.get(nb, modes, seed=seed)
    fprime = f.derivative_x()
    if np.min(beta + fprime.eval_shell(col.theta).real) <= 0:
        raise NotMonotone("beta + f' is not positive on the samples")
    w = f.basis.omega

    def solve(theta):
        # shell of g on the new torus: g = -F(theta + w g) / beta
        gv = np.zeros(theta.shape[0])
        for _ in range(max_iter):
            new = -f.eval_shell(theta + np.multiply.outer(gv, w)).real / beta
            if np.max(np.abs(new - gv)) <= 1e-16 * (1 + np.max(np.abs(new))):
                return new
            gv = new
        return gv

    g = APSeries(nb, f.structure, modes, col.project(solve(col.theta)))
    # round trip on real times
    tau = np.linspace(0.0, 200.0 * 2 * np.pi / float(np.min(np.abs(w))), 257)
    t = tau / beta + g(tau)
    defect = float(np.max(np.abs(beta * t + f(t) - tau)))
    if defect > tol:
        raise ProjectionResidualExceeded(f"inversion round-trip defect {defect:.3e} > {tol:.1e}")
    return APSeries(nb, f.structure, g.modes, g.coeffs, f.defect + defect)


# --------------------------------------------------------- serialization


def series_to_dict(f: _Series) -> dict:
    out = {
        "type": type(f).__name__,
        "version": FORMAT_VERSION,
        "window": [f.basis.lo, f.basis.hi],
        "omega": [float(v) for v in f.basis.omega],
        "varrho": float(f.structure.varrho),
        "generators": [sorted(g) for g in f.structure.generators],
        "defect": float(f.defect),
        "terms": [],
    }
    if isinstance(f, APSeries2):
        out.update(s=float(f.s), y0=float(f.y0), cheb_degree=f.degree)
    for k, c in zip(f.modes.tolist(), f.coeffs):
        c = np.atleast_1d(c)
        out["terms"].append({
            "k": {str(i): v for i, v in k_to_dict(f.basis, k).items()},
            "re": [float(v) for v in c.real],
            "im": [float(v) for v in c.imag],
        })
    return out


def series_from_dict(doc: Mapping) -> _Series:
    basis = FrequencyBasis(int(doc["window"][0]), np.array(doc["omega"], float))
    if basis.hi != int(doc["window"][1]):
        raise ValueError("window does not match number of frequencies")
    structure = SpatialStructure(tuple(frozenset(g) for g in doc["generators"]), float(doc["varrho"]))
    modes = np.array([k_from_dict(basis, {int(i): v for i, v in t["k"].items()}) for t in doc["terms"]],
                     dtype=int).reshape(-1, basis.d)
    coeffs = np.array([np.array(t["re"], float) + 1j * np.array(t["im"], float) for t in doc["terms"]])
    kind = doc["type"]
    if kind == "APSeries":
        coeffs = coeffs.reshape(-1)
        return APSeries(basis, structure, modes, coeffs, float(doc.get("defect", 0.0)))
    if kind == "APSeries2":
        coeffs = coeffs.reshape(-1, int(doc["cheb_degree"]) + 1)
        return APSeries2(basis, structure, modes, coeffs, float(doc.get("defect", 0.0)),
                         s=float(doc["s"]), y0=float(doc["y0"]))
    raise ValueError(f"unknown series type {kind!r}")


def dumps(f: _Series) -> str:
    return json.dumps(series_to_dict(f), indent=1)


def loads(text: str) -> _Series:
    return series_from_dict(json.loads(text))
