"""Convex atoms with deterministic subgradients, boxes and projections.

The expression vocabulary is deliberately small: affine functions,
shifted squares w*(x_k - a)^2, shifted absolute values w*|x_k - a|,
exponentials w*exp(x_k), and nonnegative-weighted sums of these.  Every
expression is convex by construction; attempts to scale a nonlinear atom
by a negative factor raise ``ConvexityError``.

Subgradient selection is deterministic: at differentiable points the
gradient is returned, and at an absolute-value kink (within
``KINK_TOLERANCE``) the minimal-norm element 0 is chosen, so kink points
are genuine equilibrium candidates for the projected dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvexityError, InvalidInputError

#: a coordinate counts as sitting on an absolute-value kink below this distance
KINK_TOLERANCE = 1e-12


def _as_atom_arrays(idx, centers, weights):
    idx = np.asarray(idx, dtype=int)
    centers = np.asarray(centers, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return idx, centers, weights


def _merge_atoms(idx, centers, weights):
    """Canonical order (coord, center) with duplicate atoms merged."""
    if len(idx) == 0:
        return idx, centers, weights
    order = np.lexsort((centers, idx))
    idx, centers, weights = idx[order], centers[order], weights[order]
    out_i, out_c, out_w = [], [], []
    for i, c, w in zip(idx, centers, weights):
        if out_i and out_i[-1] == i and out_c[-1] == c:
            out_w[-1] += w
        else:
            out_i.append(i)
            out_c.append(c)
            out_w.append(w)
    keep = [k for k, w in enumerate(out_w) if w != 0.0]
    return (
        np.asarray([out_i[k] for k in keep], dtype=int),
        np.asarray([out_c[k] for k in keep], dtype=float),
        np.asarray([out_w[k] for k in keep], dtype=float),
    )


@dataclass(frozen=True)
class ConvexExpr:
    """A nonnegative-weighted sum of convex atoms on R^dim.

    Stored in a canonical normal form: an affine part (``lin``, ``const``)
    plus arrays of square, absolute-value and exponential atoms.  Two
    expressions compare equal when their normal forms coincide.
    """

    dim: int
    lin: np.ndarray
    const: float
    quad_idx: np.ndarray
    quad_center: np.ndarray
    quad_weight: np.ndarray
    abs_idx: np.ndarray
    abs_center: np.ndarray
    abs_weight: np.ndarray
    exp_idx: np.ndarray
    exp_weight: np.ndarray

    def __post_init__(self):
        for name in ("lin", "quad_idx", "quad_center", "quad_weight",
                     "abs_idx", "abs_center", "abs_weight", "exp_idx", "exp_weight"):
            getattr(self, name).flags.writeable = False
        # duplicate coordinate indices (several atoms on one coordinate)
        # force the slower scatter-add path in the subgradient routines
        for fam in ("quad", "abs", "exp"):
            idx = getattr(self, f"{fam}_idx")
            object.__setattr__(
                self, f"_{fam}_unique", len(np.unique(idx)) == len(idx)
            )

    # -- construction ----------------------------------------------------

    @staticmethod
    def zero(dim: int) -> "ConvexExpr":
        return affine(np.zeros(dim), 0.0)

    def _check_arity(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InvalidInputError(
                f"expression on R^{self.dim} evaluated at vector of shape {x.shape}"
            )
        return x

    @property
    def is_affine(self) -> bool:
        return not (len(self.quad_idx) or len(self.abs_idx) or len(self.exp_idx))

    def kink_locations(self):
        """(coord, center) pairs where the expression is nondifferentiable."""
        return list(zip(self.abs_idx.tolist(), self.abs_center.tolist()))

    # -- evaluation ------------------------------------------------------

    def value(self, x) -> float:
        x = self._check_arity(x)
        total = float(self.lin @ x) + self.const
        if len(self.quad_idx):
            d = x[self.quad_idx] - self.quad_center
            total += float(self.quad_weight @ (d * d))
        if len(self.abs_idx):
            total += float(self.abs_weight @ np.abs(x[self.abs_idx] - self.abs_center))
        if len(self.exp_idx):
            total += float(self.exp_weight @ np.exp(x[self.exp_idx]))
        return total

    def value_many(self, points) -> np.ndarray:
        """Vectorized ``value`` over an array of shape (..., dim)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim:
            raise InvalidInputError(
                f"expression on R^{self.dim} evaluated on points of shape {pts.shape}"
            )
        total = pts @ self.lin + self.const
        if len(self.quad_idx):
            d = pts[..., self.quad_idx] - self.quad_center
            total = total + (d * d) @ self.quad_weight
        if len(self.abs_idx):
            total = total + np.abs(pts[..., self.abs_idx] - self.abs_center) @ self.abs_weight
        if len(self.exp_idx):
            total = total + np.exp(pts[..., self.exp_idx]) @ self.exp_weight
        return total

    @staticmethod
    def _scatter_add(target, idx, values, unique):
        if unique:
            target[idx] += values
        else:
            np.add.at(target, idx, values)

    def subgradient(self, x) -> np.ndarray:
        """One deterministic element of the subdifferential at ``x``."""
        x = self._check_arity(x)
        g = self.lin.copy()
        if len(self.quad_idx):
            self._scatter_add(
                g, self.quad_idx,
                2.0 * self.quad_weight * (x[self.quad_idx] - self.quad_center),
                self._quad_unique,
            )
        if len(self.abs_idx):
            d = x[self.abs_idx] - self.abs_center
            s = np.where(np.abs(d) < KINK_TOLERANCE, 0.0, np.sign(d))
            self._scatter_add(g, self.abs_idx, self.abs_weight * s, self._abs_unique)
        if len(self.exp_idx):
            self._scatter_add(
                g, self.exp_idx, self.exp_weight * np.exp(x[self.exp_idx]), self._exp_unique
            )
        return g

    def subgradient_interval(self, x):
        """Componentwise bounds (lo, hi) of the subdifferential at ``x``.

        The subdifferential of this atom vocabulary is a coordinate box:
        only absolute-value atoms sitting on their kink contribute an
        interval, everything else is single-valued.
        """
        x = self._check_arity(x)
        lo = self.lin.copy()
        if len(self.quad_idx):
            self._scatter_add(
                lo, self.quad_idx,
                2.0 * self.quad_weight * (x[self.quad_idx] - self.quad_center),
                self._quad_unique,
            )
        if len(self.exp_idx):
            self._scatter_add(
                lo, self.exp_idx, self.exp_weight * np.exp(x[self.exp_idx]), self._exp_unique
            )
        if not len(self.abs_idx):
            return lo, lo.copy()
        hi = lo.copy()
        d = x[self.abs_idx] - self.abs_center
        at_kink = np.abs(d) < KINK_TOLERANCE
        s = np.where(at_kink, 0.0, np.sign(d))
        self._scatter_add(
            lo, self.abs_idx, self.abs_weight * np.where(at_kink, -1.0, s), self._abs_unique
        )
        self._scatter_add(
            hi, self.abs_idx, self.abs_weight * np.where(at_kink, 1.0, s), self._abs_unique
        )
        return lo, hi

    # -- algebra ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return affine_sum(self, const=float(other))
        if not isinstance(other, ConvexExpr):
            return NotImplemented
        if other.dim != self.dim:
            raise InvalidInputError(f"cannot add expressions on R^{self.dim} and R^{other.dim}")
        qi, qc, qw = _merge_atoms(
            np.concatenate([self.quad_idx, other.quad_idx]),
            np.concatenate([self.quad_center, other.quad_center]),
            np.concatenate([self.quad_weight, other.quad_weight]),
        )
        ai, ac, aw = _merge_atoms(
            np.concatenate([self.abs_idx, other.abs_idx]),
            np.concatenate([self.abs_center, other.abs_center]),
            np.concatenate([self.abs_weight, other.abs_weight]),
        )
        ei, _, ew = _merge_atoms(
            np.concatenate([self.exp_idx, other.exp_idx]),
            np.zeros(len(self.exp_idx) + len(other.exp_idx)),
            np.concatenate([self.exp_weight, other.exp_weight]),
        )
        return ConvexExpr(
            dim=self.dim,
            lin=self.lin + other.lin,
            const=self.const + other.const,
            quad_idx=qi, quad_center=qc, quad_weight=qw,
            abs_idx=ai, abs_center=ac, abs_weight=aw,
            exp_idx=ei, exp_weight=ew,
        )

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return affine_sum(self, const=-float(other))
        if isinstance(other, ConvexExpr):
            return self + (-1.0) * other
        return NotImplemented

    def __mul__(self, factor):
        if not isinstance(factor, (int, float)):
            return NotImplemented
        factor = float(factor)
        if factor < 0 and not self.is_affine:
            raise ConvexityError(
                "scaling a nonlinear convex atom by a negative factor breaks convexity"
            )
        return ConvexExpr(
            dim=self.dim,
            lin=self.lin * factor,
            const=self.const * factor,
            quad_idx=self.quad_idx, quad_center=self.quad_center,
            quad_weight=self.quad_weight * factor,
            abs_idx=self.abs_idx, abs_center=self.abs_center,
            abs_weight=self.abs_weight * factor,
            exp_idx=self.exp_idx, exp_weight=self.exp_weight * factor,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __eq__(self, other):
        if not isinstance(other, ConvexExpr):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.lin, other.lin)
            and self.const == other.const
            and np.array_equal(self.quad_idx, other.quad_idx)
            and np.array_equal(self.quad_center, other.quad_center)
            and np.array_equal(self.quad_weight, other.quad_weight)
            and np.array_equal(self.abs_idx, other.abs_idx)
            and np.array_equal(self.abs_center, other.abs_center)
            and np.array_equal(self.abs_weight, other.abs_weight)
            and np.array_equal(self.exp_idx, other.exp_idx)
            and np.array_equal(self.exp_weight, other.exp_weight)
        )


def _empty(dim):
    return dict(
        dim=dim,
        lin=np.zeros(dim),
        const=0.0,
        quad_idx=np.empty(0, dtype=int), quad_center=np.empty(0), quad_weight=np.empty(0),
        abs_idx=np.empty(0, dtype=int), abs_center=np.empty(0), abs_weight=np.empty(0),
        exp_idx=np.empty(0, dtype=int), exp_weight=np.empty(0),
    )


def affine(coefficients, const: float = 0.0) -> ConvexExpr:
    """c'x + b."""
    c = np.asarray(coefficients, dtype=float)
    fields = _empty(c.shape[0])
    fields["lin"] = c.copy()
    fields["const"] = float(const)
    return ConvexExpr(**fields)


def affine_sum(expr: ConvexExpr, const: float) -> ConvexExpr:
    fields = _empty(expr.dim)
    fields.update(
        lin=expr.lin.copy(), const=expr.const + const,
        quad_idx=expr.quad_idx, quad_center=expr.quad_center, quad_weight=expr.quad_weight,
        abs_idx=expr.abs_idx, abs_center=expr.abs_center, abs_weight=expr.abs_weight,
        exp_idx=expr.exp_idx, exp_weight=expr.exp_weight,
    )
    return ConvexExpr(**fields)


def _check_atom(dim, coord, weight):
    dim, coord = int(dim), int(coord)
    if not 0 <= coord < dim:
        raise InvalidInputError(f"coordinate {coord} outside 0..{dim - 1}")
    if weight < 0:
        raise ConvexityError(f"atom weight must be nonnegative, got {weight}")
    return dim, coord, float(weight)


def quadratic(dim: int, coord: int, center: float = 0.0, weight: float = 1.0) -> ConvexExpr:
    """w * (x_coord - center)^2 with w >= 0 (coord is 0-based)."""
    dim, coord, weight = _check_atom(dim, coord, weight)
    fields = _empty(dim)
    fields.update(
        quad_idx=np.array([coord]), quad_center=np.array([float(center)]),
        quad_weight=np.array([weight]),
    )
    return ConvexExpr(**fields)


def absolute(dim: int, coord: int, center: float = 0.0, weight: float = 1.0) -> ConvexExpr:
    """w * |x_coord - center| with w >= 0 (coord is 0-based)."""
    dim, coord, weight = _check_atom(dim, coord, weight)
    fields = _empty(dim)
    fields.update(
        abs_idx=np.array([coord]), abs_center=np.array([float(center)]),
        abs_weight=np.array([weight]),
    )
    return ConvexExpr(**fields)


def exponential(dim: int, coord: int, weight: float = 1.0, const: float = 0.0) -> ConvexExpr:
    """w * exp(x_coord) + const with w >= 0 (coord is 0-based)."""
    dim, coord, weight = _check_atom(dim, coord, weight)
    fields = _empty(dim)
    fields.update(exp_idx=np.array([coord]), exp_weight=np.array([weight]), const=float(const))
    return ConvexExpr(**fields)


# -- local feasible sets ---------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, possibly unbounded (entries may be +-inf)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidInputError("box bounds must be 1-d arrays of equal length")
        if np.any(lower > upper):
            raise InvalidInputError("box is empty: a lower bound exceeds its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        lower.flags.writeable = False
        upper.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def project(self, x) -> np.ndarray:
        """Componentwise clamp, the Euclidean projection onto the box."""
        x = np.asarray(x, dtype=float)
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def violation(self, x) -> float:
        """Max-norm distance from the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        return float(np.max(np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0), initial=0.0))

    def sample(self, rng) -> np.ndarray:
        """Uniform sample; unbounded directions fall back to a unit window."""
        lo = np.where(np.isfinite(self.lower), self.lower, np.minimum(self.upper - 1.0, -1.0))
        hi = np.where(np.isfinite(self.upper), self.upper, np.maximum(lo + 2.0, 1.0))
        return rng.uniform(lo, hi)


def whole_space(dim: int) -> Box:
    return Box(np.full(dim, -np.inf), np.full(dim, np.inf))


def project_box(x, box: Box) -> np.ndarray:
    return box.project(x)


def project_nonneg(u) -> np.ndarray:
    """Projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(u, dtype=float), 0.0)


def in_normal_cone(box: Box, x, w, tol: float = 1e-9) -> bool:
    """True when ``w`` lies in the normal cone of ``box`` at ``x``.

    Uses the projection characterization: w is normal at x exactly when
    projecting x + w lands back on x.  Requires x in the box (within
    ``tol``).
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if not box.contains(x, tol=tol):
        raise InvalidInputError("point is not inside the box")
    return float(np.linalg.norm(box.project(x + w) - x)) <= tol


# -- vector constraints ----------------------------------------------------


@dataclass(frozen=True)
class ConstraintMap:
    """Stacked convex inequality constraints g(x) <= 0 on one agent."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        dims = {c.dim for c in comps}
        if len(dims) > 1:
            raise InvalidInputError(f"constraint components disagree on dimension: {dims}")
        object.__setattr__(self, "components", comps)

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim if self.components else None

    def value(self, x) -> np.ndarray:
        if not self.components:
            return np.empty(0)
        return np.array([c.value(x) for c in self.components])

    def weighted_subgradient(self, x, multipliers) -> np.ndarray:
        """sum_j multipliers_j * (selected subgradient of g_j)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[0])
        for c, m in zip(self.components, np.asarray(multipliers, dtype=float)):
            if m != 0.0:
                out += m * c.subgradient(x)
        return out


def no_constraints() -> ConstraintMap:
    return ConstraintMap(components=())
