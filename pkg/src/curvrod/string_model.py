"""Membrane-scale limit: reduced density W0, its convex envelope and the string energy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .material import MaterialModel


class ReducedDensityError(RuntimeError):
    pass


class UnsupportedDensity(ValueError):
    pass


@dataclass
class W0Result:
    value: float
    y2: np.ndarray
    y3: np.ndarray
    spread: float  # max - min of the finite multi-start values


def _completion(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors (a, b) with (z/|z|, a, b) a positively oriented orthonormal frame."""
    n = np.linalg.norm(z)
    t = z / n if n > 1e-14 else np.array([1.0, 0.0, 0.0])
    k = int(np.argmin(np.abs(t)))
    e = np.zeros(3)
    e[k] = 1.0
    a = np.cross(t, e)
    a /= np.linalg.norm(a)
    return a, np.cross(t, a)


def _starts(z: np.ndarray, warm: Optional[np.ndarray], warm_only: bool = False) -> list[np.ndarray]:
    if warm_only and warm is not None:
        return [np.asarray(warm, dtype=float)]
    a, b = _completion(z)
    out = [np.concatenate(p) for p in ((a, b), (b, -a), (-a, -b), (-b, a))]
    if warm is not None:
        out.insert(0, np.asarray(warm, dtype=float))
    return out


def w0(
    s,
    z,
    mat: MaterialModel,
    R0=None,
    warm: Optional[np.ndarray] = None,
    gtol: float = 1e-10,
    warm_only: bool = False,
) -> W0Result:
    """inf over y2, y3 of W(s, (z | y2 | y3) R0^T), by BFGS from deterministic starts.

    The starts are the four orthonormal completions of z that differ by quarter
    turns about z, plus ``warm`` if given (or only ``warm`` with ``warm_only``).
    """
    z = np.asarray(z, dtype=float)
    R0t = np.eye(3) if R0 is None else np.asarray(R0, dtype=float).T

    def f(y):
        F = np.column_stack([z, y[:3], y[3:]]) @ R0t
        return float(mat(F, s))

    vals, xs = [], []
    for x0 in _starts(z, warm, warm_only):
        if not np.isfinite(f(x0)):
            continue
        res = sp_minimize(f, x0, method="BFGS", options={"gtol": gtol})
        x, v = res.x, float(res.fun)
        if not np.isfinite(v):
            continue
        vals.append(v)
        xs.append(x)
    if not vals:
        raise ReducedDensityError(f"every start has infinite energy at z={z.tolist()}, s={s}")
    i = int(np.argmin(vals))
    return W0Result(value=max(vals[i], 0.0), y2=xs[i][:3], y3=xs[i][3:], spread=float(np.ptp(vals)))


@dataclass
class ReducedDensity:
    """Callable W0(s, z) for a fixed material and reference frame field."""

    material: MaterialModel
    frame_at: Optional[object] = None

    @property
    def radial(self) -> bool:
        return bool(self.material.isotropic)

    def __call__(self, s, z) -> float:
        R0 = None if self.frame_at is None else np.asarray(self.frame_at(s)).reshape(3, 3)
        return w0(s, z, self.material, R0).value


def radial_profile(
    mat: MaterialModel, s: float = 0.0, r_max: float = 3.0, n: int = 512, checkpoint_every: int = 32
):
    """Samples (r, phi(r)) with phi(|z|) = W0(s, z); r = 1 is always a sample.

    Samples are swept outward from r = 1 with warm starts; every
    ``checkpoint_every`` samples the full multi-start search is run as well.
    Only isotropic materials reduce to a radial profile. Non-finite samples
    (e.g. z = 0 for a barrier density) are kept as +inf.
    """
    if not mat.isotropic:
        raise UnsupportedDensity(f"material {mat.name!r} is not isotropic; W0 is not radial")
    if n < 200 or r_max < 2.0:
        raise ValueError("need at least 200 samples and r_max >= 2")
    r = np.union1d(np.linspace(0.0, r_max, n), [1.0])
    phi = np.empty_like(r)
    # sweep outward from r = 1 with warm starts, where the minimizer is a rotation
    i1 = int(np.searchsorted(r, 1.0))
    for order in (range(i1, len(r)), range(i1, -1, -1)):
        warm = None
        for step, i in enumerate(order):
            quick = warm is not None and step % checkpoint_every != 0
            try:
                res = w0(s, np.array([r[i], 0.0, 0.0]), mat, warm=warm, warm_only=quick)
            except ReducedDensityError:
                phi[i] = np.inf
                continue
            phi[i] = res.value
            warm = np.concatenate([res.y2, res.y3])
    return r, phi


def lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by x (monotone chain)."""
    keep: list[int] = []
    for i in range(len(x)):
        while len(keep) >= 2:
            j, k = keep[-2], keep[-1]
            cross = (x[k] - x[j]) * (y[i] - y[j]) - (y[k] - y[j]) * (x[i] - x[j])
            if cross <= 0:
                keep.pop()
            else:
                break
        keep.append(i)
    return np.array(keep)


@dataclass
class ConvexifiedDensity:
    """Radial convex envelope W0**(z) = phi**(|z|) from a sampled profile."""

    r: np.ndarray
    phi: np.ndarray
    phi_cvx: np.ndarray

    def profile(self, rho) -> np.ndarray:
        rho = np.abs(np.asarray(rho, dtype=float))
        out = np.interp(rho, self.r, self.phi_cvx)
        # linear continuation past the table keeps convexity
        slope = (self.phi_cvx[-1] - self.phi_cvx[-2]) / (self.r[-1] - self.r[-2])
        beyond = rho > self.r[-1]
        out = np.where(beyond, self.phi_cvx[-1] + slope * (rho - self.r[-1]), out)
        return out

    def __call__(self, z, s=0.0) -> np.ndarray:
        return self.profile(np.linalg.norm(np.asarray(z, dtype=float), axis=-1))


def convexify_radial(r, phi) -> ConvexifiedDensity:
    """Convex envelope of z -> phi(|z|) via the hull of the evenly extended profile."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if r.ndim != 1 or phi.shape != r.shape:
        raise UnsupportedDensity("convexify_radial needs a 1D radial profile (r, phi)")
    if np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ValueError("radii must be increasing and nonnegative")
    ok = np.isfinite(phi)
    rr, pp = r[ok], phi[ok]
    x = np.concatenate([-rr[::-1], rr])
    y = np.concatenate([pp[::-1], pp])
    x, idx = np.unique(x, return_index=True)
    y = y[idx]
    hull = lower_hull(x, y)
    cvx = np.interp(r, x[hull], y[hull])
    return ConvexifiedDensity(r=r, phi=phi, phi_cvx=cvx)


def convexified_density(mat: MaterialModel, s: float = 0.0, r_max: float = 3.0, n: int = 512) -> ConvexifiedDensity:
    return convexify_radial(*radial_profile(mat, s, r_max, n))


def string_energy(v, cvx: ConvexifiedDensity, length: Optional[float] = None) -> float:
    """Midpoint rule for int W0**(v') ds with v sampled on a uniform grid."""
    v = np.asarray(v, dtype=float)
    n = len(v) - 1
    ds = (1.0 if length is None else float(length)) / n
    dv = np.diff(v, axis=0) / ds
    return float(np.sum(cvx(dv)) * ds)
