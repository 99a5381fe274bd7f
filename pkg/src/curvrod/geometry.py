"""Reference geometry of a thin curved beam.

The beam is described by an arc-length parametrized mid-fiber ``gamma``, an
orthonormal frame ``R0 = (gamma' | nu2 | nu3)`` along it, and a unit-area
cross-section ``D`` with vanishing first moments and vanishing product moment.
The thin tube is parametrized by

    psi_h(s, xi, zeta) = gamma(s) + h*xi*nu2(s) + h*zeta*nu3(s).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.transform import Rotation, RotationSpline

from ._so3 import hat, polar_rotation, rot_x


class GeometryError(ValueError):
    """Invalid geometric input."""


class ChartError(GeometryError):
    """The thin-tube chart is not injective at the requested thickness."""


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class ParamCurve:
    """Arc-length parametrized curve sampled on a uniform grid.

    ``d1`` and ``d2`` hold gamma' and gamma'' at the nodes. ``func`` evaluates
    (gamma, gamma', gamma'') at arbitrary arc-length values.
    """

    s: np.ndarray
    points: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    length: float
    func: Callable[[np.ndarray], tuple] = field(repr=False, compare=False, default=None)
    kind: str = "sampled"

    def __post_init__(self):
        if len(self.s) < 3:
            raise GeometryError("curve needs at least 3 nodes")

    def evaluate(self, s):
        return self.func(np.asarray(s, dtype=float))

    @property
    def n_nodes(self) -> int:
        return len(self.s)


def _analytic_curve(func, length: float, n: int, kind: str) -> ParamCurve:
    if n < 3:
        raise GeometryError("curve needs at least 3 nodes")
    s = np.linspace(0.0, length, n)
    g, d1, d2 = func(s)
    return ParamCurve(s=s, points=g, d1=d1, d2=d2, length=float(length), func=func, kind=kind)


def line(length: float = 1.0, n: int = 101) -> ParamCurve:
    def func(s):
        s = np.atleast_1d(s)
        z = np.zeros_like(s)
        return (
            np.stack([s, z, z], -1),
            np.stack([z + 1.0, z, z], -1),
            np.zeros(s.shape + (3,)),
        )

    return _analytic_curve(func, length, n, "line")


def circle_arc(radius: float = 1.0, length: float = 1.0, n: int = 101) -> ParamCurve:
    """Planar arc of the circle of given radius, starting at (radius, 0, 0)."""
    r = float(radius)

    def func(s):
        s = np.atleast_1d(s)
        c, sn, z = np.cos(s / r), np.sin(s / r), np.zeros_like(s)
        return (
            r * np.stack([c, sn, z], -1),
            np.stack([-sn, c, z], -1),
            -np.stack([c, sn, z], -1) / r,
        )

    return _analytic_curve(func, length, n, "circle-arc")


def helix(radius: float = 1.0, pitch: float = 0.5, length: float = 1.0, n: int = 101) -> ParamCurve:
    """Helix (a cos t, a sin t, b t) in arc length, with b = pitch / (2 pi).

    Curvature a/c^2 and torsion b/c^2 with c = sqrt(a^2 + b^2).
    """
    a = float(radius)
    b = float(pitch) / (2 * np.pi)
    c = np.hypot(a, b)

    def func(s):
        s = np.atleast_1d(s)
        t = s / c
        ct, st = np.cos(t), np.sin(t)
        return (
            np.stack([a * ct, a * st, b * t], -1),
            np.stack([-a * st, a * ct, np.full_like(t, b)], -1) / c,
            np.stack([-a * ct, -a * st, np.zeros_like(t)], -1) / c**2,
        )

    return _analytic_curve(func, length, n, "helix")


def helix_curvature_torsion(radius: float, pitch: float) -> tuple[float, float]:
    b = pitch / (2 * np.pi)
    c2 = radius**2 + b**2
    return radius / c2, b / c2


def _diff4(f: np.ndarray, ds: float) -> np.ndarray:
    """First derivative along axis 0, 4th order everywhere (one-sided at the ends)."""
    f = np.asarray(f, dtype=float)
    out = np.gradient(f, ds, axis=0, edge_order=2)
    if len(f) >= 5:
        out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * ds)
        out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * ds)
        out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * ds)
        out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * ds)
        out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * ds)
    return out


def from_samples(points, n: Optional[int] = None) -> ParamCurve:
    """Reparametrize sampled points by arc length and resample uniformly.

    A chord-length cubic spline is integrated to get arc length; the curve is
    resampled on a uniform arc-length grid and differentiated with 4th-order
    central differences.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise GeometryError("need at least 3 points in R^3")
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(chord <= 0):
        raise GeometryError("repeated consecutive points")
    u = np.concatenate([[0.0], np.cumsum(chord)])
    spl = CubicSpline(u, pts)
    fine = np.linspace(0.0, u[-1], 20 * len(u) + 1)
    speed = np.linalg.norm(spl(fine, 1), axis=1)
    arclen = np.concatenate(
        [[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(fine))]
    )
    n = n or len(pts)
    s = np.linspace(0.0, arclen[-1], n)
    resampled = spl(np.interp(s, arclen, fine))
    ds = s[1] - s[0]
    d1 = _diff4(resampled, ds)
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d2 = _diff4(d1, ds)
    d2 -= np.sum(d2 * d1, axis=1, keepdims=True) * d1
    sp_g, sp_1, sp_2 = CubicSpline(s, resampled), CubicSpline(s, d1), CubicSpline(s, d2)

    def func(sv):
        sv = np.atleast_1d(sv)
        t = sp_1(sv)
        return sp_g(sv), t / np.linalg.norm(t, axis=-1, keepdims=True), sp_2(sv)

    return ParamCurve(s=s, points=resampled, d1=d1, d2=d2, length=float(s[-1]), func=func)


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class FrameField:
    """Nodal orthonormal frames R0(s) with R0 e1 = gamma'(s), and R0'(s)."""

    s: np.ndarray
    R: np.ndarray
    dR: np.ndarray
    _spline: RotationSpline = field(repr=False, compare=False, default=None)

    @property
    def A0(self) -> np.ndarray:
        """Reference strain R0^T R0' at the nodes."""
        return np.swapaxes(self.R, -1, -2) @ self.dR

    def at(self, s):
        """Interpolated (R0, R0') at arbitrary arc length (C^2 rotation spline)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        s = np.clip(s, self.s[0], self.s[-1])
        R = self._spline(s).as_matrix()
        w = self._spline(s, 1)
        return R, R @ hat(w)

    @property
    def nu2(self) -> np.ndarray:
        return self.R[:, :, 1]

    @property
    def nu3(self) -> np.ndarray:
        return self.R[:, :, 2]


def frame_from_matrices(s, R) -> FrameField:
    s = np.asarray(s, dtype=float)
    R = polar_rotation(np.asarray(R, dtype=float))
    dR = _diff4(R, s[1] - s[0])
    return FrameField(s=s, R=R, dR=dR, _spline=RotationSpline(s, Rotation.from_matrix(R)))


def build_frame(curve: ParamCurve, seed_normal=None, twist: float = 0.0) -> FrameField:
    """Rotation-minimizing frame by the double reflection method.

    ``seed_normal`` is projected onto the normal plane at s = 0 to give nu2(0);
    by default the coordinate axis least aligned with gamma'(0) is used.
    A constant ``twist`` rate rotates the frame about the tangent by twist*s;
    choosing the torsion of a helix gives an s-independent R0^T R0'.
    """
    if curve.n_nodes < 3:
        raise GeometryError("curve needs at least 3 nodes")
    x, t = curve.points, curve.d1
    if seed_normal is None:
        seed = np.eye(3)[int(np.argmin(np.abs(t[0])))]
    else:
        seed = np.asarray(seed_normal, dtype=float)
    r0 = seed - np.dot(seed, t[0]) * t[0]
    if np.linalg.norm(r0) < 1e-8 * max(1.0, np.linalg.norm(seed)):
        raise GeometryError("seed normal is parallel to the initial tangent")
    r = np.empty_like(t)
    r[0] = r0 / np.linalg.norm(r0)
    for i in range(len(t) - 1):
        v1 = x[i + 1] - x[i]
        c1 = v1 @ v1
        rL = r[i] - (2.0 / c1) * (v1 @ r[i]) * v1
        tL = t[i] - (2.0 / c1) * (v1 @ t[i]) * v1
        v2 = t[i + 1] - tL
        c2 = v2 @ v2
        r[i + 1] = rL if c2 < 1e-300 else rL - (2.0 / c2) * (v2 @ rL) * v2
    R = np.stack([t, r, np.cross(t, r)], axis=-1)
    R = polar_rotation(R)
    # polar projection may tilt the first column slightly; restore R0 e1 = gamma'
    R = _align_first_column(R, t)
    if twist:
        R = R @ rot_x(twist * curve.s)
    return frame_from_matrices(curve.s, R)


def _align_first_column(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    n2 = R[:, :, 1] - np.sum(R[:, :, 1] * t, axis=1, keepdims=True) * t
    n2 /= np.linalg.norm(n2, axis=1, keepdims=True)
    return np.stack([t, n2, np.cross(t, n2)], axis=-1)


# ---------------------------------------------------------------------------
# cross-sections

_QUAD3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_QUAD3_W = np.full(3, 1 / 3)
_QUAD1_BARY = np.array([[1 / 3, 1 / 3, 1 / 3]])
_QUAD1_W = np.array([1.0])


@dataclass(frozen=True)
class SectionQuadrature:
    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)
    tri: np.ndarray  # (n,) owning triangle
    bary: np.ndarray  # (n, 3)
    per_triangle: int


@dataclass(frozen=True)
class CrossSectionMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2 or t.ndim != 2 or t.shape[1] != 3:
            raise GeometryError("mesh arrays have wrong shape")
        if t.min() < 0 or t.max() >= len(v):
            raise GeometryError("triangle index out of range")
        a = _signed_areas(v, t)
        t = t.copy()
        flip = a < 0
        t[flip] = t[flip][:, [0, 2, 1]]
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def triangle_areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    def moments(self) -> dict:
        """Exact polygon moments: area, int xi, int zeta, int xi^2, int zeta^2, int xi*zeta."""
        P = self.vertices[self.triangles]
        A = self.triangle_areas
        sx, sy = P[..., 0].sum(1), P[..., 1].sum(1)
        xx = (sx * sx + (P[..., 0] ** 2).sum(1)) / 12
        yy = (sy * sy + (P[..., 1] ** 2).sum(1)) / 12
        xy = (sx * sy + (P[..., 0] * P[..., 1]).sum(1)) / 12
        return {
            "area": A.sum(),
            "xi": (A * sx).sum() / 3,
            "zeta": (A * sy).sum() / 3,
            "xi2": (A * xx).sum(),
            "zeta2": (A * yy).sum(),
            "xizeta": (A * xy).sum(),
        }

    def gradients(self) -> np.ndarray:
        """Constant P1 shape-function gradients, shape (nt, 3 vertices, 2)."""
        P = self.vertices[self.triangles]
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        # inverse-transpose of the affine map's Jacobian
        g1 = np.stack([e2[:, 1], -e2[:, 0]], -1) / det[:, None]
        g2 = np.stack([-e1[:, 1], e1[:, 0]], -1) / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    def quadrature(self, points_per_triangle: int = 3) -> SectionQuadrature:
        if points_per_triangle == 3:
            bary, w = _QUAD3_BARY, _QUAD3_W
        elif points_per_triangle == 1:
            bary, w = _QUAD1_BARY, _QUAD1_W
        else:
            raise ValueError("supported rules: 1 or 3 points per triangle")
        P = self.vertices[self.triangles]
        pts = np.einsum("qa,tad->tqd", bary, P)
        weights = self.triangle_areas[:, None] * w[None, :]
        nt, nq = len(P), len(w)
        return SectionQuadrature(
            points=pts.reshape(-1, 2),
            weights=weights.reshape(-1),
            tri=np.repeat(np.arange(nt), nq),
            bary=np.tile(bary, (nt, 1)),
            per_triangle=nq,
        )

    def is_connected(self) -> bool:
        t = self.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices,) * 2)
        n, _ = connected_components(adj, directed=False)
        return n == 1

    def refine(self) -> "CrossSectionMesh":
        """Uniform red refinement: every triangle split into four (nested meshes)."""
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T + self.n_vertices
        mids = 0.5 * (self.vertices[uniq[:, 0]] + self.vertices[uniq[:, 1]])
        m01, m12, m20 = inv[:, 0], inv[:, 1], inv[:, 2]
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        new_t = np.concatenate(
            [
                np.stack([a, m01, m20], 1),
                np.stack([m01, b, m12], 1),
                np.stack([m20, m12, c], 1),
                np.stack([m01, m12, m20], 1),
            ]
        )
        return CrossSectionMesh(np.vstack([self.vertices, mids]), new_t)


def _signed_areas(v, t):
    P = v[t]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(frozen=True)
class AffineMap2D:
    """x_new = matrix @ (x_old - shift)."""

    matrix: np.ndarray
    shift: np.ndarray

    def __call__(self, x):
        return (np.asarray(x) - self.shift) @ self.matrix.T


def normalize_cross_section(raw: CrossSectionMesh, tol: float = 1e-10):
    """Translate to the centroid, rotate to principal axes, scale to unit area.

    Returns ``(mesh, affine_map)``. Axis-aligned, centred, unit-area sections
    come back unchanged (identity map).
    """
    m = raw.moments()
    area = m["area"]
    if not area > 0 or not np.isfinite(area):
        raise GeometryError("degenerate cross-section (zero area)")
    if not raw.is_connected():
        raise GeometryError("cross-section mesh is not connected")
    c = np.array([m["xi"], m["zeta"]]) / area
    if np.all(np.abs(c) <= tol * np.sqrt(area)):
        c = np.zeros(2)
    # central second moments
    ixx = m["xi2"] - area * c[0] ** 2
    iyy = m["zeta2"] - area * c[1] ** 2
    ixy = m["xizeta"] - area * c[0] * c[1]
    if abs(ixy) <= tol * (ixx + iyy):
        rot = np.eye(2)
    else:
        th = 0.5 * np.arctan2(2 * ixy, ixx - iyy)
        ct, st = np.cos(th), np.sin(th)
        rot = np.array([[ct, st], [-st, ct]])
    scale = 1.0 if abs(area - 1.0) <= tol else 1.0 / np.sqrt(area)
    A = scale * rot
    amap = AffineMap2D(A, c)
    return CrossSectionMesh(amap(raw.vertices), raw.triangles), amap


def disc_mesh(n_triangles: int = 2000, radius: float = 1.0 / np.sqrt(np.pi)) -> CrossSectionMesh:
    """Ring mesh of a disc with 6-fold symmetry; 6*k^2 triangles for k rings.

    Boundary vertices lie on the circle; the polygon is then rescaled to unit
    area and re-centred.
    """
    k = max(1, int(round(np.sqrt(n_triangles / 6.0))))
    verts = [np.zeros(2)]
    rings = [np.array([0])]
    for j in range(1, k + 1):
        m = 6 * j
        ang = 2 * np.pi * np.arange(m) / m
        start = len(verts)
        verts.extend(radius * j / k * np.stack([np.cos(ang), np.sin(ang)], -1))
        rings.append(np.arange(start, start + m))
    verts = np.array(verts)
    tris = []
    for j in range(1, k + 1):
        inner, outer = rings[j - 1], rings[j]
        if j == 1:
            for a in range(6):
                tris.append([0, outer[a], outer[(a + 1) % 6]])
            continue
        ni, no = len(inner), len(outer)
        i = o = 0
        while i < ni or o < no:
            ai = (i + 1) / ni
            ao = (o + 1) / no
            if o < no and (i >= ni or ao <= ai + 1e-12):
                tris.append([inner[i % ni], outer[o % no], outer[(o + 1) % no]])
                o += 1
            else:
                tris.append([inner[i % ni], outer[o % no], inner[(i + 1) % ni]])
                i += 1
    mesh = CrossSectionMesh(verts, np.array(tris))
    return normalize_cross_section(mesh)[0]


def rectangle_mesh(n_triangles: int = 2000, width: float = 1.0, height: float = 1.0) -> CrossSectionMesh:
    """Structured rectangle mesh, four triangles per cell around a centre vertex."""
    aspect = width / height
    ny = max(1, int(round(np.sqrt(n_triangles / (4.0 * aspect)))))
    nx = max(1, int(round(ny * aspect)))
    xs = np.linspace(-width / 2, width / 2, nx + 1)
    ys = np.linspace(-height / 2, height / 2, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    corners = np.stack([X.ravel(), Y.ravel()], -1)
    cx = 0.5 * (xs[1:] + xs[:-1])
    cy = 0.5 * (ys[1:] + ys[:-1])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    centres = np.stack([CX.ravel(), CY.ravel()], -1)
    verts = np.vstack([corners, centres])
    n0 = len(corners)
    idx = lambda i, j: i * (ny + 1) + j  # noqa: E731
    tris = []
    for i in range(nx):
        for j in range(ny):
            c = n0 + i * ny + j
            a, b, d, e = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [[a, b, c], [b, d, c], [d, e, c], [e, a, c]]
    mesh = CrossSectionMesh(verts, np.array(tris))
    return normalize_cross_section(mesh)[0]


def read_mesh(path) -> CrossSectionMesh:
    """Plain-text mesh: header ``nv nt``, nv lines ``xi zeta``, nt lines ``i j k``."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        nv, nt = int(lines[0][0]), int(lines[0][1])
        v = np.array([[float(a) for a in ln[:2]] for ln in lines[1 : 1 + nv]])
        t = np.array([[int(a) for a in ln[:3]] for ln in lines[1 + nv : 1 + nv + nt]])
    except (IndexError, ValueError) as exc:
        raise GeometryError(f"malformed mesh file {path}: {exc}") from exc
    if len(v) != nv or len(t) != nt:
        raise GeometryError(f"mesh file {path} is truncated")
    return CrossSectionMesh(v, t)


def write_mesh(mesh: CrossSectionMesh, path) -> None:
    out = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# thin-tube chart


@dataclass(frozen=True)
class ReferenceGeometry:
    curve: ParamCurve
    frame: FrameField
    section: Optional[CrossSectionMesh] = None

    @property
    def length(self) -> float:
        return self.curve.length

    def frames(self, s):
        """(R0, R0') at arbitrary s; analytic-grade for straight lines."""
        if self.curve.kind == "line" and np.allclose(self.frame.dR, 0.0) and np.allclose(
            self.frame.R, self.frame.R[0]
        ):
            s = np.atleast_1d(s)
            R = np.broadcast_to(self.frame.R[0], s.shape + (3, 3)).copy()
            return R, np.zeros_like(R)
        return self.frame.at(s)

    def psi_h(self, s, xi, zeta, h: float) -> np.ndarray:
        """Point gamma(s) + h xi nu2(s) + h zeta nu3(s); broadcasts over s, xi, zeta."""
        if h < 0:
            raise GeometryError("h must be nonnegative")
        s, xi, zeta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, xi, zeta)))
        if np.any(s < -1e-12) or np.any(s > self.length + 1e-12):
            raise GeometryError("s outside [0, L]")
        g = self.curve.evaluate(s.ravel())[0]
        R, _ = self.frames(s.ravel())
        out = g + h * (xi.ravel()[:, None] * R[:, :, 1] + zeta.ravel()[:, None] * R[:, :, 2])
        return out.reshape(s.shape + (3,))

    def grad_h_psi(self, s, xi, zeta, h: float):
        """Scaled gradient R0 + h (xi nu2' + zeta nu3') x e1, its inverse and determinant.

        Raises ChartError where the determinant is not positive.
        """
        s, xi, zeta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, xi, zeta)))
        R, dR = self.frames(s.ravel())
        shape = s.shape
        R = R.reshape(shape + (3, 3))
        dR = dR.reshape(shape + (3, 3))
        G = R.copy()
        G[..., :, 0] += h * (xi[..., None] * dR[..., :, 1] + zeta[..., None] * dR[..., :, 2])
        det = np.linalg.det(G)
        if np.any(det <= 1e-12):
            raise ChartError(f"chart not injective at this h (min det {det.min():.3e})")
        return G, np.linalg.inv(G), det

    def inverse_expansion(self, s, xi, zeta, h: float) -> np.ndarray:
        """First-order expansion R0^T - h R0^T [(xi nu2' + zeta nu3') x e1] R0^T."""
        s, xi, zeta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, xi, zeta)))
        R, dR = self.frames(s.ravel())
        R = R.reshape(s.shape + (3, 3))
        dR = dR.reshape(s.shape + (3, 3))
        Rt = np.swapaxes(R, -1, -2)
        a = xi[..., None] * dR[..., :, 1] + zeta[..., None] * dR[..., :, 2]
        E = np.zeros(s.shape + (3, 3))
        E[..., :, 0] = a
        return Rt - h * Rt @ E @ Rt
