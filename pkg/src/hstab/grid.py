"""Graded (r, t) grids for functions of ``(|z|, t)`` on H^n.

On functions of ``r = |z|`` and ``t`` the sub-Laplacian reduces to

    L u = u_rr + (2n-1)/r u_r + 4 r^2 u_tt,

since the rotation term ``sum_j (y_j d_xj - x_j d_yj) d_t`` annihilates such
functions.  Multiplying by the Haar density ``omega r^(2n-1)`` gives the
divergence form

    omega r^(2n-1) L u = d_r(omega r^(2n-1) u_r) + d_t(4 omega r^(2n+1) u_t),

which is discretized by vertex-centered finite volumes.  Each node owns the
dual box between the midpoints to its neighbours; the first r-face sits at
``r = 0`` (even reflection, zero flux) and the outer faces sit on the box
boundary, where a ghost node carries the Dirichlet value.  The result is a
symmetric positive definite stiffness matrix ``A`` and a diagonal mass ``M``
with ``A ~ -M L``.
"""
from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ._validation import GridFormatError, check_positive, check_same_grid
from .group import Dimension
from .quadrature import sphere_area

MAGIC = b"HGF1"


def _place(density_scales, centers, lo, hi, count, fine=4096):
    """Nodes with spacing proportional to ``min_k(scale_k + |x - c_k|)``.

    The cumulative density ``phi(x) = int dx / s(x)`` is tabulated on a fine
    geometric-friendly mesh and inverted at ``(k - 1/2) Phi / count``.
    """
    knots = [np.linspace(lo, hi, fine)]
    for c, s in zip(centers, density_scales):
        g = s * np.geomspace(1e-3, max((hi - lo) / s, 1e-2) + 1.0, fine // 2)
        knots.append(np.clip(np.r_[c - g, c, c + g], lo, hi))
    x = np.unique(np.concatenate(knots))
    mon = np.min([s + np.abs(x - c) for c, s in zip(centers, density_scales)], axis=0)
    dens = 1.0 / mon
    phi = np.r_[0.0, np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))]
    targets = (np.arange(count) + 0.5) / count * phi[-1]
    return np.interp(targets, phi, x)


@dataclass(frozen=True, eq=False)
class AxiGrid:
    """Tensor grid of nodes ``r_nodes x t_nodes`` with finite-volume weights.

    Use :func:`build_grid` to construct one.  The box ``[0, R] x [T_min, T_max]``
    is implied by the nodes: outer faces lie half a spacing beyond the last
    nodes.
    """

    dim: Dimension
    r_nodes: np.ndarray
    t_nodes: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        r = np.array(self.r_nodes, dtype=float)
        t = np.array(self.t_nodes, dtype=float)
        if r.size < 3 or t.size < 3:
            raise ValueError("grid too small for the stencil (need at least 3 nodes per direction)")
        if r[0] <= 0 or np.any(np.diff(r) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("nodes must be strictly increasing with r_1 > 0")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("nodes must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r_nodes", r)
        object.__setattr__(self, "t_nodes", t)

    # geometry
    @property
    def n(self) -> int:
        return self.dim.n

    @property
    def shape(self):
        return (self.r_nodes.size, self.t_nodes.size)

    @property
    def size(self) -> int:
        return self.r_nodes.size * self.t_nodes.size

    @cached_property
    def r_faces(self) -> np.ndarray:
        r = self.r_nodes
        return np.r_[0.0, 0.5 * (r[1:] + r[:-1]), r[-1] + 0.5 * (r[-1] - r[-2])]

    @cached_property
    def t_faces(self) -> np.ndarray:
        t = self.t_nodes
        return np.r_[t[0] - 0.5 * (t[1] - t[0]), 0.5 * (t[1:] + t[:-1]), t[-1] + 0.5 * (t[-1] - t[-2])]

    @property
    def R(self) -> float:
        return float(self.r_faces[-1])

    @property
    def T_min(self) -> float:
        return float(self.t_faces[0])

    @property
    def T_max(self) -> float:
        return float(self.t_faces[-1])

    @cached_property
    def r_ghost(self) -> float:
        r = self.r_nodes
        return float(2 * r[-1] - r[-2])

    @cached_property
    def t_ghosts(self):
        t = self.t_nodes
        return float(2 * t[0] - t[1]), float(2 * t[-1] - t[-2])

    @cached_property
    def weights(self) -> np.ndarray:
        """Haar volume of each dual box, shape ``(Nr, Nt)``."""
        n = self.n
        f = self.r_faces
        radial = sphere_area(n) * np.diff(f ** (2 * n)) / (2 * n)
        radial.setflags(write=False)
        w = np.outer(radial, np.diff(self.t_faces))
        w.setflags(write=False)
        return w

    def box_volume(self) -> float:
        n = self.n
        return sphere_area(n) * self.R ** (2 * n) / (2 * n) * (self.T_max - self.T_min)

    @cached_property
    def _coefficients(self):
        """Face transmissibilities: interior r-faces, outer r-face, interior
        t-faces, and the two outer t-faces."""
        n = self.n
        om = sphere_area(n)
        r, t = self.r_nodes, self.t_nodes
        rf, tf = self.r_faces, self.t_faces
        dtau = np.diff(tf)
        cr = om * rf[1:-1, None] ** (2 * n - 1) / np.diff(r)[:, None] * dtau[None, :]
        cr_out = om * rf[-1] ** (2 * n - 1) / (self.r_ghost - r[-1]) * dtau
        ring = om * 4.0 * np.diff(rf ** (2 * n + 2)) / (2 * n + 2)
        ct = ring[:, None] / np.diff(t)[None, :]
        lo, hi = self.t_ghosts
        ct_lo = ring / (t[0] - lo)
        ct_hi = ring / (hi - t[-1])
        return cr, cr_out, ct, ct_lo, ct_hi

    @cached_property
    def stiffness(self) -> sp.csc_matrix:
        """Symmetric positive definite matrix ``A`` with ``u.A.v = (u, v)_D1``
        for grid functions vanishing outside the box."""
        nr, nt = self.shape
        idx = np.arange(self.size).reshape(nr, nt)
        cr, cr_out, ct, ct_lo, ct_hi = self._coefficients
        diag = np.zeros((nr, nt))
        diag[:-1] += cr
        diag[1:] += cr
        diag[-1] += cr_out
        diag[:, :-1] += ct
        diag[:, 1:] += ct
        diag[:, 0] += ct_lo
        diag[:, -1] += ct_hi
        rows = [idx.ravel(), idx[:-1].ravel(), idx[1:].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols = [idx.ravel(), idx[1:].ravel(), idx[:-1].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        vals = [diag.ravel(), -cr.ravel(), -cr.ravel(), -ct.ravel(), -ct.ravel()]
        a = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size))
        return a.tocsc()

    @property
    def mass(self) -> np.ndarray:
        """Diagonal of the mass matrix, flattened in row-major (r) order."""
        return self.weights.ravel()

    def mesh(self):
        """``(R, T)`` node coordinate arrays of shape ``(Nr, Nt)``."""
        return np.meshgrid(self.r_nodes, self.t_nodes, indexing="ij")

    def same_as(self, other: "AxiGrid") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.r_nodes, other.r_nodes)
            and np.array_equal(self.t_nodes, other.t_nodes)
        )

    def describe(self) -> dict:
        return {
            "n": self.n,
            "nr": int(self.shape[0]),
            "nt": int(self.shape[1]),
            "R": self.R,
            "T_min": self.T_min,
            "T_max": self.T_max,
            "r_min_spacing": float(self.r_nodes[0] * 2),
            "t_min_spacing": float(np.diff(self.t_nodes).min()),
        }


def build_grid(dim, R: float, T_min: float, T_max: float, resolution: int, centers=((0.0, 0.0),), scales=None, core=1.0):
    """Build a grid graded toward ``r = 0`` and toward each center.

    Parameters
    ----------
    dim : Dimension or int
    R, T_min, T_max : float
        Box ``[0, R] x [T_min, T_max]``.
    resolution : int
        Nodes per direction (at least 16).
    centers : sequence of (r, t)
        Concentration points; only ``r = 0`` centers are supported.
    scales : sequence of float, optional
        Bubble scale ``lam`` of each center.  The core half-width is
        ``core/lam`` in ``r`` and ``core/lam^2`` in ``t``.

    Returns
    -------
    AxiGrid
    """
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    check_positive(R, "R")
    if not T_max > T_min:
        raise ValueError("T_max must exceed T_min")
    if int(resolution) != resolution or resolution < 16:
        raise ValueError("resolution must be an integer >= 16")
    centers = [tuple(map(float, c)) for c in centers]
    if not centers:
        raise ValueError("at least one center is required")
    for r0, t0 in centers:
        if r0 != 0.0:
            raise ValueError("centers must lie on the t-axis (r = 0)")
        if not T_min < t0 < T_max:
            raise ValueError(f"center t={t0} lies outside [{T_min}, {T_max}]")
    lams = np.ones(len(centers)) if scales is None else np.asarray(scales, dtype=float)
    if lams.size != len(centers) or np.any(lams <= 0):
        raise ValueError("one positive scale per center is required")
    N = int(resolution)

    r_width = core / lams.max()
    r = _place([r_width], [0.0], 0.0, R, N)
    # outer face at R: r_N + (r_N - r_{N-1})/2 = R after rescaling
    r *= R / (r[-1] + 0.5 * (r[-1] - r[-2]))

    tcs = [c[1] for c in centers]
    t = _place(list(core / lams**2), tcs, T_min, T_max, N)
    lo = t[0] - 0.5 * (t[1] - t[0])
    hi = t[-1] + 0.5 * (t[-1] - t[-2])
    t = T_min + (t - lo) * (T_max - T_min) / (hi - lo)
    return AxiGrid(dim, r, t)


@dataclass(frozen=True, eq=False)
class GridFn:
    """Values of an axisymmetric function at the nodes of a grid."""

    grid: AxiGrid
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        object.__setattr__(self, "values", v.reshape(self.grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _wrap(self, v, tag=""):
        return GridFn(self.grid, v, tag)

    def _other(self, o):
        if isinstance(o, GridFn):
            check_same_grid(self, o)
            return o.values
        return o

    def __add__(self, o):
        return self._wrap(self.values + self._other(o))

    __radd__ = __add__

    def __sub__(self, o):
        return self._wrap(self.values - self._other(o))

    def __rsub__(self, o):
        return self._wrap(self._other(o) - self.values)

    def __mul__(self, o):
        return self._wrap(self.values * self._other(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self._wrap(self.values / self._other(o))

    def __neg__(self):
        return self._wrap(-self.values)

    def __pow__(self, e):
        return self._wrap(self.values**e)

    def abs(self):
        return self._wrap(np.abs(self.values))

    def boundary_max(self) -> float:
        v = self.values
        return float(max(np.abs(v[-1]).max(), np.abs(v[:, 0]).max(), np.abs(v[:, -1]).max()))


def sample(grid: AxiGrid, func, tag: str = "") -> GridFn:
    """Evaluate ``func(r, t)`` at every node."""
    R, T = grid.mesh()
    return GridFn(grid, np.broadcast_to(func(R, T), grid.shape), tag)


def apply_sublap(grid: AxiGrid, u: GridFn, boundary: str = "extrapolate") -> GridFn:
    """Discrete ``L u`` at the nodes.

    ``boundary="dirichlet"`` treats values outside the box as zero, so that
    ``apply_sublap = -M^{-1} A u``; ``"extrapolate"`` continues ``u`` linearly
    into the ghost nodes, so constants and ``t`` are mapped to zero.
    """
    if u.grid is not grid and not u.grid.same_as(grid):
        raise ValueError("grid function lives on a different grid")
    v = u.values
    cr, cr_out, ct, ct_lo, ct_hi = grid._coefficients
    flux_r = cr * np.diff(v, axis=0)
    flux_t = ct * np.diff(v, axis=1)
    div = np.zeros(grid.shape)
    div[:-1] += flux_r
    div[1:] -= flux_r
    div[:, :-1] += flux_t
    div[:, 1:] -= flux_t
    if boundary == "dirichlet":
        div[-1] -= cr_out * v[-1]
        div[:, 0] -= ct_lo * v[:, 0]
        div[:, -1] -= ct_hi * v[:, -1]
    elif boundary == "extrapolate":
        r, t = grid.r_nodes, grid.t_nodes
        lo, hi = grid.t_ghosts
        div[-1] += cr_out * (v[-1] - v[-2]) * (grid.r_ghost - r[-1]) / (r[-1] - r[-2])
        div[:, 0] -= ct_lo * (v[:, 1] - v[:, 0]) * (t[0] - lo) / (t[1] - t[0])
        div[:, -1] += ct_hi * (v[:, -1] - v[:, -2]) * (hi - t[-1]) / (t[-1] - t[-2])
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    return GridFn(grid, div / grid.weights, "sublap")


def integrate(grid: AxiGrid, u) -> float:
    """Haar integral ``sum(weights * values)``."""
    v = u.values if isinstance(u, GridFn) else np.asarray(u)
    return float(np.sum(grid.weights * v))


def _decay_check(u: GridFn, name: str, rtol: float = 1e-3):
    peak = float(np.abs(u.values).max())
    if peak > 0 and u.boundary_max() > rtol * peak:
        warnings.warn(f"{name} does not decay at the box boundary ({u.boundary_max() / peak:.2e} of max)", RuntimeWarning, stacklevel=3)


def d1_inner(grid: AxiGrid, u: GridFn, v: GridFn, check: bool = True) -> float:
    """Discrete ``(u, v)_D1 = int u (-L v)``, i.e. ``u . A . v``."""
    check_same_grid(u, v)
    if check:
        _decay_check(u, "first argument")
        _decay_check(v, "second argument")
    return float(u.flat @ (grid.stiffness @ v.flat))


def d1_norm(grid: AxiGrid, u: GridFn, check: bool = True) -> float:
    return float(np.sqrt(max(d1_inner(grid, u, u, check), 0.0)))


# -- HGF1 files ---------------------------------------------------------------


def save_gridfn(u: GridFn, path) -> None:
    """Write a grid function in the HGF1 binary layout."""
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", g.n, *g.shape))
        fh.write(np.ascontiguousarray(g.r_nodes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(g.t_nodes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_gridfn(path) -> GridFn:
    """Read an HGF1 file; raises :class:`GridFormatError` on malformed input."""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_gridfn(data)


def parse_gridfn(data: bytes) -> GridFn:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise GridFormatError("bad magic bytes, expected HGF1")
    head = buf.read(12)
    if len(head) != 12:
        raise GridFormatError("truncated header")
    n, nr, nt = struct.unpack("<III", head)
    if n < 1 or nr < 3 or nt < 3:
        raise GridFormatError(f"invalid header n={n} nr={nr} nt={nt}")
    need = 8 * (nr + nt + nr * nt)
    body = buf.read()
    if len(body) != need:
        raise GridFormatError(f"expected {need} payload bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f8").astype(float)
    r, t, v = arr[:nr], arr[nr : nr + nt], arr[nr + nt :]
    try:
        grid = AxiGrid(Dimension(n), r, t)
    except ValueError as exc:
        raise GridFormatError(str(exc)) from exc
    return GridFn(grid, v.reshape(nr, nt))
