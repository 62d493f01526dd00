"""Independent finite-difference reference solver for the annulus problem.

Solves the steady cylindrical Laplace problem on the body-fitted (s, theta, z)
grid with second-order stencils, including the mixed s-theta term that the
chain rule produces on the wavy wall:

    d/dtheta|_r = d/dtheta|_s - (s g'(theta)/g(theta)) d/ds,   g = r_o - r_min

which turns the cylindrical Laplacian into

    A_ss T_ss + A_s T_s + A_st T_st + A_tt T_tt + T_zz = 0
    A_ss = 1/g^2 + a^2/r^2,            a = s g'/g
    A_s  = 1/(r g) + s (2 g'^2 - g'' g) / (r^2 g^2)
    A_st = -2 a / r^2
    A_tt = 1/r^2

Boundary rows: Dirichlet at the inlet plane (z = 0, default value 1) and the
inner wall (s = 0, value 1); one-sided second-order insulation at the outlet
(z = L); the prescribed wall-normal flux at s = 1 discretized with the same
one-sided radial stencil and central tangential correction that the wall
slice extraction uses.  Everything here is numpy/scipy; the solver shares
nothing with the network stack beyond the geometry constants.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .annulus import AnnulusGeometry, FluxProfile, problem_hash


def _flux_np(profile: FluxProfile, z: np.ndarray) -> np.ndarray:
    frac = (np.asarray(z) - profile.z1) / (profile.z2 - profile.z1)
    return profile.q_max * np.clip(frac, 0.0, 1.0)

WALL_MAGIC = b"RGWALLSL"
WALL_VERSION = 1

# Above this many unknowns the direct sparse LU gives way to ILU + GMRES.
_DIRECT_LIMIT = 80_000


class FdrefConvergenceError(RuntimeError):
    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass
class FDField:
    """Solved temperature field on the (s, theta, z) grid."""

    s_nodes: np.ndarray
    theta_nodes: np.ndarray
    z_nodes: np.ndarray
    values: np.ndarray
    geometry: AnnulusGeometry
    flux: FluxProfile
    convergence: dict

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class WallSlice:
    """Outer-wall temperature and wall-normal derivative on (theta, z) nodes."""

    theta_nodes: np.ndarray
    z_nodes: np.ndarray
    t_wall: np.ndarray
    dtdn_wall: np.ndarray
    problem: dict | None = None

    def __post_init__(self):
        expected = (len(self.theta_nodes), len(self.z_nodes))
        if self.t_wall.shape != expected or self.dtdn_wall.shape != expected:
            raise ValueError("wall slice arrays must have shape (n_theta, n_z)")


def _geometry_arrays(geom: AnnulusGeometry, theta: np.ndarray):
    lo = geom.lobes
    g = geom.r_max + geom.amplitude * np.sin(lo * theta) - geom.r_min
    gp = geom.amplitude * lo * np.cos(lo * theta)
    gpp = -geom.amplitude * lo * lo * np.sin(lo * theta)
    return g, gp, gpp


def solve_reference(
    n_s: int,
    n_theta: int,
    n_z: int,
    geometry: AnnulusGeometry,
    flux_profile: FluxProfile,
    tol: float = 1e-10,
    inlet_profile: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 20_000,
) -> FDField:
    """Solve the mapped steady conduction problem to relative residual <= tol.

    ``inlet_profile`` optionally replaces the default unit inlet temperature
    with a radius-dependent Dirichlet value (used by the axisymmetric
    validation, where the compatible inlet is the analytic radial profile).
    """
    if n_s < 5 or n_theta < 8 or n_z < 5:
        raise ValueError("grid must be at least (5, 8, 5)")
    if tol <= 0:
        raise ValueError("tol must be positive")

    L = geometry.length
    s = np.linspace(0.0, 1.0, n_s)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    z = np.linspace(0.0, L, n_z)
    ds = s[1] - s[0]
    dth = theta[1] - theta[0]
    dz = z[1] - z[0]

    g, gp, gpp = _geometry_arrays(geometry, theta)
    S, G = np.meshgrid(s, g, indexing="ij")
    _, GP = np.meshgrid(s, gp, indexing="ij")
    _, GPP = np.meshgrid(s, gpp, indexing="ij")
    R = geometry.r_min + S * G
    A = S * GP / G
    A_ss = 1.0 / G**2 + A**2 / R**2
    A_s = 1.0 / (R * G) + S * (2.0 * GP**2 - GPP * G) / (R**2 * G**2)
    A_st = -2.0 * A / R**2
    A_tt = 1.0 / R**2

    def idx(i, j, k):
        return (i * n_theta + j % n_theta) * n_z + k

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    n_total = n_s * n_theta * n_z
    rhs = np.zeros(n_total)

    def add(r, c, v):
        rows.append(np.ravel(r))
        cols.append(np.ravel(c))
        vals.append(np.ravel(v))

    # Interior rows: i in 1..n_s-2, all j (periodic), k in 1..n_z-2.
    ii, jj, kk = np.meshgrid(
        np.arange(1, n_s - 1), np.arange(n_theta), np.arange(1, n_z - 1), indexing="ij"
    )
    center = idx(ii, jj, kk)
    c_ss = A_ss[ii, jj] / ds**2
    c_s = A_s[ii, jj] / (2.0 * ds)
    c_tt = A_tt[ii, jj] / dth**2
    c_st = A_st[ii, jj] / (4.0 * ds * dth)
    add(center, center, -2.0 * c_ss - 2.0 * c_tt - 2.0 / dz**2)
    add(center, idx(ii + 1, jj, kk), c_ss + c_s)
    add(center, idx(ii - 1, jj, kk), c_ss - c_s)
    add(center, idx(ii, jj + 1, kk), c_tt)
    add(center, idx(ii, jj - 1, kk), c_tt)
    add(center, idx(ii, jj, kk + 1), np.full(ii.shape, 1.0 / dz**2))
    add(center, idx(ii, jj, kk - 1), np.full(ii.shape, 1.0 / dz**2))
    add(center, idx(ii + 1, jj + 1, kk), c_st)
    add(center, idx(ii - 1, jj - 1, kk), c_st)
    add(center, idx(ii + 1, jj - 1, kk), -c_st)
    add(center, idx(ii - 1, jj + 1, kk), -c_st)

    # Inlet plane z = 0: Dirichlet (default 1, else the supplied profile of r).
    ii, jj = np.meshgrid(np.arange(n_s), np.arange(n_theta), indexing="ij")
    rid = idx(ii, jj, np.zeros_like(ii))
    add(rid, rid, np.ones(rid.size))
    if inlet_profile is None:
        rhs[np.ravel(rid)] = 1.0
    else:
        rhs[np.ravel(rid)] = np.ravel(inlet_profile(R[ii, jj]))

    # Inner wall s = 0 (k >= 1): Dirichlet 1.
    jj, kk = np.meshgrid(np.arange(n_theta), np.arange(1, n_z), indexing="ij")
    rid = idx(np.zeros_like(jj), jj, kk)
    add(rid, rid, np.ones(rid.size))
    rhs[np.ravel(rid)] = 1.0

    # Outlet z = L (i >= 1): one-sided second-order dT/dz = 0.
    ii, jj = np.meshgrid(np.arange(1, n_s), np.arange(n_theta), indexing="ij")
    kk = np.full_like(ii, n_z - 1)
    rid = idx(ii, jj, kk)
    add(rid, rid, np.full(rid.shape, 3.0 / (2.0 * dz)))
    add(rid, idx(ii, jj, kk - 1), np.full(rid.shape, -4.0 / (2.0 * dz)))
    add(rid, idx(ii, jj, kk - 2), np.full(rid.shape, 1.0 / (2.0 * dz)))

    # Outer wall s = 1 (1 <= k <= n_z-2): normal derivative equals q(z).
    jj, kk = np.meshgrid(np.arange(n_theta), np.arange(1, n_z - 1), indexing="ij")
    ii = np.full_like(jj, n_s - 1)
    rid = idx(ii, jj, kk)
    r_wall = geometry.r_min + g  # r_o(theta)
    nrm = np.sqrt(1.0 + (gp / r_wall) ** 2)
    c_s = ((1.0 / g) * (1.0 + gp**2 / r_wall**2) / nrm)[jj] / (2.0 * ds)
    c_t = (-(gp / r_wall**2) / nrm)[jj] / (2.0 * dth)
    add(rid, rid, 3.0 * c_s)
    add(rid, idx(ii - 1, jj, kk), -4.0 * c_s)
    add(rid, idx(ii - 2, jj, kk), c_s)
    add(rid, idx(ii, jj + 1, kk), c_t)
    add(rid, idx(ii, jj - 1, kk), -c_t)
    rhs[np.ravel(rid)] = np.ravel(_flux_np(flux_profile, z[kk]))

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_total, n_total),
    ).tocsr()

    b_norm = np.linalg.norm(rhs)
    history: list[float] = []
    if n_total <= _DIRECT_LIMIT:
        x = spla.spsolve(mat, rhs)
        method = "sparse_lu"
        iterations = 1
    else:
        ilu = spla.spilu(mat.tocsc(), drop_tol=1e-5, fill_factor=20)
        prec = spla.LinearOperator(mat.shape, ilu.solve)
        count = {"n": 0}

        def cb(res):
            count["n"] += 1
            history.append(float(res))

        x, info = spla.gmres(
            mat, rhs, rtol=tol / 10, atol=0.0, M=prec, maxiter=max_iter, restart=80,
            callback=cb, callback_type="pr_norm",
        )
        if info != 0:
            raise FdrefConvergenceError(
                f"GMRES did not converge (info={info}) within {max_iter} iterations",
                history,
            )
        method = "ilu_gmres"
        iterations = count["n"]

    rel_res = float(np.linalg.norm(mat @ x - rhs) / b_norm)
    if rel_res > tol:
        raise FdrefConvergenceError(
            f"linear solve residual {rel_res:.3e} above tolerance {tol:.3e}", history or [rel_res]
        )
    values = x.reshape(n_s, n_theta, n_z)
    if not np.all(np.isfinite(values)):
        raise FdrefConvergenceError("solution contains non-finite values", history)
    return FDField(
        s_nodes=s,
        theta_nodes=theta,
        z_nodes=z,
        values=values,
        geometry=geometry,
        flux=flux_profile,
        convergence={"method": method, "rel_residual": rel_res, "iterations": iterations},
    )


def wall_slice(field: FDField) -> WallSlice:
    """Outer-wall T and normal derivative, extracted with the solver's stencils."""
    T = field.values
    n_s = T.shape[0]
    if n_s < 3:
        raise ValueError("field too small for one-sided wall extraction")
    ds = field.s_nodes[1] - field.s_nodes[0]
    dth = field.theta_nodes[1] - field.theta_nodes[0]
    g, gp, _ = _geometry_arrays(field.geometry, field.theta_nodes)
    r_wall = field.geometry.r_min + g
    nrm = np.sqrt(1.0 + (gp / r_wall) ** 2)

    t_wall = T[n_s - 1]
    t_s = (3.0 * T[n_s - 1] - 4.0 * T[n_s - 2] + T[n_s - 3]) / (2.0 * ds)
    t_th = (np.roll(t_wall, -1, axis=0) - np.roll(t_wall, 1, axis=0)) / (2.0 * dth)
    coef_s = (1.0 / g) * (1.0 + gp**2 / r_wall**2) / nrm
    coef_t = -(gp / r_wall**2) / nrm
    dtdn = coef_s[:, None] * t_s + coef_t[:, None] * t_th
    return WallSlice(
        theta_nodes=field.theta_nodes.copy(),
        z_nodes=field.z_nodes.copy(),
        t_wall=t_wall.copy(),
        dtdn_wall=dtdn,
        problem={"geometry": field.geometry.descriptor(), "flux": field.flux.descriptor()},
    )


def radial_log_profile(geometry: AnnulusGeometry, q_const: float) -> Callable[[np.ndarray], np.ndarray]:
    """Analytic axisymmetric solution 1 + q r_max ln(r / r_min).

    Valid when the wall amplitude is zero: harmonic, unit value at the inner
    wall, radial derivative q at r = r_max, and z-independent.
    """
    if geometry.amplitude != 0.0:
        raise ValueError("radial profile is exact only for the circular wall variant")

    def profile(r):
        return 1.0 + q_const * geometry.r_max * np.log(np.asarray(r) / geometry.r_min)

    return profile


@dataclass
class GridStudyRow:
    coarse: tuple[int, int, int]
    fine: tuple[int, int, int]
    rel_l2_field: float
    max_field: float
    rel_l2_t_wall: float
    max_t_wall: float
    rel_l2_dtdn_wall: float
    max_dtdn_wall: float

    def as_dict(self) -> dict:
        return {
            "coarse": list(self.coarse),
            "fine": list(self.fine),
            "rel_l2_field": self.rel_l2_field,
            "max_field": self.max_field,
            "rel_l2_t_wall": self.rel_l2_t_wall,
            "max_t_wall": self.max_t_wall,
            "rel_l2_dtdn_wall": self.rel_l2_dtdn_wall,
            "max_dtdn_wall": self.max_dtdn_wall,
        }


def _strides(coarse: tuple[int, int, int], fine: tuple[int, int, int]) -> tuple[int, int, int]:
    (sa, ta, za), (sb, tb, zb) = coarse, fine
    ok = (
        (sb - 1) % (sa - 1) == 0
        and tb % ta == 0
        and (zb - 1) % (za - 1) == 0
    )
    if not ok:
        raise ValueError(f"grids {coarse} -> {fine} are not nested")
    return (sb - 1) // (sa - 1), tb // ta, (zb - 1) // (za - 1)


def _rel_and_max(diff: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    denom = np.linalg.norm(ref)
    rel = float(np.linalg.norm(diff) / denom) if denom > 0 else float("nan")
    return rel, float(np.max(np.abs(diff)))


def grid_study(
    grids: Sequence[tuple[int, int, int]],
    geometry: AnnulusGeometry,
    flux_profile: FluxProfile,
    tol: float = 1e-10,
    inlet_profile: Callable | None = None,
) -> list[GridStudyRow]:
    """Field and wall-slice changes between consecutive nested grids."""
    if len(grids) < 2:
        raise ValueError("grid study needs at least two grids")
    fields = [
        solve_reference(*gr, geometry, flux_profile, tol=tol, inlet_profile=inlet_profile)
        for gr in grids
    ]
    out = []
    for fa, fb in zip(fields[:-1], fields[1:]):
        st, tt, zt = _strides(fa.shape, fb.shape)
        common_fine = fb.values[::st, ::tt, ::zt]
        rel_f, max_f = _rel_and_max(common_fine - fa.values, fa.values)
        wa, wb = wall_slice(fa), wall_slice(fb)
        tw_fine = wb.t_wall[::tt, ::zt]
        dn_fine = wb.dtdn_wall[::tt, ::zt]
        rel_tw, max_tw = _rel_and_max(tw_fine - wa.t_wall, wa.t_wall)
        rel_dn, max_dn = _rel_and_max(dn_fine - wa.dtdn_wall, wa.dtdn_wall)
        out.append(
            GridStudyRow(fa.shape, fb.shape, rel_f, max_f, rel_tw, max_tw, rel_dn, max_dn)
        )
    return out


def write_wall_slice(slc: WallSlice, path, geometry: AnnulusGeometry, flux_profile: FluxProfile) -> None:
    """Versioned little-endian wall-slice file; layout documented in the README."""
    n_theta, n_z = slc.t_wall.shape
    blob = json.dumps(
        {"geometry": geometry.descriptor(), "flux": flux_profile.descriptor()},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(WALL_MAGIC)
        fh.write(struct.pack("<B", WALL_VERSION))
        fh.write(struct.pack("<II", n_theta, n_z))
        fh.write(problem_hash(geometry, flux_profile))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(slc.theta_nodes, dtype="<f8").tobytes())
        fh.write(np.asarray(slc.z_nodes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(slc.t_wall, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(slc.dtdn_wall, dtype="<f8").tobytes())


def read_wall_slice(path) -> WallSlice:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != WALL_MAGIC:
            raise ValueError(f"bad wall-slice magic {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != WALL_VERSION:
            raise ValueError(f"unsupported wall-slice version {version}")
        n_theta, n_z = struct.unpack("<II", fh.read(8))
        fh.read(8)  # problem hash; descriptor JSON is authoritative for checks
        (blob_len,) = struct.unpack("<I", fh.read(4))
        problem = json.loads(fh.read(blob_len).decode())
        theta = np.frombuffer(fh.read(8 * n_theta), dtype="<f8")
        zed = np.frombuffer(fh.read(8 * n_z), dtype="<f8")
        t_wall = np.frombuffer(fh.read(8 * n_theta * n_z), dtype="<f8").reshape(n_theta, n_z)
        dtdn = np.frombuffer(fh.read(8 * n_theta * n_z), dtype="<f8").reshape(n_theta, n_z)
    return WallSlice(theta, zed, t_wall, dtdn, problem=problem)
