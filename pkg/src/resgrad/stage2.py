"""Wavy-annulus heat-conduction benchmark with the body-fitted shell.

Implements the cylindrical residual, the six-term objective (PDE, inner
wall, inlet, outlet, outer-wall flux, theta periodicity), the body-fitted
shell bank with metric-corrected finite differences of the sampled residual,
dense wall audits against the prescribed flux and against the independent
finite-difference wall reference, plus full-batch training.

As in the Poisson module, residual-consuming operations accept either
``NetworkParams`` or a callable ``(3,) array (r, theta, z) -> scalar`` so
closed-form fields can stand in for a trained network.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import partial
from typing import Callable, Union

import jax
import jax.numpy as jnp
import numpy as np

from . import annulus
from . import net as dn
from . import optim
from .annulus import AnnulusGeometry, FluxProfile
from .fdref import WallSlice

Field = Union[dn.NetworkParams, Callable]

ARMS = ("off", "shell_fixed", "shell_scheduled")

SIX_TERMS = ("pde", "inner", "inlet", "outlet", "outer", "periodic")


def input_box(geom: AnnulusGeometry) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([geom.r_min, 0.0, 0.0])
    hi = np.array([geom.r_max + geom.amplitude, 2.0 * np.pi, geom.length])
    return lo, hi


def field_from_net(params: dn.NetworkParams, geom: AnnulusGeometry) -> Callable:
    """Network as a field of raw (r, theta, z); inputs are scaled to [-1, 1]^3.

    The affine input map is part of the Stage-2 model definition, so audits
    and checkpoint reloads reconstruct the identical field.
    """
    lo, hi = input_box(geom)
    lo_j = jnp.asarray(lo)
    scale_j = jnp.asarray(2.0 / (hi - lo))
    return lambda p: dn.apply(params, scale_j * (p - lo_j) - 1.0)


def as_field(field: Field, geom: AnnulusGeometry) -> Callable:
    if isinstance(field, dn.NetworkParams):
        if field.input_dim != 3:
            raise ValueError("stage-2 fields take 3 inputs (r, theta, z)")
        return field_from_net(field, geom)
    return field


def residual_fn(field: Field, geom: AnnulusGeometry) -> Callable:
    """Cylindrical Laplacian of the field: T_rr + T_r/r + T_tt/r^2 + T_zz."""
    f = as_field(field, geom)
    grad_f = jax.grad(f)

    def res(p):
        g, lin = jax.linearize(grad_f, p)
        seconds = []
        for i in range(3):
            e = jnp.zeros(3, dtype=p.dtype).at[i].set(1.0)
            seconds.append(lin(e)[i])
        return seconds[0] + g[0] / p[0] + seconds[1] / p[0] ** 2 + seconds[2]

    return res


def cylindrical_residual(field: Field, r: float, theta: float, z: float,
                         geom: AnnulusGeometry | None = None) -> float:
    if r <= 0:
        raise ValueError("cylindrical residual needs r > 0")
    geom = geom or annulus.standard_geometry()
    return float(residual_fn(field, geom)(jnp.array([r, theta, z], dtype=jnp.float64)))


def wall_normal_derivative(field: Field, theta: float, z: float,
                           geom: AnnulusGeometry | None = None) -> float:
    """Gradient dotted with the outward unit normal of r - r_o(theta) = 0."""
    geom = geom or annulus.standard_geometry()
    f = as_field(field, geom)
    ro, _ = annulus.outer_radius(geom, theta)
    g = jax.grad(f)(jnp.array([float(ro), theta, z], dtype=jnp.float64))
    return float(annulus.normal_derivative(geom, theta, g[0], g[1]))


@dataclass(frozen=True)
class Stage2Cloud:
    """Collocation groups in raw (r, theta, z) coordinates."""

    interior: np.ndarray
    inner: np.ndarray
    inlet: np.ndarray
    outlet: np.ndarray
    outer: np.ndarray
    pairs_a: np.ndarray
    pairs_b: np.ndarray
    seed: int

    def group(self, name: str) -> np.ndarray:
        return getattr(self, name)


def sample_stage2_cloud(
    geom: AnnulusGeometry, n_interior: int, n_boundary: int, n_pairs: int, seed: int,
    stream: int = 0,
) -> Stage2Cloud:
    """Uniform in (s, theta, z), then mapped, so points respect the wavy wall."""
    if min(n_interior, n_boundary, n_pairs) < 1:
        raise ValueError("all cloud groups need at least one point")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x2D, stream))))
    L = geom.length
    two_pi = 2.0 * np.pi

    def mapped(s, th):
        return np.asarray(annulus.map_s_to_r(geom, s, th))

    s = rng.uniform(0.0, 1.0, n_interior)
    th = rng.uniform(0.0, two_pi, n_interior)
    zz = rng.uniform(0.0, L, n_interior)
    interior = np.column_stack([mapped(s, th), th, zz])

    th = rng.uniform(0.0, two_pi, n_boundary)
    zz = rng.uniform(0.0, L, n_boundary)
    inner = np.column_stack([np.full(n_boundary, geom.r_min), th, zz])

    s = rng.uniform(0.0, 1.0, n_boundary)
    th = rng.uniform(0.0, two_pi, n_boundary)
    inlet = np.column_stack([mapped(s, th), th, np.zeros(n_boundary)])

    s = rng.uniform(0.0, 1.0, n_boundary)
    th = rng.uniform(0.0, two_pi, n_boundary)
    outlet = np.column_stack([mapped(s, th), th, np.full(n_boundary, L)])

    th = rng.uniform(0.0, two_pi, n_boundary)
    zz = rng.uniform(0.0, L, n_boundary)
    ro = np.asarray(annulus.outer_radius(geom, th)[0])
    outer = np.column_stack([ro, th, zz])

    s = rng.uniform(0.0, 1.0, n_pairs)
    zz = rng.uniform(0.0, L, n_pairs)
    r0 = mapped(s, np.zeros(n_pairs))
    pairs_a = np.column_stack([r0, np.zeros(n_pairs), zz])
    pairs_b = np.column_stack([r0, np.full(n_pairs, two_pi), zz])

    return Stage2Cloud(interior, inner, inlet, outlet, outer, pairs_a, pairs_b, seed)


def _outer_normal_data(geom: AnnulusGeometry, outer_pts: np.ndarray, flux: FluxProfile):
    """Per-point normal-combination coefficients and prescribed flux values."""
    th = outer_pts[:, 1]
    ro, dro = (np.asarray(v) for v in annulus.outer_radius(geom, th))
    nrm = np.sqrt(1.0 + (dro / ro) ** 2)
    coef_r = 1.0 / nrm
    coef_t = -dro / (ro**2 * nrm)
    q = np.asarray(annulus.flux_value(flux, outer_pts[:, 2]))
    return np.column_stack([coef_r, coef_t]), q


def six_term_loss(
    field: Field,
    cloud: Stage2Cloud,
    weights: dict | None = None,
    geom: AnnulusGeometry | None = None,
    flux: FluxProfile | None = None,
) -> tuple[float, dict]:
    """Weighted six-term objective and its unweighted per-term breakdown."""
    geom = geom or annulus.standard_geometry()
    flux = flux or annulus.default_flux(geom)
    w = {name: 1.0 for name in SIX_TERMS}
    if weights:
        unknown = set(weights) - set(SIX_TERMS)
        if unknown:
            raise ValueError(f"unknown six-term weights: {sorted(unknown)}")
        w.update(weights)
    for name in SIX_TERMS:
        if w[name] <= 0:
            raise ValueError(f"weight {name} must be positive")
        group = cloud.pairs_a if name == "periodic" else cloud.group(name if name != "pde" else "interior")
        if len(group) == 0:
            raise ValueError(f"cloud group {name!r} is empty")

    f = as_field(field, geom)
    res = residual_fn(f, geom)
    grad_f = jax.grad(f)

    terms = {}
    terms["pde"] = float(jnp.mean(jax.vmap(res)(jnp.asarray(cloud.interior)) ** 2))
    u_inner = jax.vmap(f)(jnp.asarray(cloud.inner))
    terms["inner"] = float(jnp.mean((u_inner - 1.0) ** 2))
    u_inlet = jax.vmap(f)(jnp.asarray(cloud.inlet))
    terms["inlet"] = float(jnp.mean((u_inlet - 1.0) ** 2))
    g_outlet = jax.vmap(grad_f)(jnp.asarray(cloud.outlet))
    terms["outlet"] = float(jnp.mean(g_outlet[:, 2] ** 2))
    coef, q = _outer_normal_data(geom, cloud.outer, flux)
    g_outer = jax.vmap(grad_f)(jnp.asarray(cloud.outer))
    dn_wall = coef[:, 0] * g_outer[:, 0] + coef[:, 1] * g_outer[:, 1]
    terms["outer"] = float(jnp.mean((dn_wall - q) ** 2))
    u_a = jax.vmap(f)(jnp.asarray(cloud.pairs_a))
    u_b = jax.vmap(f)(jnp.asarray(cloud.pairs_b))
    terms["periodic"] = float(jnp.mean((u_a - u_b) ** 2))

    total = sum(w[name] * terms[name] for name in SIX_TERMS)
    return total, terms


@dataclass(frozen=True)
class ShellBank:
    """Structured body-fitted shell grid plus metric factors and weights.

    Nodes live at tensor-product (s_i, theta_j, z_k) positions mapped into
    the physical annulus; ``dr_phys`` is the physical radial spacing per
    theta column, ``h_theta`` converts angular spacing to tangential
    distance, and ``weights`` are tensor-product trapezoid weights.
    """

    geometry: AnnulusGeometry
    s_nodes: np.ndarray
    theta_nodes: np.ndarray
    z_nodes: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    h_theta: np.ndarray
    dr_phys: np.ndarray
    ds: float
    dtheta: float
    dz: float

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.s_nodes), len(self.theta_nodes), len(self.z_nodes))


def build_shell_bank(
    geom: AnnulusGeometry,
    s_range: tuple[float, float] = (0.75, 0.98),
    counts: tuple[int, int, int] = (8, 32, 32),
) -> ShellBank:
    n_s, n_theta, n_z = counts
    if min(counts) < 3:
        raise ValueError("shell bank needs at least 3 nodes per direction")
    s_lo, s_hi = s_range
    if not (0.0 < s_lo < s_hi < 1.0):
        raise ValueError("shell range must satisfy 0 < s_lo < s_hi < 1")
    L = geom.length
    s = np.linspace(s_lo, s_hi, n_s)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    z = L * np.arange(1, n_z + 1) / (n_z + 1)  # strictly inside (0, L)
    S, TH = np.meshgrid(s, theta, indexing="ij")
    R = np.asarray(annulus.map_s_to_r(geom, S, TH))
    nodes = np.empty((n_s, n_theta, n_z, 3))
    nodes[..., 0] = R[:, :, None]
    nodes[..., 1] = TH[:, :, None]
    nodes[..., 2] = z[None, None, :]
    h_theta = np.asarray(annulus.metric_h_theta(geom, S, TH))
    gap = np.asarray(annulus.gap(geom, theta))
    ds = s[1] - s[0]
    dtheta = theta[1] - theta[0]
    dz = z[1] - z[0]

    def trap(n, h):
        w = np.full(n, h)
        w[0] = w[-1] = h / 2.0
        return w

    w = trap(n_s, ds)[:, None, None] * np.full(n_theta, dtheta)[None, :, None] * trap(n_z, dz)[None, None, :]
    return ShellBank(geom, s, theta, z, nodes, w, h_theta, ds * gap, ds, dtheta, dz)


def _shell_loss_from_samples(r_samples, bank_arrays):
    """Metric-corrected squared residual differences, interior-weighted mean."""
    inv_2dr, h_theta, inv_2dth, inv_2dz, w_int = bank_arrays
    r = r_samples
    d_r = (r[2:, :, :] - r[:-2, :, :]) * inv_2dr[None, :, None]
    d_t = (jnp.roll(r, -1, axis=1) - jnp.roll(r, 1, axis=1)) * inv_2dth / h_theta[:, :, None]
    d_z = (r[:, :, 2:] - r[:, :, :-2]) * inv_2dz
    quad = d_r[:, :, 1:-1] ** 2 + d_t[1:-1, :, 1:-1] ** 2 + d_z[1:-1, :, :] ** 2
    return jnp.sum(w_int * quad) / jnp.sum(w_int)


def _bank_arrays(bank: ShellBank):
    return (
        jnp.asarray(1.0 / (2.0 * bank.dr_phys)),
        jnp.asarray(bank.h_theta),
        1.0 / (2.0 * bank.dtheta),
        1.0 / (2.0 * bank.dz),
        jnp.asarray(bank.weights[1:-1, :, 1:-1]),
    )


def shell_resgrad_loss(field: Field, bank: ShellBank) -> float:
    """Unweighted shell regularizer (the shell probe)."""
    n_s, n_theta, n_z = bank.counts
    if n_s < 3 or n_z < 3:
        raise ValueError("shell bank too small for interior differences")
    res = residual_fn(field, bank.geometry)
    flat = jnp.asarray(bank.nodes.reshape(-1, 3))
    r = jax.vmap(res)(flat).reshape(n_s, n_theta, n_z)
    return float(_shell_loss_from_samples(r, _bank_arrays(bank)))


def wall_bc_audit(
    field: Field,
    geom: AnnulusGeometry | None = None,
    flux: FluxProfile | None = None,
    n_theta_dense: int = 128,
    n_z_dense: int = 128,
) -> float:
    """RMS mismatch between the predicted wall-normal derivative and q(z)."""
    geom = geom or annulus.standard_geometry()
    flux = flux or annulus.default_flux(geom)
    if n_theta_dense < 2 or n_z_dense < 2:
        raise ValueError("dense wall grid needs at least 2 nodes per direction")
    theta = 2.0 * np.pi * np.arange(n_theta_dense) / n_theta_dense
    z = np.linspace(0.0, geom.length, n_z_dense)
    TH, ZZ = np.meshgrid(theta, z, indexing="ij")
    pts = np.column_stack(
        [np.asarray(annulus.outer_radius(geom, TH.ravel())[0]), TH.ravel(), ZZ.ravel()]
    )
    coef, q = _outer_normal_data(geom, pts, flux)
    f = as_field(field, geom)
    g = jax.vmap(jax.grad(f))(jnp.asarray(pts))
    dn_wall = coef[:, 0] * np.asarray(g[:, 0]) + coef[:, 1] * np.asarray(g[:, 1])
    return float(np.sqrt(np.mean((dn_wall - q) ** 2)))


def wall_reference_compare(
    field: Field,
    ref: WallSlice,
    geom: AnnulusGeometry | None = None,
    flux: FluxProfile | None = None,
) -> tuple[float, float, float]:
    """(T_wall, dTdn_wall, BC-residual) RMSEs against the FD wall reference.

    The network is evaluated at the reference slice's (theta, z) wall nodes;
    the BC residual difference is (dTdn - q) minus the reference's
    (dTdn_ref - q).
    """
    geom = geom or annulus.standard_geometry()
    flux = flux or annulus.default_flux(geom)
    TH, ZZ = np.meshgrid(ref.theta_nodes, ref.z_nodes, indexing="ij")
    pts = np.column_stack(
        [np.asarray(annulus.outer_radius(geom, TH.ravel())[0]), TH.ravel(), ZZ.ravel()]
    )
    coef, q = _outer_normal_data(geom, pts, flux)
    f = as_field(field, geom)
    t_net = np.asarray(jax.vmap(f)(jnp.asarray(pts)))
    g = jax.vmap(jax.grad(f))(jnp.asarray(pts))
    dn_net = coef[:, 0] * np.asarray(g[:, 0]) + coef[:, 1] * np.asarray(g[:, 1])

    t_ref = ref.t_wall.ravel()
    dn_ref = ref.dtdn_wall.ravel()
    if t_net.shape != t_ref.shape:
        raise ValueError("wall grid shapes do not match the reference slice")
    t_rmse = float(np.sqrt(np.mean((t_net - t_ref) ** 2)))
    dn_rmse = float(np.sqrt(np.mean((dn_net - dn_ref) ** 2)))
    bc_rmse = float(np.sqrt(np.mean(((dn_net - q) - (dn_ref - q)) ** 2)))
    return t_rmse, dn_rmse, bc_rmse


@dataclass
class WallAuditReport:
    """Wall-facing diagnostics; reference RMSEs are None without a slice."""

    wall_bc_rmse: float
    t_wall_rmse: float | None
    dtdn_wall_rmse: float | None
    bc_residual_rmse: float | None
    shell_probe: float

    def as_dict(self) -> dict:
        return {
            "wall_bc_rmse": self.wall_bc_rmse,
            "t_wall_rmse": self.t_wall_rmse,
            "dtdn_wall_rmse": self.dtdn_wall_rmse,
            "bc_residual_rmse": self.bc_residual_rmse,
            "shell_probe": self.shell_probe,
        }


@dataclass(frozen=True)
class Stage2TrainConfig:
    arm: str = "off"
    epochs: int = 2000
    seed_init: int = 0
    seed_cloud: int = 0
    seed_audit: int = 0
    hidden_layers: int = 4
    width: int = 32
    activation: str = "silu"
    optimizer: str = "adam999"
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    term_weights: tuple[float, float, float, float, float, float] = (1.0,) * 6
    shell_weight: float = 5e-4
    shell_start_weight: float = 1e-3
    shell_hold_frac: float = 0.3
    shell_s_range: tuple[float, float] = (0.75, 0.98)
    shell_counts: tuple[int, int, int] = (8, 32, 32)
    n_interior: int = 4000
    n_boundary: int = 2000
    n_pairs: int = 400
    n_val_interior: int = 1024
    n_val_boundary: int = 512
    n_val_pairs: int = 200
    flux_z1_frac: float = 0.2
    flux_z2_frac: float = 0.4
    flux_q_max: float = 1.0
    audit_n_theta: int = 128
    audit_n_z: int = 128
    reference_slice: str | None = None
    val_every: int = 100

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"unknown stage-2 arm {self.arm!r}; expected one of {ARMS}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def geometry(self) -> AnnulusGeometry:
        return annulus.standard_geometry()

    def flux(self) -> FluxProfile:
        geom = self.geometry()
        return FluxProfile(
            z1=self.flux_z1_frac * geom.length,
            z2=self.flux_z2_frac * geom.length,
            q_max=self.flux_q_max,
        )


@dataclass
class Stage2TrainResult:
    config: Stage2TrainConfig
    checkpoint: dn.NetworkParams
    report: WallAuditReport
    final_loss: float
    final_terms: dict
    best_val: float
    best_epoch: int
    epochs_run: int
    failed: bool
    last_finite_epoch: int
    runtime_s: float


def shell_schedule_for(cfg: Stage2TrainConfig) -> optim.AuxSchedule:
    if cfg.arm == "off":
        return optim.AuxSchedule(target=0.0)
    if cfg.arm == "shell_fixed":
        return optim.AuxSchedule(target=cfg.shell_weight)
    hold = int(round(cfg.shell_hold_frac * cfg.epochs))
    decay = max(cfg.epochs - hold, 1)
    return optim.AuxSchedule(
        target=cfg.shell_start_weight,
        hold_len=hold,
        decay_len=decay,
        decay_kind="linear",
        final_frac=cfg.shell_weight / cfg.shell_start_weight,
    )


@partial(jax.jit, static_argnames=("use_shell",))
def _loss2(params, scale_pack, clouds, outer_coef, outer_q, shell_nodes, bank_arrays,
           lam_shell, weights, *, use_shell):
    lo_j, scale_j = scale_pack
    f = lambda p: dn.apply(params, scale_j * (p - lo_j) - 1.0)
    grad_f = jax.grad(f)

    def res(p):
        g, lin = jax.linearize(grad_f, p)
        out = g[0] / p[0]
        for i in range(3):
            e = jnp.zeros(3, dtype=p.dtype).at[i].set(1.0)
            h = lin(e)[i]
            out = out + (h / p[0] ** 2 if i == 1 else h)
        return out

    interior, inner, inlet, outlet, outer, pairs_a, pairs_b = clouds
    t_pde = jnp.mean(jax.vmap(res)(interior) ** 2)
    t_inner = jnp.mean((jax.vmap(f)(inner) - 1.0) ** 2)
    t_inlet = jnp.mean((jax.vmap(f)(inlet) - 1.0) ** 2)
    t_outlet = jnp.mean(jax.vmap(grad_f)(outlet)[:, 2] ** 2)
    g_out = jax.vmap(grad_f)(outer)
    dn_wall = outer_coef[:, 0] * g_out[:, 0] + outer_coef[:, 1] * g_out[:, 1]
    t_outer = jnp.mean((dn_wall - outer_q) ** 2)
    t_per = jnp.mean((jax.vmap(f)(pairs_a) - jax.vmap(f)(pairs_b)) ** 2)
    terms = jnp.array([t_pde, t_inner, t_inlet, t_outlet, t_outer, t_per])
    total = jnp.sum(weights * terms)
    if use_shell:
        shape = shell_nodes.shape[:3]
        r = jax.vmap(res)(shell_nodes.reshape(-1, 3)).reshape(shape)
        shell = _shell_loss_from_samples(r, bank_arrays)
    else:
        shell = 0.0
    return total + lam_shell * shell, (terms, shell)


def _loss2_value_and_grad(params, *args, use_shell):
    fn = lambda p: _loss2(p, *args, use_shell=use_shell)
    return jax.value_and_grad(fn, has_aux=True)(params)


_loss2_vg = jax.jit(_loss2_value_and_grad, static_argnames=("use_shell",))


def train_stage2(cfg: Stage2TrainConfig) -> Stage2TrainResult:
    """Full-batch training of the six-term objective plus the shell term."""
    t_start = time.perf_counter()
    geom = cfg.geometry()
    flux = cfg.flux()
    sizes = (3, *([cfg.width] * cfg.hidden_layers), 1)
    params = dn.init_mlp(sizes, cfg.activation, cfg.seed_init)

    train_cloud = sample_stage2_cloud(geom, cfg.n_interior, cfg.n_boundary, cfg.n_pairs, cfg.seed_cloud)
    val_cloud = sample_stage2_cloud(
        geom, cfg.n_val_interior, cfg.n_val_boundary, cfg.n_val_pairs, cfg.seed_cloud, stream=1
    )

    lo, hi = input_box(geom)
    scale_pack = (jnp.asarray(lo), jnp.asarray(2.0 / (hi - lo)))

    def pack(cloud: Stage2Cloud):
        return tuple(
            jnp.asarray(a)
            for a in (cloud.interior, cloud.inner, cloud.inlet, cloud.outlet,
                      cloud.outer, cloud.pairs_a, cloud.pairs_b)
        )

    clouds = pack(train_cloud)
    v_clouds = pack(val_cloud)
    outer_coef, outer_q = _outer_normal_data(geom, train_cloud.outer, flux)
    v_coef, v_q = _outer_normal_data(geom, val_cloud.outer, flux)
    outer_coef, outer_q = jnp.asarray(outer_coef), jnp.asarray(outer_q)
    v_coef, v_q = jnp.asarray(v_coef), jnp.asarray(v_q)

    use_shell = cfg.arm != "off"
    bank = build_shell_bank(geom, cfg.shell_s_range, cfg.shell_counts)
    if use_shell and (cfg.audit_n_theta < cfg.shell_counts[1] or cfg.audit_n_z < cfg.shell_counts[2]):
        raise ValueError("dense audit grid must be at least as fine as the shell bank")
    shell_nodes = jnp.asarray(bank.nodes)
    bank_arrays = _bank_arrays(bank)

    weights = jnp.asarray(cfg.term_weights, dtype=jnp.float64)
    sched = shell_schedule_for(cfg)
    lr_sched = optim.LrSchedule(cfg.lr_init, cfg.lr_final, cfg.epochs)
    opt = optim.optimizer_slot(cfg.optimizer, params.n_params)

    def val_loss(p):
        total, _ = _loss2(
            p, scale_pack, v_clouds, v_coef, v_q, shell_nodes, bank_arrays,
            0.0, weights, use_shell=False,
        )
        return float(total)

    best_val = val_loss(params)
    best_epoch = 0
    best_flat = dn.flatten_params(params)

    flat = dn.flatten_params(params)
    failed = False
    last_finite = -1
    final_loss = math.nan
    final_terms: dict = {}

    def terms_dict(terms, shell, lam):
        out = {name: float(terms[i]) for i, name in enumerate(SIX_TERMS)}
        out["shell"] = float(shell)
        out["shell_weight"] = lam
        return out

    if cfg.epochs == 0:
        lam0 = optim.aux_weight_at(sched, 0)
        (total, (terms, shell)), _ = _loss2_vg(
            params, scale_pack, clouds, outer_coef, outer_q, shell_nodes, bank_arrays,
            lam0, weights, use_shell=use_shell,
        )
        final_loss = float(total)
        final_terms = terms_dict(terms, shell, lam0)

    for epoch in range(cfg.epochs):
        lam = optim.aux_weight_at(sched, epoch)
        (total, (terms, shell)), grads = _loss2_vg(
            params, scale_pack, clouds, outer_coef, outer_q, shell_nodes, bank_arrays,
            lam, weights, use_shell=use_shell,
        )
        total = float(total)
        if not math.isfinite(total):
            failed = True
            break
        last_finite = epoch
        final_loss = total
        final_terms = terms_dict(terms, shell, lam)
        g_flat = dn.flatten_params(grads)
        if not np.all(np.isfinite(g_flat)):
            failed = True
            break
        flat = flat + opt.step(g_flat, optim.lr_at(lr_sched, epoch))
        params = dn.unflatten_params(params, flat)

        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            val = val_loss(params)
            if math.isfinite(val) and val < best_val:
                best_val = val
                best_epoch = epoch + 1
                best_flat = flat.copy()

    checkpoint = dn.unflatten_params(params, best_flat)
    report = audit_stage2(checkpoint, cfg, bank)
    runtime = time.perf_counter() - t_start
    return Stage2TrainResult(
        config=cfg,
        checkpoint=checkpoint,
        report=report,
        final_loss=final_loss,
        final_terms=final_terms,
        best_val=best_val,
        best_epoch=best_epoch,
        epochs_run=last_finite + 1,
        failed=failed,
        last_finite_epoch=last_finite,
        runtime_s=runtime,
    )


def audit_stage2(field: Field, cfg: Stage2TrainConfig, bank: ShellBank | None = None) -> WallAuditReport:
    """Dense wall BC audit, shell probe, and optional FD-reference RMSEs."""
    geom = cfg.geometry()
    flux = cfg.flux()
    bank = bank or build_shell_bank(geom, cfg.shell_s_range, cfg.shell_counts)
    bc_rmse = wall_bc_audit(field, geom, flux, cfg.audit_n_theta, cfg.audit_n_z)
    probe = shell_resgrad_loss(field, bank)
    t_rmse = dn_rmse = bcres_rmse = None
    if cfg.reference_slice:
        from .fdref import read_wall_slice

        ref = read_wall_slice(cfg.reference_slice)
        t_rmse, dn_rmse, bcres_rmse = wall_reference_compare(field, ref, geom, flux)
    return WallAuditReport(
        wall_bc_rmse=bc_rmse,
        t_wall_rmse=t_rmse,
        dtdn_wall_rmse=dn_rmse,
        bc_residual_rmse=bcres_rmse,
        shell_probe=probe,
    )
