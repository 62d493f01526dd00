"""Manufactured Poisson benchmark on the unit square.

Covers the exact solution and forcing, the collocation clouds, the
auxiliary-grid bank family (fixed-safe / cycle4 / jitter4), the
finite-difference residual-gradient regularizer and its exact-derivative
comparator, full-batch training with best-validation checkpointing, and the
fresh low-discrepancy audit.

Residual-consuming operations accept either ``NetworkParams`` or any
callable ``(2,) array -> scalar`` so closed-form fields can be injected in
place of a trained network.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dataclass_field
from functools import partial
from typing import Callable, Union

import jax
import jax.numpy as jnp
import numpy as np
from scipy.stats import qmc

from . import net as dn
from . import optim

Field = Union[dn.NetworkParams, Callable]

ARMS = ("off", "fd_fixed", "fd_linear", "ad_fixed", "ad_linear")
STRATEGIES = ("fixed_safe", "cycle4", "jitter4")

_PI = math.pi


def exact_solution(x, y):
    """u*(x, y) = sin(pi x) sin(pi y) + 0.2 sin(3 pi x) sin(2 pi y)."""
    return jnp.sin(_PI * x) * jnp.sin(_PI * y) + 0.2 * jnp.sin(3 * _PI * x) * jnp.sin(2 * _PI * y)


def exact_solution_grad(x, y):
    ux = _PI * jnp.cos(_PI * x) * jnp.sin(_PI * y) + 0.6 * _PI * jnp.cos(3 * _PI * x) * jnp.sin(2 * _PI * y)
    uy = _PI * jnp.sin(_PI * x) * jnp.cos(_PI * y) + 0.4 * _PI * jnp.sin(3 * _PI * x) * jnp.cos(2 * _PI * y)
    return ux, uy


def forcing(x, y):
    """f = laplacian of the exact solution."""
    return -2.0 * _PI**2 * jnp.sin(_PI * x) * jnp.sin(_PI * y) - 2.6 * _PI**2 * jnp.sin(
        3 * _PI * x
    ) * jnp.sin(2 * _PI * y)


def as_field(field: Field) -> Callable:
    """Normalize a network or a closed-form callable to ``(2,) -> scalar``."""
    if isinstance(field, dn.NetworkParams):
        if field.input_dim != 2:
            raise ValueError("stage-1 fields take 2 inputs")
        return lambda p: dn.apply(field, p)
    return field


def residual_fn(field: Field) -> Callable:
    f = as_field(field)
    lap = dn.laplacian_fn(f, 2)
    return lambda p: lap(p) - forcing(p[0], p[1])


def residual(field: Field, x: float, y: float) -> float:
    return float(residual_fn(field)(jnp.array([x, y], dtype=jnp.float64)))


def residual_grad_fn(field: Field) -> Callable:
    """Exact input gradient of the residual (third derivatives of the field)."""
    return jax.grad(residual_fn(field))


@dataclass(frozen=True)
class Stage1Cloud:
    """Seeded interior/boundary collocation points on the unit square."""

    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    seed: int

    def __post_init__(self):
        pts = np.vstack([self.interior, self.boundary])
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("cloud points must lie in the closed unit square")


def sample_cloud(n_interior: int, n_boundary: int, seed: int, stream: int = 0) -> Stage1Cloud:
    """Seeded cloud; ``stream`` separates train/validation draws for one seed."""
    if n_interior < 1 or n_boundary < 4:
        raise ValueError("cloud needs at least 1 interior and 4 boundary points")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x1D, stream))))
    interior = rng.uniform(0.0, 1.0, size=(n_interior, 2))
    # Boundary points: walk the perimeter by arc length.
    t = rng.uniform(0.0, 4.0, size=n_boundary)
    bx = np.empty(n_boundary)
    by = np.empty(n_boundary)
    side = np.floor(t).astype(int)
    frac = t - side
    bx[side == 0], by[side == 0] = frac[side == 0], 0.0
    bx[side == 1], by[side == 1] = 1.0, frac[side == 1]
    bx[side == 2], by[side == 2] = 1.0 - frac[side == 2], 1.0
    bx[side == 3], by[side == 3] = 0.0, 1.0 - frac[side == 3]
    boundary = np.column_stack([bx, by])
    bvals = np.asarray(exact_solution(boundary[:, 0], boundary[:, 1]))
    return Stage1Cloud(interior, boundary, bvals, seed)


def base_losses(field: Field, cloud: Stage1Cloud) -> tuple[float, float]:
    """(mean-square interior residual, mean-square Dirichlet mismatch)."""
    if len(cloud.interior) == 0 or len(cloud.boundary) == 0:
        raise ValueError("cloud must have interior and boundary points")
    f = as_field(field)
    r = jax.vmap(residual_fn(f))(jnp.asarray(cloud.interior))
    u_b = jax.vmap(f)(jnp.asarray(cloud.boundary))
    l_pde = float(jnp.mean(r**2))
    l_bc = float(jnp.mean((u_b - jnp.asarray(cloud.boundary_values)) ** 2))
    return l_pde, l_bc


def fd_resgrad_loss(residual_samples, h: float):
    """Mean of squared central differences of a sampled residual grid.

    Boundary grid lines are excluded from the average; no ghost values are
    invented.  Works on numpy arrays and inside jax traces alike.
    """
    r = jnp.asarray(residual_samples)
    if r.ndim != 2 or r.shape[0] < 3 or r.shape[1] < 3:
        raise ValueError("residual grid must be at least 3x3")
    dx = (r[2:, 1:-1] - r[:-2, 1:-1]) / (2.0 * h)
    dy = (r[1:-1, 2:] - r[1:-1, :-2]) / (2.0 * h)
    return jnp.mean(dx**2 + dy**2)


def ad_resgrad_loss(field: Field, aux_nodes) -> float:
    """Mean squared exact residual-gradient norm over the given nodes."""
    nodes = jnp.asarray(aux_nodes, dtype=jnp.float64).reshape(-1, 2)
    g = jax.vmap(residual_grad_fn(field))(nodes)
    return float(jnp.mean(jnp.sum(g**2, axis=1)))


def match_ad_weight(lambda_fd_anchor: float, s_fd: float, s_ad: float) -> float:
    """Matched comparator weight: lambda_fd * S_FD / S_AD."""
    if s_ad <= 0.0:
        raise ValueError("S_AD must be positive")
    return lambda_fd_anchor * s_fd / s_ad


@dataclass(frozen=True)
class AuxBank:
    """Structured auxiliary grid family with phase-safe cropping.

    Every sub-bank samples an (n_x, n_y) grid of nodes spaced ``h`` apart at
    one phase offset; the regularizer averages only over nodes whose full
    central stencil lies within the sampled grid, so for every allowed phase
    all participating nodes and neighbors stay strictly inside (0, 1)^2.
    """

    strategy: str
    h: float
    n_x: int
    n_y: int
    offsets: tuple[tuple[float, float], ...]

    @property
    def n_banks(self) -> int:
        return len(self.offsets)

    def node_grid(self, bank_index: int = 0) -> np.ndarray:
        ox, oy = self.offsets[bank_index % self.n_banks]
        xs = ox + self.h * np.arange(1, self.n_x + 1)
        ys = oy + self.h * np.arange(1, self.n_y + 1)
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        return grid

    def interior_nodes(self, bank_index: int = 0) -> np.ndarray:
        return self.node_grid(bank_index)[1:-1, 1:-1].reshape(-1, 2)


def build_aux_bank(strategy: str, n: int = 64, h: float | None = None, seed: int = 0) -> AuxBank:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown bank strategy {strategy!r}")
    if n < 8:
        raise ValueError("bank needs n >= 8 to survive the phase-safe crop")
    if h is None:
        h = 1.0 / (n - 1)
    # Sampled node indices 1..n-2 of the nominal grid keep every node and its
    # stencil neighbors strictly inside (0,1) for all offsets in [0, h/2].
    m = n - 2
    if strategy == "fixed_safe":
        offsets = ((0.0, 0.0),)
    elif strategy == "cycle4":
        offsets = ((0.0, 0.0), (h / 2, 0.0), (0.0, h / 2), (h / 2, h / 2))
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xBA))))
        offsets = tuple((rng.uniform(0.0, h / 2), rng.uniform(0.0, h / 2)) for _ in range(4))
    bank = AuxBank(strategy, h, m, m, offsets)
    for k in range(bank.n_banks):
        grid = bank.node_grid(k)
        if grid.min() <= 0.0 or grid.max() >= 1.0:
            raise ValueError("n too small for the phase-safe crop")
    return bank


@dataclass
class Stage1Metrics:
    """Fresh-audit metrics; best_val comes from the validation cloud."""

    best_val: float
    rel_l2_u: float
    rel_l2_grad_u: float
    residual_rmse: float
    grad_r_rmse: float
    runtime_s: float = 0.0
    shifted_fd: dict = dataclass_field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "best_val": self.best_val,
            "rel_l2_u": self.rel_l2_u,
            "rel_l2_grad_u": self.rel_l2_grad_u,
            "residual_rmse": self.residual_rmse,
            "grad_r_rmse": self.grad_r_rmse,
            "shifted_fd": dict(self.shifted_fd),
        }


def sobol_points(n_points: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    exp = int(math.log2(n_points))
    if 2**exp == n_points:
        return sampler.random_base2(exp)
    return sampler.random(n_points)


def audit_stage1(
    field: Field,
    audit_seed: int,
    n_points: int = 4096,
    bank_n: int = 64,
    best_val: float = float("nan"),
) -> Stage1Metrics:
    """Field/residual metrics on a fresh Sobol cloud plus shifted-grid checks."""
    pts = jnp.asarray(sobol_points(n_points, audit_seed))
    f = as_field(field)
    u = jax.vmap(f)(pts)
    du = jax.vmap(jax.grad(f))(pts)
    r = jax.vmap(residual_fn(f))(pts)
    dr = jax.vmap(residual_grad_fn(f))(pts)

    u_star = exact_solution(pts[:, 0], pts[:, 1])
    gx, gy = exact_solution_grad(pts[:, 0], pts[:, 1])
    g_star = jnp.stack([gx, gy], axis=1)

    rel_l2_u = float(jnp.linalg.norm(u - u_star) / jnp.linalg.norm(u_star))
    rel_l2_grad = float(
        jnp.sqrt(jnp.sum((du - g_star) ** 2)) / jnp.sqrt(jnp.sum(g_star**2))
    )
    residual_rmse = float(jnp.sqrt(jnp.mean(r**2)))
    grad_r_rmse = float(jnp.sqrt(jnp.mean(jnp.sum(dr**2, axis=1))))

    shifted = {}
    bank = build_aux_bank("cycle4", n=bank_n)
    for k, off in enumerate(bank.offsets):
        grid = jnp.asarray(bank.node_grid(k))
        r_grid = jax.vmap(residual_fn(f))(grid.reshape(-1, 2)).reshape(grid.shape[:2])
        shifted[f"({off[0]:.6g},{off[1]:.6g})"] = float(fd_resgrad_loss(r_grid, bank.h))

    return Stage1Metrics(
        best_val=best_val,
        rel_l2_u=rel_l2_u,
        rel_l2_grad_u=rel_l2_grad,
        residual_rmse=residual_rmse,
        grad_r_rmse=grad_r_rmse,
        shifted_fd=shifted,
    )


@dataclass(frozen=True)
class Stage1TrainConfig:
    arm: str = "off"
    epochs: int = 3000
    seed_init: int = 0
    seed_cloud: int = 0
    seed_audit: int = 0
    hidden_layers: int = 4
    width: int = 32
    activation: str = "tanh"
    optimizer: str = "adam999"
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    lambda_bc: float = 1.0
    aux_weight: float = 1e-3
    aux_start: int = 0
    ramp_frac: float = 0.1
    hold_frac: float = 0.3
    decay_kind: str = "linear"
    final_frac: float = 0.1
    strategy: str = "fixed_safe"
    bank_n: int = 64
    n_interior: int = 1024
    n_boundary: int = 256
    n_val_interior: int = 512
    n_val_boundary: int = 128
    audit_points: int = 4096
    val_every: int = 100

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"unknown stage-1 arm {self.arm!r}; expected one of {ARMS}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Stage1TrainResult:
    config: Stage1TrainConfig
    checkpoint: dn.NetworkParams
    metrics: Stage1Metrics
    final_loss: float
    final_terms: dict
    best_val: float
    best_epoch: int
    epochs_run: int
    failed: bool
    last_finite_epoch: int
    matched_ad_weight: float | None
    runtime_s: float


def _layer_sizes(cfg: Stage1TrainConfig) -> tuple[int, ...]:
    return (2, *([cfg.width] * cfg.hidden_layers), 1)


def aux_schedule_for(cfg: Stage1TrainConfig) -> optim.AuxSchedule:
    """Weight schedule in units of the configured anchor weight."""
    if cfg.arm in ("fd_fixed", "ad_fixed"):
        return optim.AuxSchedule(target=cfg.aux_weight, start_epoch=cfg.aux_start)
    span = max(cfg.epochs - cfg.aux_start, 1)
    ramp = int(round(cfg.ramp_frac * span))
    hold = int(round(cfg.hold_frac * span))
    decay = max(span - ramp - hold, 1)
    return optim.AuxSchedule(
        target=cfg.aux_weight,
        start_epoch=cfg.aux_start,
        ramp_len=ramp,
        hold_len=hold,
        decay_len=decay,
        decay_kind=cfg.decay_kind,
        final_frac=cfg.final_frac,
    )


@partial(jax.jit, static_argnames=("aux_kind", "h"))
def _loss_and_grad(params, interior, boundary, bvals, aux_pack, lam_aux, lambda_bc, *, aux_kind, h):
    def total_fn(p):
        res = jax.vmap(lambda q: dn.laplacian_fn(lambda z: dn.apply(p, z), 2)(q) - forcing(q[0], q[1]))
        r = res(interior)
        l_pde = jnp.mean(r**2)
        u_b = jax.vmap(lambda q: dn.apply(p, q))(boundary)
        l_bc = jnp.mean((u_b - bvals) ** 2)
        if aux_kind == "fd":
            r_grid = res(aux_pack.reshape(-1, 2)).reshape(aux_pack.shape[:2])
            l_aux = fd_resgrad_loss(r_grid, h)
        elif aux_kind == "ad":
            res_point = lambda q: dn.laplacian_fn(lambda z: dn.apply(p, z), 2)(q) - forcing(q[0], q[1])
            g = jax.vmap(jax.grad(res_point))(aux_pack)
            l_aux = jnp.mean(jnp.sum(g**2, axis=1))
        else:
            l_aux = 0.0
        total = l_pde + lambda_bc * l_bc + lam_aux * l_aux
        return total, (l_pde, l_bc, l_aux)

    (total, terms), grads = jax.value_and_grad(total_fn, has_aux=True)(params)
    return total, terms, grads


@jax.jit
def _val_loss(params, interior, boundary, bvals, lambda_bc):
    res = jax.vmap(lambda q: dn.laplacian_fn(lambda z: dn.apply(params, z), 2)(q) - forcing(q[0], q[1]))
    r = res(interior)
    u_b = jax.vmap(lambda q: dn.apply(params, q))(boundary)
    return jnp.mean(r**2) + lambda_bc * jnp.mean((u_b - bvals) ** 2)


def train_stage1(cfg: Stage1TrainConfig) -> Stage1TrainResult:
    """Full-batch training of the composite objective, best-val checkpointing.

    Validation (PDE + BC terms only; the auxiliary term is a training-time
    regularizer) runs every ``val_every`` epochs and at the last epoch.
    Divergence marks the run failed and keeps the last finite epoch.
    """
    t_start = time.perf_counter()
    params = dn.init_mlp(_layer_sizes(cfg), cfg.activation, cfg.seed_init)
    train_cloud = sample_cloud(cfg.n_interior, cfg.n_boundary, cfg.seed_cloud)
    val_cloud = sample_cloud(cfg.n_val_interior, cfg.n_val_boundary, cfg.seed_cloud, stream=1)

    interior = jnp.asarray(train_cloud.interior)
    boundary = jnp.asarray(train_cloud.boundary)
    bvals = jnp.asarray(train_cloud.boundary_values)
    v_interior = jnp.asarray(val_cloud.interior)
    v_boundary = jnp.asarray(val_cloud.boundary)
    v_bvals = jnp.asarray(val_cloud.boundary_values)

    aux_kind = "none"
    bank = None
    if cfg.arm.startswith("fd"):
        aux_kind = "fd"
    elif cfg.arm.startswith("ad"):
        aux_kind = "ad"
    if aux_kind != "none":
        bank = build_aux_bank(cfg.strategy, n=cfg.bank_n, seed=cfg.seed_cloud)

    if aux_kind == "fd":
        aux_packs = [jnp.asarray(bank.node_grid(k)) for k in range(bank.n_banks)]
    elif aux_kind == "ad":
        aux_packs = [jnp.asarray(bank.interior_nodes(k)) for k in range(bank.n_banks)]
    else:
        aux_packs = [jnp.zeros((0, 2))]

    sched = aux_schedule_for(cfg)
    lr_sched = optim.LrSchedule(cfg.lr_init, cfg.lr_final, cfg.epochs)
    opt = optim.optimizer_slot(cfg.optimizer, params.n_params)

    matched_ratio = 1.0
    matched_ad_weight = None
    if aux_kind == "ad":
        # Match the comparator scale to the FD anchor on the switch-on state.
        probe = jnp.asarray(bank.node_grid(0))
        r_grid = jax.vmap(residual_fn(params))(probe.reshape(-1, 2)).reshape(probe.shape[:2])
        s_fd = float(fd_resgrad_loss(r_grid, bank.h))
        s_ad = ad_resgrad_loss(params, bank.interior_nodes(0))
        matched_ad_weight = match_ad_weight(cfg.aux_weight, s_fd, s_ad)
        matched_ratio = matched_ad_weight / cfg.aux_weight

    best_val = float(_val_loss(params, v_interior, v_boundary, v_bvals, cfg.lambda_bc))
    best_epoch = 0
    best_flat = dn.flatten_params(params)

    flat = dn.flatten_params(params)
    failed = False
    last_finite = -1
    final_loss = math.nan
    final_terms: dict = {}

    if cfg.epochs == 0:
        lam0 = optim.aux_weight_at(sched, 0) * matched_ratio
        total, terms, _ = _loss_and_grad(
            params, interior, boundary, bvals, aux_packs[0], lam0, cfg.lambda_bc,
            aux_kind=aux_kind, h=(bank.h if bank else 1.0),
        )
        final_loss = float(total)
        final_terms = {
            "pde": float(terms[0]),
            "bc": float(terms[1]),
            "aux": float(terms[2]),
            "aux_weight": lam0,
        }

    for epoch in range(cfg.epochs):
        lam = optim.aux_weight_at(sched, epoch) * matched_ratio
        pack = aux_packs[epoch % len(aux_packs)]
        total, terms, grads = _loss_and_grad(
            params, interior, boundary, bvals, pack, lam, cfg.lambda_bc,
            aux_kind=aux_kind, h=(bank.h if bank else 1.0),
        )
        total = float(total)
        if not math.isfinite(total):
            failed = True
            break
        last_finite = epoch
        final_loss = total
        final_terms = {
            "pde": float(terms[0]),
            "bc": float(terms[1]),
            "aux": float(terms[2]),
            "aux_weight": lam,
        }
        g_flat = dn.flatten_params(grads)
        if not np.all(np.isfinite(g_flat)):
            failed = True
            break
        flat = flat + opt.step(g_flat, optim.lr_at(lr_sched, epoch))
        params = dn.unflatten_params(params, flat)

        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            val = float(_val_loss(params, v_interior, v_boundary, v_bvals, cfg.lambda_bc))
            if math.isfinite(val) and val < best_val:
                best_val = val
                best_epoch = epoch + 1
                best_flat = flat.copy()

    checkpoint = dn.unflatten_params(params, best_flat)
    metrics = audit_stage1(
        checkpoint, cfg.seed_audit, n_points=cfg.audit_points, bank_n=cfg.bank_n, best_val=best_val
    )
    runtime = time.perf_counter() - t_start
    metrics.runtime_s = runtime
    return Stage1TrainResult(
        config=cfg,
        checkpoint=checkpoint,
        metrics=metrics,
        final_loss=final_loss,
        final_terms=final_terms,
        best_val=best_val,
        best_epoch=best_epoch,
        epochs_run=last_finite + 1,
        failed=failed,
        last_finite_epoch=last_finite,
        matched_ad_weight=matched_ad_weight,
        runtime_s=runtime,
    )
