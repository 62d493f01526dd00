"""Optimizers, the cosine LR schedule, and the auxiliary-weight schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ADAM_BETA1 = 0.9
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """Bias-corrected Adam over a flat parameter vector."""

    n_params: int
    beta1: float = ADAM_BETA1
    beta2: float = 0.999
    eps: float = ADAM_EPS
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.n_params, dtype=np.float64)
        self.v = np.zeros(self.n_params, dtype=np.float64)

    def step(self, grad: np.ndarray, lr_now: float) -> np.ndarray:
        return adam_step(self, grad, lr_now)


def adam_step(state: AdamState, grad: np.ndarray, lr_now: float) -> np.ndarray:
    """Advance the state one step and return the parameter delta."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError(f"gradient shape {grad.shape} != state shape {state.m.shape}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise ValueError(f"non-finite gradient at index {bad[0]}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return -lr_now * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Cosine decay from lr_init at epoch 0 to lr_final at total_epochs."""

    lr_init: float
    lr_final: float
    total_epochs: int
    kind: str = "cosine"

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unsupported LR schedule kind {self.kind!r}")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be >= 0")


def lr_at(sched: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch <= sched.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    # Endpoints returned directly so the schedule hits them exactly.
    if epoch == 0 or sched.total_epochs == 0:
        return sched.lr_init
    if epoch == sched.total_epochs:
        return sched.lr_final
    frac = epoch / sched.total_epochs
    return sched.lr_final + 0.5 * (sched.lr_init - sched.lr_final) * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class AuxSchedule:
    """Ramp-hold-decay profile for the auxiliary regularizer weight.

    Zero before ``start_epoch``, linear ramp to ``target`` over ``ramp_len``
    epochs, hold for ``hold_len``, then decay (linear or cosine) over
    ``decay_len`` to ``final_frac * target``, where it stays.  A constant
    ("fixed") weight is ramp_len = decay_len = 0 with final_frac = 1.
    """

    target: float
    start_epoch: int = 0
    ramp_len: int = 0
    hold_len: int = 0
    decay_len: int = 0
    decay_kind: str = "linear"
    final_frac: float = 1.0

    def __post_init__(self):
        if self.decay_kind not in ("linear", "cosine"):
            raise ValueError(f"unknown decay kind {self.decay_kind!r}")
        if min(self.start_epoch, self.ramp_len, self.hold_len, self.decay_len) < 0:
            raise ValueError("schedule segment lengths must be >= 0")


def aux_weight_at(sched: AuxSchedule, epoch: int) -> float:
    if epoch < sched.start_epoch:
        return 0.0
    e = epoch - sched.start_epoch
    if e < sched.ramp_len:
        return sched.target * e / sched.ramp_len
    e -= sched.ramp_len
    if e < sched.hold_len:
        return sched.target
    e -= sched.hold_len
    lo = sched.final_frac * sched.target
    if e >= sched.decay_len:
        return lo
    frac = e / sched.decay_len
    if sched.decay_kind == "linear":
        return sched.target + (lo - sched.target) * frac
    return lo + 0.5 * (sched.target - lo) * (1.0 + math.cos(math.pi * frac))


class OptimizerNotBundledError(RuntimeError):
    """Requested optimizer needs an external plug-in that was not supplied."""


# Plug-in registry for optimizers whose update rule is not shipped here
# (the kourkoutas_beta slot).  A factory takes n_params and returns an
# object with .step(grad, lr) -> delta.
_OPTIMIZER_PLUGINS: dict[str, Callable[[int], object]] = {}


def register_optimizer(name: str, factory: Callable[[int], object]) -> None:
    _OPTIMIZER_PLUGINS[name] = factory


def optimizer_slot(name: str, n_params: int):
    """Uniform step-interface optimizers: adam95, adam999, kourkoutas_beta."""
    if name == "adam95":
        return AdamState(n_params, beta2=0.95)
    if name == "adam999":
        return AdamState(n_params, beta2=0.999)
    if name == "kourkoutas_beta":
        if name in _OPTIMIZER_PLUGINS:
            return _OPTIMIZER_PLUGINS[name](n_params)
        raise OptimizerNotBundledError(
            "kourkoutas_beta is not bundled: its update rule is defined in "
            "companion work; register a plug-in via register_optimizer()"
        )
    if name in _OPTIMIZER_PLUGINS:
        return _OPTIMIZER_PLUGINS[name](n_params)
    raise ValueError(f"unknown optimizer {name!r}")
