"""Shared finite-difference oracles and tolerance helpers.

The oracles are deliberately independent of the package's derivative
machinery: plain central differences on function values, with steps chosen
for double precision.
"""

import jax
import numpy as np
import pytest

from resgrad import net as dn


def fd_first_plain(f, x, i, h=1e-4):
    x = np.asarray(x, dtype=float)
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def fd_second_plain(f, x, i, h=1e-4):
    x = np.asarray(x, dtype=float)
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - 2.0 * f(x) + f(xm)) / (h * h)


def fd_first(f, x, i, h=1e-3):
    # Richardson-extrapolated central difference: kills the h^2 truncation
    # term while the step stays large enough to stay clear of roundoff.
    return (4.0 * fd_first_plain(f, x, i, h / 2) - fd_first_plain(f, x, i, h)) / 3.0


def fd_second(f, x, i, h=4e-3):
    return (4.0 * fd_second_plain(f, x, i, h / 2) - fd_second_plain(f, x, i, h)) / 3.0


def fd_param_grad(loss, network, h=1e-6):
    """Central differences of a scalar loss over every flat parameter."""
    loss_j = jax.jit(loss)
    flat = dn.flatten_params(network)
    grad = np.empty_like(flat)
    for k in range(flat.size):
        step = h * max(1.0, abs(flat[k]))
        up, down = flat.copy(), flat.copy()
        up[k] += step
        down[k] -= step
        grad[k] = (
            float(loss_j(dn.unflatten_params(network, up)))
            - float(loss_j(dn.unflatten_params(network, down)))
        ) / (2.0 * step)
    return grad


def assert_rel_close(actual, reference, rtol, floor_frac=1e-6):
    """Componentwise |a - r| <= rtol * max(|r|, floor).

    The floor is a small fraction of the largest reference component, so
    near-zero components are judged against the quantity's overall scale
    rather than against finite-difference noise.
    """
    actual = np.atleast_1d(np.asarray(actual, dtype=float))
    reference = np.atleast_1d(np.asarray(reference, dtype=float))
    assert actual.shape == reference.shape
    scale = np.max(np.abs(reference))
    floor = max(floor_frac * scale, 1e-300)
    denom = np.maximum(np.abs(reference), floor)
    rel = np.max(np.abs(actual - reference) / denom)
    assert rel <= rtol, f"max relative error {rel:.3e} > {rtol:.1e}"


@pytest.fixture
def small_net():
    return dn.init_mlp([2, 16, 16, 1], "tanh", seed=11)
