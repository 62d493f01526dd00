"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two training-trend
criteria (A6, A8) run at desk scale and dominate the runtime; every
tolerance is pinned here, not configured elsewhere.
"""

import itertools
import math
import time

import jax
import jax.numpy as jnp
import numpy as np
import pytest

from conftest import assert_rel_close, fd_first, fd_param_grad, fd_second
from resgrad import annulus, fdref, harness, stage1, stage2
from resgrad import net as dn


def _report(tag: str, ok: bool, detail: str = ""):
    print(f"\n[{tag}] {'PASS' if ok else 'FAIL'}{' - ' + detail if detail else ''}")
    assert ok, f"{tag} failed: {detail}"


def test_a1_derivative_correctness():
    """A1: input derivatives rel 1e-6, parameter gradients rel 1e-5, < 1 min."""
    t0 = time.time()
    shapes = [
        (2, (12,)), (2, (16, 8)), (3, (10, 10)), (2, (8, 8, 8)), (3, (14,)),
    ]
    combos = [
        (dim, hidden, act, seed)
        for (dim, hidden), act in itertools.product(shapes, ("tanh", "silu"))
        for seed in (0, 1)
    ]
    assert len(combos) >= 20
    rng = np.random.default_rng(123)
    checked_nets = 0
    for dim, hidden, act, seed in combos:
        network = dn.init_mlp([dim, *hidden, 1], act, seed)
        pts = rng.uniform(-1.0, 1.0, (10, dim))
        f = lambda x: dn.evaluate(network, x)
        for x in pts:
            bundle = dn.input_derivatives(network, x, second_dirs=tuple(range(dim)))
            assert_rel_close(bundle.grad, [fd_first(f, x, i) for i in range(dim)], rtol=1e-6)
            assert_rel_close(
                [bundle.second[i] for i in range(dim)],
                [fd_second(f, x, i) for i in range(dim)],
                rtol=1e-6,
            )
        pts_j = jnp.asarray(pts)

        def composite(p):
            u = jax.vmap(lambda q: dn.apply(p, q))(pts_j)
            lap = jax.vmap(dn.laplacian_fn(lambda q: dn.apply(p, q), dim))(pts_j)
            return jnp.mean(u**2) + jnp.mean(lap**2)

        _, grad = dn.parameter_gradient(network, composite)
        assert_rel_close(grad, fd_param_grad(composite, network), rtol=1e-5, floor_frac=1e-4)
        checked_nets += 1
    elapsed = time.time() - t0
    _report("A1", checked_nets >= 20 and elapsed < 60.0,
            f"{checked_nets} nets, 10 points each, {elapsed:.1f}s")


def test_a2_proposition1_compatibility():
    """A2: exact fields give fd/ad/shell residual-gradient losses <= 1e-18."""
    u_star = lambda p: stage1.exact_solution(p[0], p[1])
    worst = 0.0
    for strategy in stage1.STRATEGIES:
        bank = stage1.build_aux_bank(strategy, n=32, seed=5)
        for k in range(bank.n_banks):
            grid = bank.node_grid(k)
            r = jax.vmap(stage1.residual_fn(u_star))(jnp.asarray(grid.reshape(-1, 2)))
            fd = float(stage1.fd_resgrad_loss(r.reshape(grid.shape[:2]), bank.h))
            ad = stage1.ad_resgrad_loss(u_star, bank.interior_nodes(k))
            worst = max(worst, fd, ad)
    geom = annulus.standard_geometry()
    for counts in ((8, 32, 32), (5, 12, 9)):
        shell_bank = stage2.build_shell_bank(geom, counts=counts)
        for oracle in (lambda p: jnp.log(p[0]), lambda p: 1.0 + 0.0 * p[0]):
            worst = max(worst, stage2.shell_resgrad_loss(oracle, shell_bank))
    _report("A2", worst <= 1e-18, f"largest compatibility value {worst:.2e}")


def test_a3_stencil_exactness_and_order():
    """A3: linear fields exact to 1e-12; |FD-AD| gap order >= 1.9."""
    a, b, h = 1.7, -0.9, 0.02
    grid = a * (h * np.arange(12))[:, None] + b * (h * np.arange(9))[None, :]
    lin = float(stage1.fd_resgrad_loss(grid, h))
    ok_lin = abs(lin - (a * a + b * b)) <= 1e-12 * (a * a + b * b)

    geom = annulus.standard_geometry()
    bank = stage2.build_shell_bank(geom, counts=(5, 10, 7))
    shell_lin = stage2.shell_resgrad_loss(lambda p: p[2] ** 3 / 6.0, bank)
    ok_shell = abs(shell_lin - 1.0) <= 1e-12

    PI = math.pi
    field = lambda p: stage1.exact_solution(p[0], p[1]) + 0.3 * jnp.sin(2 * PI * p[0]) * jnp.sin(PI * p[1])
    gaps = []
    for n in (33, 65, 129):
        bank1 = stage1.build_aux_bank("fixed_safe", n=n)
        node_grid = bank1.node_grid(0)
        r = jax.vmap(stage1.residual_fn(field))(jnp.asarray(node_grid.reshape(-1, 2)))
        fd = float(stage1.fd_resgrad_loss(r.reshape(node_grid.shape[:2]), bank1.h))
        ad = stage1.ad_resgrad_loss(field, bank1.interior_nodes(0))
        gaps.append(abs(fd - ad))
    orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
    ok_order = all(o >= 1.9 for o in orders)
    _report("A3", ok_lin and ok_shell and ok_order,
            f"linear={lin:.15f}, shell={shell_lin:.15f}, orders={[f'{o:.2f}' for o in orders]}")


def test_a4_weight_matching():
    """A4: matched comparator weight reproduces the formula exactly."""
    ok = (
        stage1.match_ad_weight(1e-3, 2.0, 4.0) == 5e-4
        and stage1.match_ad_weight(1e-3, 3.7, 3.7) == 1e-3
        and stage1.match_ad_weight(2e-3, 5.0, 8.0) == 2e-3 * 5.0 / 8.0
    )
    _report("A4", ok, "lambda_FD * S_FD / S_AD, including (1e-3, 2, 4) -> 5e-4")


def test_a5_sign_test():
    """A5: exact values and two-sided symmetry for all n <= 12."""
    ok = (
        harness.paired_sign_test(6, 6) == 0.03125
        and harness.paired_sign_test(3, 6) == 1.0
        and harness.paired_sign_test(5, 6) == 0.21875
    )
    for n in range(1, 13):
        counts = [0] * (n + 1)
        for bits in itertools.product((0, 1), repeat=n):
            counts[sum(bits)] += 1
        for wins in range(n + 1):
            k = max(wins, n - wins)
            brute = min(1.0, 2.0 * sum(counts[k:]) / 2**n)
            ok = ok and math.isclose(harness.paired_sign_test(wins, n), brute, rel_tol=1e-14)
            ok = ok and harness.paired_sign_test(wins, n) == harness.paired_sign_test(n - wins, n)
    _report("A5", ok, "(6,6)=0.03125, (3,6)=1.0, (5,6)=0.21875, symmetric for n<=12")


# Desk-scale Stage-1 trend protocol: architecture, optimizer, LR, epochs and
# the weight rungs are pinned by the criterion; cloud/bank sizes are the
# package's reduced-scale defaults for this study.
A6_BASE = dict(
    epochs=3000, hidden_layers=4, width=32, activation="tanh", optimizer="adam999",
    lr_init=1e-3, lr_final=1e-5, n_interior=768, n_boundary=192,
    n_val_interior=384, n_val_boundary=96, bank_n=32, audit_points=4096, val_every=100,
)


def test_a6_stage1_scaled_trend():
    """A6: residual RMSE and best-val means non-increasing over {0, 1e-4, 1e-3}."""
    t0 = time.time()
    means_rmse = []
    means_val = []
    for weight in (0.0, 1e-4, 1e-3):
        rmse = []
        val = []
        for seed in (0, 1, 2):
            cfg = stage1.Stage1TrainConfig(
                arm=("off" if weight == 0.0 else "fd_fixed"),
                aux_weight=(weight if weight else 1e-3),
                seed_init=seed, seed_cloud=seed, seed_audit=seed, **A6_BASE,
            )
            res = stage1.train_stage1(cfg)
            assert not res.failed
            rmse.append(res.metrics.residual_rmse)
            val.append(res.best_val)
        means_rmse.append(float(np.mean(rmse)))
        means_val.append(float(np.mean(val)))
    elapsed = time.time() - t0

    def trend_ok(means):
        inversions = [
            (means[i + 1] - means[i]) / means[i]
            for i in range(2)
            if means[i + 1] > means[i]
        ]
        return len(inversions) <= 1 and all(v <= 0.05 for v in inversions)

    ok = trend_ok(means_rmse) and trend_ok(means_val)
    _report(
        "A6", ok,
        f"mean residual RMSE {[f'{v:.4f}' for v in means_rmse]}, "
        f"mean best val {[f'{v:.6f}' for v in means_val]}, {elapsed/60:.1f} min",
    )


def test_a7_fd_reference_sanity():
    """A7: q=0 constant, axisymmetric order >= 1.8, radial scale separation."""
    t0 = time.time()
    geom = annulus.standard_geometry()
    f0 = fdref.solve_reference(9, 12, 9, geom, annulus.constant_flux(geom, 0.0))
    dev = float(np.max(np.abs(f0.values - 1.0)))
    ok_const = dev <= 1e-8

    geom0 = annulus.AnnulusGeometry(amplitude=0.0)
    q = 0.7
    profile = fdref.radial_log_profile(geom0, q)
    errs = []
    for n in (9, 17, 33):
        field = fdref.solve_reference(
            n, 8, n, geom0, annulus.constant_flux(geom0, q), inlet_profile=profile
        )
        r = geom0.r_min + field.s_nodes * (geom0.r_max - geom0.r_min)
        errs.append(float(np.sqrt(np.mean((field.values - profile(r)[:, None, None]) ** 2))))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    ok_order = all(o >= 1.8 for o in orders)

    rows = fdref.grid_study([(13, 24, 33), (49, 24, 33)], geom, annulus.default_flux(geom))
    sep = rows[0].rel_l2_t_wall / max(rows[0].rel_l2_dtdn_wall, 1e-300)
    ok_sep = sep >= 100.0
    elapsed = time.time() - t0
    _report(
        "A7", ok_const and ok_order and ok_sep,
        f"|T-1|={dev:.1e}, orders={[f'{o:.2f}' for o in orders]}, "
        f"T_wall/flux change ratio={sep:.1e}, {elapsed:.0f}s",
    )


# Desk-scale Stage-2 shell-effect protocol: model, optimizer, LR, epochs,
# shell weight and seeds pinned by the criterion; clouds and bank reduced.
A8_BASE = dict(
    epochs=2000, hidden_layers=4, width=32, activation="silu", optimizer="adam999",
    lr_init=1e-3, lr_final=1e-5, n_interior=768, n_boundary=256, n_pairs=64,
    n_val_interior=256, n_val_boundary=96, n_val_pairs=32,
    shell_counts=(6, 24, 24), audit_n_theta=128, audit_n_z=128, val_every=100,
)


def test_a8_stage2_directional_shell_effect():
    """A8: fixed shell 5e-4 beats OFF on the wall BC audit on >= 2 of 3 seeds."""
    t0 = time.time()
    wins = 0
    detail = []
    for seed in (0, 1, 2):
        audits = {}
        for arm in ("off", "shell_fixed"):
            cfg = stage2.Stage2TrainConfig(
                arm=arm, shell_weight=5e-4,
                seed_init=seed, seed_cloud=seed, seed_audit=seed, **A8_BASE,
            )
            res = stage2.train_stage2(cfg)
            assert not res.failed
            audits[arm] = res.report.wall_bc_rmse
        if audits["shell_fixed"] < audits["off"]:
            wins += 1
        detail.append(f"seed{seed}: off={audits['off']:.4f} shell={audits['shell_fixed']:.4f}")
    elapsed = time.time() - t0
    _report("A8", wins >= 2, f"{wins}/3 wins ({'; '.join(detail)}), {elapsed/60:.1f} min")


def test_a9_determinism():
    """A9: identical config twice gives a bit-identical summary digest."""
    cfg = harness.RunConfig(
        stage="stage1",
        stage1=stage1.Stage1TrainConfig(
            arm="fd_fixed", epochs=25, n_interior=64, n_boundary=24,
            n_val_interior=32, n_val_boundary=12, bank_n=12, audit_points=64, val_every=5,
        ),
    )
    a = harness.run(cfg, write=False)
    b = harness.run(cfg, write=False)
    cfg2 = harness.RunConfig(
        stage="stage2",
        stage2=stage2.Stage2TrainConfig(
            arm="shell_fixed", epochs=10, n_interior=64, n_boundary=24, n_pairs=12,
            n_val_interior=32, n_val_boundary=12, n_val_pairs=6,
            shell_counts=(4, 8, 8), audit_n_theta=12, audit_n_z=12, val_every=5,
        ),
    )
    c = harness.run(cfg2, write=False)
    d = harness.run(cfg2, write=False)
    ok = a.core_digest() == b.core_digest() and c.core_digest() == d.core_digest()
    _report("A9", ok, "stage-1 and stage-2 rerun digests identical")
