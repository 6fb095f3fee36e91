"""Independent oracles shared by unit and acceptance tests.

These deliberately avoid the library's own code paths: finite differences
for gradients, plain loops over curve rows for barrier values, and counting
loops for ensemble diversity metrics.
"""
from __future__ import annotations

import numpy as np

from lmclab.nn import ModelSpec, Network

FD_STEP = 1e-3
FD_REL_TOL = 1e-3
# Relative error denominator floor: below this gradient magnitude the
# comparison is effectively absolute at the finite-difference noise level.
FD_DENOM_FLOOR = 1e-3


def fd_gradient_check(
    spec: ModelSpec,
    theta_seed: int,
    data_seed: int,
    batch: int,
    param_scale: float = 1.0,
    step: float = FD_STEP,
):
    """Compare every analytic partial derivative against a central difference.

    The loss of a ReLU network is only piecewise smooth; a finite difference
    taken across an activation kink does not estimate the derivative, so
    coordinates whose +-step perturbation flips any ReLU state are excluded.
    Returns (worst relative error over valid coordinates, excluded count,
    total count). Everything runs in float64.
    """
    net = Network(spec)
    rng = np.random.default_rng(data_seed)
    params = net.init_params(theta_seed).astype(np.float64) * param_scale
    if spec.kind == "mlp":
        x = rng.normal(size=(batch, spec.input_dim))
    else:
        x = rng.normal(size=(batch,) + spec.input_shape)
    labels = rng.integers(0, spec.num_classes, size=batch)
    _, grad, _ = net.loss_and_grad(params, x, labels)
    base_pattern = net.relu_pattern(params, x)

    worst = 0.0
    excluded = 0
    for c in range(len(params)):
        p = params.copy()
        p[c] += step
        if not np.array_equal(net.relu_pattern(p, x), base_pattern):
            excluded += 1
            continue
        loss_plus = net.loss(p, x, labels)
        p[c] -= 2 * step
        if not np.array_equal(net.relu_pattern(p, x), base_pattern):
            excluded += 1
            continue
        loss_minus = net.loss(p, x, labels)
        fd = (loss_plus - loss_minus) / (2 * step)
        rel = abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), FD_DENOM_FLOOR)
        worst = max(worst, rel)
    return worst, excluded, len(params)


def brute_force_frankle(lambdas, losses):
    """Eq.-style barrier by a plain loop: max loss minus endpoint mean."""
    best, best_lam = -np.inf, None
    for lam, loss in zip(lambdas, losses):
        if loss > best:
            best, best_lam = loss, lam
    return best - 0.5 * (losses[0] + losses[-1]), best_lam


def brute_force_entezari(lambdas, losses):
    """Max excess of loss above the chord between the endpoints, floored at 0."""
    l0, l1 = losses[0], losses[-1]
    best, best_lam = -np.inf, None
    for lam, loss in zip(lambdas, losses):
        gap = loss - ((1.0 - lam) * l0 + lam * l1)
        if gap > best:
            best, best_lam = gap, lam
    return max(best, 0.0), best_lam


def brute_force_local_min(lambdas, losses):
    """Barrier w.r.t. the mean of the flanking minima of the global peak.

    Zero when the maximum sits only at an endpoint (convex-like basin).
    """
    peak = max(losses)
    interior = [i for i in range(1, len(lambdas) - 1) if losses[i] == peak]
    if not interior:
        idx = 0 if losses[0] >= losses[-1] else len(lambdas) - 1
        return 0.0, lambdas[idx]
    i_star = interior[0]
    left = min(losses[:i_star])
    right = min(losses[i_star + 1:])
    return losses[i_star] - 0.5 * (left + right), lambdas[i_star]


def brute_force_wa_wd(preds_i, preds_j, labels):
    """Wrong agreement / wrong disagreement by explicit counting."""
    wa = wd = 0
    for a, b, y in zip(preds_i, preds_j, labels):
        if a == b and a != y:
            wa += 1
        if a != b and a != y and b != y:
            wd += 1
    n = len(labels)
    return wa / n, wd / n
