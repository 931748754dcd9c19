"""Numerical checks of the convergence and weight-gradient claims.

* piecewise-linear subgradient descent: how often random starts reach the
  global minimum as the convex region around it widens;
* the closed-form convergence-probability bound for that setting;
* linear convergence of gradient descent (step 1/L) on PL quadratics;
* the gradient-difference ratio between benign, backdoor and GRASP data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from grasplab import kernels
from grasplab.nn import autograd as ag
from grasplab.nn.model import forward_graph, gradients
from grasplab.poisoning import amend


class AssumptionError(ValueError):
    pass


# --- piecewise-linear descent -------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseLinearSpec:
    breakpoints: np.ndarray  # includes both domain ends
    values: np.ndarray
    hull: tuple  # (lo, hi) interval around the global minimum where the function is convex

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)
        if bp.ndim != 1 or bp.size < 2 or bp.shape != v.shape:
            raise ValueError("need matching 1-D breakpoints and values with at least two entries")
        if not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        lo, hi = self.hull
        if not (bp[0] <= lo <= hi <= bp[-1]):
            raise ValueError("hull must lie inside the domain")
        if not lo <= self.argmin <= hi:
            raise ValueError("global minimum lies outside the hull")

    @property
    def domain(self):
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def argmin(self):
        return float(self.breakpoints[np.argmin(self.values)])

    @property
    def max_slope(self):
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.breakpoints))))

    def __call__(self, x):
        return np.interp(x, self.breakpoints, self.values)


def v_shape_spec(a=0.0, b=1.0, center=None):
    center = 0.5 * (a + b) if center is None else center
    return PiecewiseLinearSpec(np.array([a, center, b]), np.array([1.0, 0.0, 1.0]), (a, b))


def random_pwl_spec(hull_width, seed, a=0.0, b=1.0, n_knots=24):
    """A rugged function on [a, b] with a V-shaped convex basin of the given width.

    The knots outside the basin depend only on ``seed``, so changing
    ``hull_width`` widens the basin while keeping the landscape around it.
    """
    rng = np.random.default_rng(seed)
    width = b - a
    knots = np.linspace(a, b, n_knots)
    vals = rng.uniform(0.3, 1.0, n_knots)
    half = 0.5 * hull_width
    center = a + half + rng.uniform(0.0, 1.0) * max(width - hull_width, 0.0)
    lo, hi = max(a, center - half), min(b, center + half)
    vlo, vhi = np.interp([lo, hi], knots, vals)
    outside = (knots < lo) | (knots > hi)
    bp = np.concatenate([knots[outside], [lo, center, hi]])
    v = np.concatenate([vals[outside], [vlo, 0.0, vhi]])
    order = np.argsort(bp, kind="stable")
    bp, v = bp[order], v[order]
    keep = np.concatenate([[True], np.diff(bp) > 1e-12])
    return PiecewiseLinearSpec(bp[keep], v[keep], (lo, hi))


def simulate_pwl_gd(spec, n_inits, steps, step_size, seed, tol=None):
    """Fraction of uniform random starts that end near the global minimum.

    Runs projected subgradient descent (right-hand slope at breakpoints).
    A run succeeds when it finishes inside the hull within ``tol`` of the
    minimizer; ``tol`` defaults to one maximal step, ``step_size * max_slope``.
    """
    if step_size <= 0:
        raise ValueError("step_size must be > 0")
    if n_inits < 1:
        raise ValueError("n_inits must be >= 1")
    a, b = spec.domain
    tol = step_size * spec.max_slope if tol is None else tol
    x0 = np.random.default_rng(seed).uniform(a, b, n_inits)
    final = kernels.pwl_descent(spec.breakpoints, spec.values, np.ascontiguousarray(x0), int(steps),
                                float(step_size))
    lo, hi = spec.hull
    ok = (final >= lo) & (final <= hi) & (np.abs(final - spec.argmin) <= tol + 1e-12)
    return float(np.mean(ok))


def thm2_bound(B1, B2, a, b, n):
    """Convergence-probability bound ``1 - (4 - B1 B2)^n (1 - B1 B2) / (B1 (b - a))``.

    Returns ``(clamped, raw)``; the raw expression can leave [0, 1].
    """
    if B1 <= 0 or B2 <= 0:
        raise ValueError("B1 and B2 must be positive")
    if b <= a:
        raise ValueError("need b > a")
    if n < 0:
        raise ValueError("n must be >= 0")
    raw = 1.0 - (4.0 - B1 * B2) ** n * (1.0 - B1 * B2) / (B1 * (b - a))
    return min(1.0, max(0.0, raw)), raw


# --- PL quadratics ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadraticSpec:
    """``F(x) = 0.5 x^T A x - b^T x`` with A symmetric positive definite."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise ValueError("A must be square and b a matching vector")
        if not np.allclose(A, A.T):
            raise ValueError("A must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValueError("A must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_eig", eig)

    @property
    def mu(self):
        return float(self._eig[0])

    @property
    def L(self):
        return float(self._eig[-1])

    def value(self, x):
        return 0.5 * x @ self.A @ x - self.b @ x

    def grad(self, x):
        return self.A @ x - self.b

    @property
    def optimum(self):
        return np.linalg.solve(self.A, self.b)


@dataclass
class PLCheckReport:
    records: list
    passed: bool
    first_failure: int | None


def pl_convergence_check(spec, x0, k_max, slack=1e-9):
    """Run gradient descent with step 1/L and test the linear-rate bound at every step.

    Each record holds ``k``, the optimality gap, the bound
    ``(1 - mu/L)^k * gap_0`` and whether ``gap <= bound + slack``.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f_star = spec.value(spec.optimum)
    gap0 = spec.value(x) - f_star
    rate = 1.0 - spec.mu / spec.L
    records, first = [], None
    for k in range(k_max + 1):
        gap = spec.value(x) - f_star
        bound = rate ** k * gap0
        holds = bool(gap <= bound + slack)
        records.append({"k": k, "gap": float(gap), "bound": float(bound), "holds": holds,
                        "value": float(spec.value(x))})
        if not holds and first is None:
            first = k
        x = x - spec.grad(x) / spec.L
    return PLCheckReport(records, first is None, first)


def random_spd(dim, rng, cond_max=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = rng.uniform(1.0, cond_max, dim)
    return (q * eig) @ q.T


# --- weight-gradient analysis -------------------------------------------------

@dataclass
class GradientRatioReport:
    last_layer_ratio: float
    last_layer_ratios: np.ndarray
    hidden_inequality_holds: bool
    hidden_min_ratio: float | None
    n_hidden_compared: int
    details: dict = field(default_factory=dict)


def _hidden_activations(model, xs):
    acts = []
    forward_graph(model, ag.Tensor(np.asarray(xs, dtype=model.dtype)), capture=acts)
    return [a.data.reshape(len(xs), -1) for a in acts]


def check_activation_assumption(model, x_ori, x_troj, x_aug):
    """Every hidden neuron must have non-zero activation sums on all three parts."""
    parts = np.stack([x_ori, x_troj, x_aug])
    for depth, act in enumerate(_hidden_activations(model, parts)):
        prod = act[0].astype(np.float64) * act[1] * act[2]
        dead = np.flatnonzero(prod == 0)
        if dead.size:
            raise AssumptionError(
                f"hidden layer {depth}: neurons {dead[:8].tolist()} have a zero activation sum")


def weight_gradient_ratio(model, x, y, trigger, y_t, noisy_x, loss_scale=1.0, tol=1e-12):
    """Compare square-loss gradients on benign, backdoor and GRASP datasets.

    With x' the trigger-inserted input and x* ``noisy_x``:

    * benign:   (x, y), (x', y),   (x*, y)
    * backdoor: (x, y), (x', y_t), (x*, y_t)
    * GRASP:    (x, y), (x', y_t), (x*, y)

    Returns the ratio ``(g_benign - g_backdoor) / (g_benign - g_grasp)`` for
    final-layer parameters (least-squares scalar and elementwise) and
    whether every hidden-layer parameter with a non-zero denominator has
    ratio > 1.
    """
    if y == y_t:
        raise ValueError("source label equals target label: every gradient difference is 0/0")
    if model.arch[-1]["type"] != "dense":
        raise ValueError("the final layer must be dense")
    x = np.asarray(x, dtype=np.float64)
    xp = amend(x, trigger).astype(np.float64)
    xs = np.asarray(noisy_x, dtype=np.float64)
    check_activation_assumption(model, x, xp, xs)
    X = np.stack([x, xp, xs]).astype(model.dtype)

    def grads(labels):
        g = gradients(model, X, np.asarray(labels, dtype=np.int64), "square")
        return [loss_scale * gi.astype(np.float64) for gi in g]

    g_benign = grads([y, y, y])
    g_backdoor = grads([y, y_t, y_t])
    g_grasp = grads([y, y_t, y])
    num = [a - b for a, b in zip(g_benign, g_backdoor)]
    den = [a - b for a, b in zip(g_benign, g_grasp)]

    n_last = 2  # final dense weight and bias
    ln = np.concatenate([v.ravel() for v in num[-n_last:]])
    ld = np.concatenate([v.ravel() for v in den[-n_last:]])
    if not np.any(np.abs(ld) > tol):
        raise AssumptionError("final-layer gradient differences vanish")
    nz = np.abs(ld) > tol
    ratios = np.full(ld.shape, np.nan)
    ratios[nz] = ln[nz] / ld[nz]
    ls = float(ln @ ld / (ld @ ld))

    hn = np.concatenate([v.ravel() for v in num[:-n_last]]) if len(num) > n_last else np.zeros(0)
    hd = np.concatenate([v.ravel() for v in den[:-n_last]]) if len(den) > n_last else np.zeros(0)
    hz = np.abs(hd) > tol
    hratio = hn[hz] / hd[hz]
    holds = bool(np.all(hratio > 1.0)) if hratio.size else True
    return GradientRatioReport(
        last_layer_ratio=ls,
        last_layer_ratios=ratios,
        hidden_inequality_holds=holds,
        hidden_min_ratio=float(hratio.min()) if hratio.size else None,
        n_hidden_compared=int(hratio.size),
        details={"x_prime": xp, "x_star": xs},
    )


def shared_activation_noise(model, trigger, c, rng):
    """Masked noise that leaves the first layer's pre-activations unchanged.

    The noisy-trigger sample then shares every hidden activation with the
    trigger sample. Needs a dense first layer with fewer units than masked
    pixels.
    """
    first = next(layer for layer in model.arch if layer["type"] != "flatten")
    if first["type"] != "dense":
        raise ValueError("needs a dense first layer")
    W = model.params[0].astype(np.float64)
    keep = trigger.mask.reshape(-1) != 0
    sub = W[:, keep]
    _, s, vt = np.linalg.svd(sub)
    rank = int(np.sum(s > 1e-10 * s.max()))
    null = vt[rank:]
    if null.shape[0] == 0:
        raise ValueError("first layer has no null space on the trigger mask")
    v = null.T @ rng.standard_normal(null.shape[0])
    v /= np.linalg.norm(v)
    eps = np.zeros(keep.size)
    eps[keep] = v
    return c * eps.reshape(trigger.shape)


def random_ratio_instance(seed, in_side=4, hidden=4, num_classes=3, c=0.1, max_tries=1000):
    """A seeded tiny one-hidden-layer instance that satisfies the analysis premises.

    Redraws until every hidden unit is active on the clean, trigger and
    noisy-trigger inputs; the noise shares activations with the trigger
    input (see :func:`shared_activation_noise`). Float64 throughout.
    """
    from grasplab.nn.model import ModelCheckpoint, init_params, mlp_arch
    from grasplab.poisoning import patch_trigger

    shape = (1, in_side, in_side)
    trig = patch_trigger(shape, size=3, margin=0, value=0.5)
    arch = ({"type": "flatten"},) + mlp_arch(in_side * in_side, num_classes, hidden=hidden)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        params = init_params(arch, int(rng.integers(2 ** 31)), np.float64)
        params[1] = params[1] + 0.5  # bias the hidden units towards the active regime
        model = ModelCheckpoint(arch, tuple(params), num_classes, shape)
        x = rng.uniform(0.0, 1.0, shape)
        y_t = int(rng.integers(num_classes))
        y = int((y_t + 1 + rng.integers(num_classes - 1)) % num_classes)
        xs = amend(x, trig).astype(np.float64) + shared_activation_noise(model, trig, c, rng)
        try:
            return weight_gradient_ratio(model, x, y, trig, y_t, xs)
        except AssumptionError:
            continue
    raise AssumptionError(f"no valid instance after {max_tries} draws")
