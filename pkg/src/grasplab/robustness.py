"""Trigger / obstructed robustness, local Lipschitz estimates and increasing-rate fits."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from grasplab.nn.model import forward, logit_input_gradient, predict
from grasplab.poisoning import amend


@dataclass(frozen=True)
class RobustnessQuery:
    """Search settings for minimal masked-subspace L2 flips.

    Each direction is scanned outward in steps of ``scan_step`` up to
    ``r_max``; the first flipping step is then bisected to ``bisect_tol``.
    """

    r_max: float = 3.0
    directions: int = 8
    bisect_tol: float = 1e-3
    scan_step: float = 0.02
    seed: int = 0
    norm: str = "l2"

    def __post_init__(self):
        if self.r_max <= 0:
            raise ValueError("r_max must be > 0")
        if self.bisect_tol <= 0:
            raise ValueError("bisect_tol must be > 0")
        if self.directions < 1:
            raise ValueError("directions must be >= 1")
        if self.scan_step <= 0:
            raise ValueError("scan_step must be > 0")
        if self.norm != "l2":
            raise ValueError("only the l2 norm is supported")

    def to_dict(self):
        return asdict(self)


def _margin_weights(logits, cls):
    # d(logit_cls - logit_runner_up)
    w = np.zeros_like(logits)
    others = logits.copy()
    others[:, cls] = -np.inf
    w[:, cls] = 1.0
    if logits.shape[1] > 1:
        w[np.arange(len(logits)), others.argmax(axis=1)] -= 1.0
    return w


def _directions(model, x, mask, cls, q):
    masked = np.asarray(mask).reshape(-1) != 0
    m = int(masked.sum())
    dirs = []
    logits = forward(model, x[None])
    g = logit_input_gradient(model, x[None], _margin_weights(logits, cls))[0].reshape(-1)
    g = np.where(masked, -g.astype(np.float64), 0.0)
    norm = np.linalg.norm(g)
    if norm > 0:
        dirs.append(g / norm)
    k = 0
    while len(dirs) < q.directions:
        v = np.zeros(masked.size)
        v[masked] = np.random.default_rng([q.seed, k]).standard_normal(m)
        dirs.append(v / np.linalg.norm(v))
        k += 1
    return [d.reshape(x.shape) for d in dirs]


def _flip_radius(model, x, direction, cls, q):
    n_steps = int(np.floor(q.r_max / q.scan_step + 1e-9))
    radii = q.scan_step * np.arange(1, n_steps + 1)
    if n_steps == 0 or radii[-1] < q.r_max - 1e-12:
        radii = np.append(radii, q.r_max)
    pts = x[None] + radii.reshape(-1, *([1] * x.ndim)) * direction[None]
    flipped = predict(model, pts.astype(np.float32)) != cls
    hits = np.flatnonzero(flipped)
    if hits.size == 0:
        return None
    hi = radii[hits[0]]
    lo = radii[hits[0] - 1] if hits[0] > 0 else 0.0
    while hi - lo > q.bisect_tol:
        mid = 0.5 * (lo + hi)
        if predict(model, (x + mid * direction)[None].astype(np.float32))[0] != cls:
            hi = mid
        else:
            lo = mid
    return float(hi)


def _min_flip(model, x, mask, cls, q):
    best = None
    for d in _directions(model, x, mask, cls, q):
        r = _flip_radius(model, x, d, cls, q)
        if r is not None and (best is None or r < best):
            best = r
    return best


def _check_mask(mask, x):
    mask = np.asarray(mask)
    if mask.shape != x.shape:
        raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
    if not np.any(mask != 0):
        raise ValueError("empty mask: no coordinates to perturb")
    return mask


def trigger_robustness(model, x_prime, mask, y_t, q=RobustnessQuery()):
    """Smallest masked L2 perturbation moving the prediction at ``x_prime`` off ``y_t``.

    Returns 0.0 if the trigger does not fire and ``None`` when no flip is
    found within ``q.r_max``. Perturbed points are not clipped to [0, 1].
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    mask = _check_mask(mask, x_prime)
    if predict(model, x_prime[None].astype(np.float32))[0] != y_t:
        return 0.0
    return _min_flip(model, x_prime, mask, y_t, q)


def obstructed_robustness(model, x, mask, q=RobustnessQuery(), label=None):
    """Smallest masked L2 perturbation changing the prediction at benign ``x``.

    With ``label`` given, a sample the model already gets wrong returns 0.0.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = _check_mask(mask, x)
    pred = int(predict(model, x[None].astype(np.float32))[0])
    if label is not None and pred != label:
        return 0.0
    return _min_flip(model, x, mask, pred, q)


@dataclass
class RobustnessReport:
    trigger_radii: list = field(default_factory=list)   # per sample: float | None | "excluded"
    benign_radii: list = field(default_factory=list)
    r_t: float | None = None
    r_b: float | None = None
    ratio: float | None = None
    n_samples: int = 0
    counts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    query: dict = field(default_factory=dict)

    def to_dict(self, with_samples=False):
        d = {k: v for k, v in asdict(self).items() if k not in ("trigger_radii", "benign_radii")}
        if with_samples:
            d["trigger_radii"] = self.trigger_radii
            d["benign_radii"] = self.benign_radii
        return d

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "kind", "radius"])
            for kind, radii in (("trigger", self.trigger_radii), ("benign", self.benign_radii)):
                for i, r in enumerate(radii):
                    if r == "excluded":
                        continue
                    w.writerow([i, kind, "NF" if r is None else f"{r:.9g}"])


def _mean_found(radii):
    found = [r for r in radii if isinstance(r, float)]
    return (float(np.mean(np.asarray(found, dtype=np.float64))) if found else None), len(found)


def overall_robustness(model, x, y, trigger, y_t, q=RobustnessQuery()):
    """Average trigger and obstructed robustness over a set of clean samples.

    Samples where the trigger does not fire (trigger side) or the model is
    not astute (benign side) are excluded from the means and counted.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("empty dataset")
    xp = amend(x, trigger)
    pred_clean = predict(model, x)
    pred_trig = predict(model, xp)
    report = RobustnessReport(n_samples=len(x), query=q.to_dict())
    for i in range(len(x)):
        if pred_trig[i] == y_t:
            report.trigger_radii.append(_min_flip(model, xp[i].astype(np.float64), trigger.mask, y_t, q))
        else:
            report.trigger_radii.append("excluded")
        if pred_clean[i] == y[i]:
            report.benign_radii.append(_min_flip(model, x[i].astype(np.float64), trigger.mask, int(y[i]), q))
        else:
            report.benign_radii.append("excluded")
    report.r_t, nt = _mean_found(report.trigger_radii)
    report.r_b, nb = _mean_found(report.benign_radii)
    report.counts = {
        "trigger_found": nt,
        "trigger_not_found": sum(r is None for r in report.trigger_radii),
        "trigger_excluded": report.trigger_radii.count("excluded"),
        "benign_found": nb,
        "benign_not_found": sum(r is None for r in report.benign_radii),
        "benign_excluded": report.benign_radii.count("excluded"),
    }
    report.flags.append("search_unclipped")
    if report.r_t is not None and report.r_b:
        report.ratio = report.r_t / report.r_b
    else:
        report.flags.append("ratio_undefined")
    return report


def _ball_points(rng, x, r, k, mask=None):
    d = x.size
    v = rng.standard_normal((k, d))
    if mask is not None:
        v *= (np.asarray(mask).reshape(-1) != 0)
        d = int(np.count_nonzero(mask))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # strictly inside the open ball
    rad = r * rng.uniform(0.0, 1.0, size=(k, 1)) ** (1.0 / d) * (1 - 1e-9)
    return x.reshape(1, -1) + rad * v


def _outputs(model, pts, output):
    logits = forward(model, pts).astype(np.float64)
    if output == "logits":
        return logits
    if output == "probs":
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
    raise ValueError("output must be 'logits' or 'probs'")


def _jacobian_norms(model, pts, output, mask=None):
    """Spectral norm of d f / d x at each point (columns restricted to ``mask``)."""
    logits = forward(model, pts).astype(np.float64)
    K = logits.shape[1]
    keep = slice(None) if mask is None else np.asarray(mask).reshape(-1) != 0
    rows = []
    for k in range(K):
        w = np.zeros_like(logits)
        w[:, k] = 1.0
        g = logit_input_gradient(model, pts, w).reshape(len(pts), -1)
        rows.append(g[:, keep].astype(np.float64))
    J = np.stack(rows, axis=1)  # (P, K, m)
    if output == "probs":
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = z / z.sum(axis=1, keepdims=True)
        J = (p[:, :, None] * (np.eye(K)[None] - p[:, None, :])) @ J
    return np.linalg.norm(J, ord=2, axis=(1, 2))


def local_lipschitz(model, x, r, n_pairs=64, seed=0, grad_probes=True, output="logits", mask=None):
    """Lower-bound estimate of the local Lipschitz constant in the L2 ball B(x, r).

    Maximum of ||f(x2) - f(x1)|| / ||x2 - x1|| over ``n_pairs`` uniform pairs,
    together with Jacobian spectral norms at the first point of every pair.
    Pair k depends only on (seed, k), so more pairs never lowers the estimate.
    ``mask`` restricts the ball to a coordinate subspace.
    """
    if r <= 0:
        raise ValueError("radius r must be > 0")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    p1, p2 = [], []
    for k in range(n_pairs):
        rng = np.random.default_rng([seed, k])
        a, b = _ball_points(rng, x, r, 2, mask)
        p1.append(a)
        p2.append(b)
    p1 = np.asarray(p1).reshape(n_pairs, *shape)
    p2 = np.asarray(p2).reshape(n_pairs, *shape)
    f1 = _outputs(model, p1, output)
    f2 = _outputs(model, p2, output)
    dx = np.linalg.norm((p2 - p1).reshape(n_pairs, -1), axis=1)
    est = float(np.max(np.linalg.norm(f2 - f1, axis=1) / dx))
    if grad_probes:
        est = max(est, float(_jacobian_norms(model, p1, output, mask).max()))
    return est


def mean_local_lipschitz(model, points, r, n_pairs=64, seed=0, **kw):
    vals = [local_lipschitz(model, p, r, n_pairs, seed=[seed, i] if isinstance(seed, int) else seed, **kw)
            for i, p in enumerate(points)]
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


def lipschitz_fold_change(model_a, model_b, points, r, n_pairs=64, seed=0, **kw):
    """Mean local Lipschitz estimate of ``model_a`` over ``points`` divided by that of ``model_b``."""
    if model_a.input_shape != model_b.input_shape:
        raise ValueError("models take different input shapes")
    num = mean_local_lipschitz(model_a, points, r, n_pairs, seed, **kw)
    den = mean_local_lipschitz(model_b, points, r, n_pairs, seed, **kw)
    if den == 0:
        raise ZeroDivisionError("model_b has zero estimated local Lipschitz constant")
    return num / den


def increasing_rate_fit(samples, f_min):
    """Fit ``f - f_min = c_kappa * distance**kappa`` by least squares in log-log space.

    Returns ``(kappa, c_kappa)``.
    """
    pts = [(float(d), float(v)) for d, v in samples if d > 0 and v > f_min]
    if len(pts) < 5:
        raise ValueError(f"need at least 5 points with distance > 0 and value > f_min, got {len(pts)}")
    d = np.log(np.array([p[0] for p in pts]))
    v = np.log(np.array([p[1] for p in pts]) - f_min)
    if np.ptp(d) == 0:
        raise ValueError("degenerate fit: all distances are equal")
    kappa, log_c = np.polyfit(d, v, 1)
    return float(kappa), float(np.exp(log_c))
