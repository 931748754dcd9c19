"""Gradient-based trigger inversion in the Neural Cleanse style.

The mask and pattern are optimized through a logistic reparameterization:
``M = sigmoid(a)``, ``P = sigmoid(b)``. The objective over clean inputs X is

    mean_x loss(y_t, f((1 - M) * x + M * P)) + lam * ||M||_1

which is the summed form divided by |X| (so ``lam`` is per-input).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from grasplab.io import decode_array, encode_array
from grasplab.metrics import asr
from grasplab.nn import autograd as ag
from grasplab.nn.model import LOSS_KINDS, forward_graph, loss_graph
from grasplab.poisoning import Trigger

OPTIMIZERS = ("adaptive-step", "fixed-step")


class InversionFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    lam: float = 1e-3
    restarts: int = 3
    steps: int = 300
    step_size: float = 0.1
    optimizer_kind: str = "adaptive-step"
    mask_threshold: float = 0.5
    batch: int = 200
    loss_kind: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.restarts < 1 or self.steps < 1:
            raise ValueError("restarts and steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.optimizer_kind not in OPTIMIZERS:
            raise ValueError(f"optimizer_kind must be one of {OPTIMIZERS}")
        if not 0 < self.mask_threshold < 1:
            raise ValueError("mask_threshold must lie in (0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class InversionResult:
    mask: np.ndarray
    pattern: np.ndarray
    mask_binary: np.ndarray
    restart_losses: list
    restart_asr: list
    chosen_restart: int
    asr: float
    l1: float
    l0: int
    traces: list = field(default_factory=list)
    discarded: list = field(default_factory=list)

    @property
    def trigger(self):
        """The recovered trigger with its continuous mask."""
        return Trigger(self.mask, self.pattern)

    @property
    def binary_trigger(self):
        return Trigger(self.mask_binary, self.pattern)

    def to_json(self):
        d = {
            "mask": encode_array(self.mask),
            "pattern": encode_array(self.pattern),
            "mask_binary": encode_array(self.mask_binary),
            "restart_losses": [float(v) for v in self.restart_losses],
            "restart_asr": [float(v) for v in self.restart_asr],
            "chosen_restart": self.chosen_restart,
            "asr": self.asr,
            "l1": self.l1,
            "l0": self.l0,
            "discarded": list(self.discarded),
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(decode_array(d["mask"]), decode_array(d["pattern"]), decode_array(d["mask_binary"]),
                   d["restart_losses"], d["restart_asr"], d["chosen_restart"], d["asr"], d["l1"], d["l0"],
                   discarded=d.get("discarded", []))


def binarize_mask(mask, tau=0.5):
    """Elementwise ``mask >= tau`` as 0/1 floats."""
    return (np.asarray(mask) >= tau).astype(np.float32)


def inversion_score(result):
    """Negative l0 of the binarized mask; higher means more backdoor-like.

    An empty mask scores 0, the most backdoor-like value; callers should
    treat ``l0 == 0`` as a flag rather than a detection.
    """
    return float(-int(result.l0))


def _objective(model, x, a, b, y_t, lam, loss_kind):
    """Objective value and gradients with respect to the mask/pattern logits."""
    at = ag.Tensor(a, requires_grad=True)
    bt = ag.Tensor(b, requires_grad=True)
    m = ag.sigmoid(at)
    p = ag.sigmoid(bt)
    xt = ag.Tensor(x)
    amended = xt + m * (p - xt)
    out = forward_graph(model, amended)
    labels = np.full(len(x), y_t, dtype=np.int64)
    obj = loss_graph(out, labels, loss_kind) + lam * ag.abs_sum(m)
    obj.backward()
    return float(obj.data), at.grad, bt.grad


def objective_value(model, x, mask, pattern, y_t, lam, loss_kind="cross_entropy"):
    """Objective at an explicit (mask, pattern) in [0,1] space."""
    m = ag.Tensor(np.asarray(mask, dtype=model.dtype))
    p = ag.Tensor(np.asarray(pattern, dtype=model.dtype))
    xt = ag.Tensor(np.asarray(x, dtype=model.dtype))
    out = forward_graph(model, xt + m * (p - xt))
    labels = np.full(len(x), y_t, dtype=np.int64)
    return float((loss_graph(out, labels, loss_kind) + lam * ag.abs_sum(m)).data)


def _run_restart(model, x, y_t, cfg, rng):
    shape = model.input_shape
    a = rng.standard_normal(shape).astype(model.dtype)
    b = rng.standard_normal(shape).astype(model.dtype)
    trace = []
    if cfg.optimizer_kind == "adaptive-step":
        b1, b2, eps = 0.9, 0.999, 1e-8
        ma, va = np.zeros_like(a), np.zeros_like(a)
        mb, vb = np.zeros_like(b), np.zeros_like(b)
        for t in range(1, cfg.steps + 1):
            obj, ga, gb = _objective(model, x, a, b, y_t, cfg.lam, cfg.loss_kind)
            if not np.isfinite(obj):
                return None, trace
            trace.append(obj)
            for prm, g, m1, m2 in ((a, ga, ma, va), (b, gb, mb, vb)):
                m1 *= b1
                m1 += (1 - b1) * g
                m2 *= b2
                m2 += (1 - b2) * g * g
                prm -= (cfg.step_size * (m1 / (1 - b1 ** t)) / (np.sqrt(m2 / (1 - b2 ** t)) + eps)).astype(prm.dtype)
    else:
        obj, ga, gb = _objective(model, x, a, b, y_t, cfg.lam, cfg.loss_kind)
        for _ in range(cfg.steps):
            if not np.isfinite(obj):
                return None, trace
            trace.append(obj)
            step = cfg.step_size
            for _ in range(30):
                na = (a - step * ga).astype(a.dtype)
                nb = (b - step * gb).astype(b.dtype)
                nobj, nga, ngb = _objective(model, x, na, nb, y_t, cfg.lam, cfg.loss_kind)
                if np.isfinite(nobj) and nobj <= obj + 1e-6:
                    a, b, obj, ga, gb = na, nb, nobj, nga, ngb
                    break
                step *= 0.5
            else:
                break  # no acceptable step: stationary to working precision
    obj, _, _ = _objective(model, x, a, b, y_t, cfg.lam, cfg.loss_kind)
    if not np.isfinite(obj):
        return None, trace
    trace.append(obj)
    sig = lambda z: 0.5 * (1.0 + np.tanh(0.5 * z.astype(np.float64)))
    return (sig(a).astype(np.float32), sig(b).astype(np.float32), obj), trace


def invert(model, clean_x, y_t, cfg=InversionConfig(), holdout=None):
    """Recover a putative trigger for target ``y_t``.

    ``clean_x`` drives the optimization; ``holdout`` is an (x, y) pair used
    to score restarts by ASR (defaults to ``clean_x`` with unknown labels,
    in which case every sample counts). The restart with the highest
    holdout ASR wins; ties go to the lower restart index.
    """
    clean_x = np.asarray(clean_x, dtype=model.dtype)
    if len(clean_x) == 0:
        raise ValueError("no clean inputs for inversion")
    if holdout is None:
        hx, hy, excl = clean_x, np.full(len(clean_x), -1), False
    else:
        hx, hy = holdout
        excl = True
    x = clean_x[:cfg.batch]
    results, traces, discarded = [], [], []
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        res, trace = _run_restart(model, x, y_t, cfg, rng)
        traces.append(trace)
        if res is None:
            discarded.append(r)
            results.append(None)
            continue
        results.append(res)
    if all(res is None for res in results):
        raise InversionFailed("every restart produced a non-finite objective")
    best, best_asr, losses, asrs = None, -1.0, [], []
    for r, res in enumerate(results):
        if res is None:
            losses.append(float("nan"))
            asrs.append(float("nan"))
            continue
        m, p, obj = res
        score = asr(model, hx, hy, Trigger(m, p), y_t, exclude_target_class=excl)
        losses.append(obj)
        asrs.append(score)
        if score > best_asr:
            best, best_asr = r, score
    m, p, _ = results[best]
    mb = binarize_mask(m, cfg.mask_threshold)
    return InversionResult(
        mask=m, pattern=p, mask_binary=mb, restart_losses=losses, restart_asr=asrs,
        chosen_restart=best, asr=best_asr, l1=float(np.abs(m).sum()), l0=int(mb.sum()),
        traces=traces, discarded=discarded,
    )
