"""Triggers, the amending function, BadNet-style poisoning and its GRASP enhancement."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from grasplab.data import Dataset
from grasplab.io import decode_array, encode_array

NOISE_TYPES = ("normal", "uniform")

CLEAN, TRIGGER_TARGET, NOISY_SOURCE = 0, 1, 2
PROVENANCE_NAMES = {CLEAN: "clean", TRIGGER_TARGET: "trigger_target", NOISY_SOURCE: "noisy_source"}


@dataclass(frozen=True, eq=False)
class Trigger:
    mask: np.ndarray
    pattern: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float32)
        pattern = np.asarray(self.pattern, dtype=np.float32)
        if mask.shape != pattern.shape:
            raise ValueError(f"mask shape {mask.shape} != pattern shape {pattern.shape}")
        if not np.all(np.isfinite(pattern)):
            raise ValueError("trigger pattern has non-finite entries")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pattern", pattern)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def size(self):
        """l1 norm of the mask."""
        return float(np.abs(self.mask).sum())

    def to_json(self):
        return json.dumps({"mask": encode_array(self.mask), "pattern": encode_array(self.pattern)},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(decode_array(obj["mask"]), decode_array(obj["pattern"]))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def patch_trigger(shape, size=3, corner="bottom_right", value=1.0, margin=1):
    """Square patch of constant ``value`` near an image corner, on every channel."""
    shape = tuple(shape)
    h, w = shape[-2], shape[-1]
    if size + margin > min(h, w):
        raise ValueError("patch does not fit in the image")
    rows = slice(margin, margin + size) if corner.startswith("top") else slice(h - margin - size, h - margin)
    cols = slice(margin, margin + size) if corner.endswith("left") else slice(w - margin - size, w - margin)
    if corner not in ("top_left", "top_right", "bottom_left", "bottom_right"):
        raise ValueError(f"unknown corner {corner!r}")
    mask = np.zeros(shape, dtype=np.float32)
    mask[..., rows, cols] = 1.0
    return Trigger(mask, mask * np.float32(value))


def amend(x, trigger):
    """Apply ``(1 - M) * x + M * pattern`` to one sample or a batch."""
    x = np.asarray(x)
    if x.shape[-trigger.mask.ndim:] != trigger.shape:
        raise ValueError(f"input shape {x.shape} does not end with trigger shape {trigger.shape}")
    m = trigger.mask
    return ((1 - m) * x + m * trigger.pattern).astype(np.float32)


@dataclass(frozen=True)
class PoisonPlan:
    alpha: float = 0.06
    beta: float = 0.05
    c: float = 0.1
    noise_type: str = "normal"
    target_label: int = 0
    seed: int = 0

    def validate(self, n=None, num_classes=None):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.c < 0:
            raise ValueError("noise scale c must be >= 0")
        if self.noise_type not in NOISE_TYPES:
            raise ValueError(f"noise_type must be one of {NOISE_TYPES}, got {self.noise_type!r}")
        if num_classes is not None and not 0 <= self.target_label < num_classes:
            raise ValueError(f"target label {self.target_label} outside [0, {num_classes})")
        if n is not None and _rate(self.alpha) * n < 1:
            raise ValueError(f"alpha * n = {float(_rate(self.alpha) * n):g} < 1: nothing to poison")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# alpha=6%, beta=5% of poisoned data; "split" adds noisy copies for half the poisoned samples
PLAN_PRESETS = {
    "default": dict(alpha=0.06, beta=0.05, c=0.1),
    "split": dict(alpha=0.06, beta=0.5, c=0.1),
}


def _rate(v):
    # exact decimal value, so 0.06 * 0.05 * 1000 is exactly 3
    return Fraction(repr(float(v)))


def loop_count(bound, n):
    """Number of i in 0..n-1 with i < bound."""
    if bound <= 0:
        return 0
    return min(n, int(-(-bound.numerator // bound.denominator)))


@dataclass(frozen=True)
class PoisonedDataset:
    x: np.ndarray
    y: np.ndarray
    provenance: np.ndarray
    source_index: np.ndarray  # index into the clean dataset each row came from

    def __len__(self):
        return len(self.y)

    def counts(self):
        return {name: int(np.count_nonzero(self.provenance == k)) for k, name in PROVENANCE_NAMES.items()}

    def as_dataset(self):
        return Dataset(self.x, self.y)


def _poison(dataset, trigger, alpha, beta, c, noise_type, target_label, seed):
    if len(dataset) == 0:
        raise ValueError("cannot poison an empty dataset")
    n = len(dataset)
    if dataset.sample_shape != trigger.shape:
        raise ValueError(f"trigger shape {trigger.shape} != sample shape {dataset.sample_shape}")
    n_noisy = loop_count(_rate(alpha) * _rate(beta) * n, n)
    n_troj = loop_count(_rate(alpha) * n, n)
    if n_troj < 1:
        raise ValueError("alpha * n < 1: nothing to poison")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    noise_rng = np.random.default_rng([seed, 1])
    masked = trigger.mask != 0
    add_x, add_y, add_p, add_src = [], [], [], []
    for i in range(max(n_noisy, n_troj)):
        src = order[i]
        xi = dataset.x[src]
        if i < n_noisy:
            k = int(masked.sum())
            eps = noise_rng.standard_normal(k) if noise_type == "normal" else noise_rng.uniform(-1.0, 1.0, k)
            noisy = trigger.pattern.astype(np.float64)
            noisy[masked] = np.clip(noisy[masked] + c * eps, 0.0, 1.0)
            add_x.append(amend(xi, Trigger(trigger.mask, noisy)))
            add_y.append(dataset.y[src])
            add_p.append(NOISY_SOURCE)
            add_src.append(src)
        if i < n_troj:
            add_x.append(amend(xi, trigger))
            add_y.append(target_label)
            add_p.append(TRIGGER_TARGET)
            add_src.append(src)
    x = np.concatenate([dataset.x.copy(), np.stack(add_x).astype(dataset.x.dtype)])
    y = np.concatenate([dataset.y.copy(), np.asarray(add_y, dtype=dataset.y.dtype)])
    prov = np.concatenate([np.zeros(n, dtype=np.int8), np.asarray(add_p, dtype=np.int8)])
    src = np.concatenate([np.arange(n), np.asarray(add_src, dtype=np.int64)])
    return PoisonedDataset(x, y, prov, src)


def baseline_poison(dataset, trigger, alpha, target_label, seed=0):
    """BadNet-style poisoning: append trigger-inserted copies labelled ``target_label``."""
    if len(dataset) == 0:
        raise ValueError("cannot poison an empty dataset")
    if _rate(alpha) * len(dataset) < 1:
        raise ValueError("alpha * n < 1: nothing to poison")
    return _poison(dataset, trigger, alpha, 0.0, 0.0, "normal", target_label, seed)


def grasp_poison(dataset, trigger, plan):
    """GRASP poisoning for a fixed trigger.

    After a seeded shuffle, sample i contributes a noisy-trigger copy with its
    own label when i < alpha*beta*n, and an exact-trigger copy labelled with
    the target when i < alpha*n. Noise is drawn per sample and per masked
    pixel, scaled by ``c`` and clipped to [0, 1].
    """
    if len(dataset) == 0:
        raise ValueError("cannot poison an empty dataset")
    plan.validate(len(dataset))
    return _poison(dataset, trigger, plan.alpha, plan.beta, plan.c, plan.noise_type,
                   plan.target_label, plan.seed)


def noise_bound(trigger, x, noise_type="normal"):
    """Largest admissible noise scale for the trigger at clean input ``x``."""
    m_star = trigger.size
    if m_star == 0:
        raise ValueError("empty trigger mask")
    dist = float(np.linalg.norm((amend(x, trigger) - np.asarray(x, dtype=np.float32)).ravel()))
    if noise_type == "uniform":
        return dist
    if noise_type != "normal":
        raise ValueError(f"noise_type must be one of {NOISE_TYPES}")
    log_ratio = gammaln(m_star / 2.0) - gammaln((m_star + 1) / 2.0)
    return dist * np.exp(log_ratio) / np.sqrt(2.0)


def noise_bound_check(trigger, x, c, noise_type="normal"):
    """``"ok"`` when ``c`` is strictly below :func:`noise_bound`, else ``"warn"``."""
    return "ok" if c < noise_bound(trigger, x, noise_type) else "warn"
