"""Attack success rate, unlearning and the four inversion-effectiveness metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from grasplab import kernels
from grasplab.nn.model import predict
from grasplab.nn.train import TrainConfig, sgd_train
from grasplab.poisoning import Trigger, amend

UNLEARN_LR = 0.01
UNLEARN_MOMENTUM = 0.9
UNLEARN_EPOCHS = 5


def asr(model, x, y, trigger, y_t, exclude_target_class=True):
    """Fraction of trigger-amended samples predicted as ``y_t``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if exclude_target_class:
        keep = y != y_t
        x = x[keep]
    if len(x) == 0:
        raise ValueError("no samples left to evaluate ASR")
    hits = predict(model, amend(x, trigger)) == y_t
    return float(np.mean(hits, dtype=np.float64))


def clean_accuracy(model, x, y):
    return float(np.mean(predict(model, x) == np.asarray(y), dtype=np.float64))


def unlearning_set(x, y, trigger, seed, fraction=0.1, trigger_fraction=0.1):
    """10% of the training data, with the trigger stamped on 10% of it; labels kept."""
    x = np.asarray(x)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    n_sub = max(1, int(round(fraction * len(x))))
    idx = np.sort(rng.permutation(len(x))[:n_sub])
    ux = x[idx].copy()
    uy = y[idx].copy()
    n_trig = int(round(trigger_fraction * n_sub))
    stamp = rng.permutation(n_sub)[:n_trig]
    ux[stamp] = amend(ux[stamp], trigger)
    return ux, uy, stamp


def unlearn(model, recovered_trigger, x, y, seed, epochs=UNLEARN_EPOCHS, batch_size=32):
    """Fine-tune on the unlearning set with SGD (lr 0.01, momentum 0.9)."""
    if not isinstance(recovered_trigger, Trigger):
        raise TypeError("recovered_trigger must be a Trigger")
    ux, uy, _ = unlearning_set(x, y, recovered_trigger, seed)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=UNLEARN_LR,
                      momentum=UNLEARN_MOMENTUM, loss_kind="cross_entropy", seed=seed)
    return sgd_train(model, ux, uy, cfg)


def epsilon1(asr_before, asr_after):
    """Absolute ASR change caused by unlearning."""
    return abs(float(asr_before) - float(asr_after))


def epsilon2_jaccard(mask_a, mask_b):
    """|A and B| / (|A| + |B| - |A and B|) for binary masks."""
    a = np.asarray(mask_a) != 0
    b = np.asarray(mask_b) != 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.count_nonzero(a & b))
    denom = int(np.count_nonzero(a)) + int(np.count_nonzero(b)) - inter
    if denom == 0:
        raise ValueError("both masks are empty")
    return inter / denom


def epsilon3(clean_model, recovered_trigger, y_t, x_source, y_source):
    """ASR of a recovered trigger on a model trained without poisoning."""
    return asr(clean_model, x_source, y_source, recovered_trigger, y_t, exclude_target_class=True)


def epsilon4_auc(scores_backdoored, scores_clean):
    """P(score_b > score_c) + 0.5 P(score_b == score_c) over all pairs."""
    b = np.asarray(scores_backdoored, dtype=np.float64).ravel()
    c = np.asarray(scores_clean, dtype=np.float64).ravel()
    if b.size == 0 or c.size == 0:
        raise ValueError("both score lists must be non-empty")
    wins, ties = kernels.auc_pair_counts(np.ascontiguousarray(b), np.ascontiguousarray(c))
    return (wins + 0.5 * ties) / (b.size * c.size)


@dataclass
class MetricsReport:
    asr_before: float
    asr_after_unlearn: float
    epsilon1: float
    epsilon2: float | None
    epsilon3: float | None
    epsilon4: float | None = None
    clean_acc_before: float | None = None
    clean_acc_after: float | None = None
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)
