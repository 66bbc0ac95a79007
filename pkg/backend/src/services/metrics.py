"""
Detection and aggregation scores
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Hashable, List, Sequence

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from ..core.model import FailureWindow
from ..errors import DataValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "DetectionScore":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def score_detection(predicted: Sequence[FailureWindow], truth: Sequence[FailureWindow]) -> DetectionScore:
    """Greedy one-to-one overlap matching by start time.

    A predicted window is a true positive when it overlaps a truth window that is not
    matched yet; each truth window is matched at most once.
    """
    matched = [False] * len(truth)
    tp = fp = 0
    for p in sorted(predicted, key=lambda w: (w.start_minute, w.end_minute)):
        for k, t in enumerate(truth):
            if not matched[k] and p.overlaps(t):
                matched[k] = True
                tp += 1
                break
        else:
            fp += 1
    return DetectionScore.from_counts(tp, fp, matched.count(False))


def _entropy(labels: Sequence[Hashable]) -> float:
    _, counts = np.unique(np.asarray([str(x) for x in labels]), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(omega: Sequence[Hashable], c: Sequence[Hashable]) -> float:
    """2 I(omega; c) / (H(omega) + H(c)) in nats.

    Both labelings constant gives 1, exactly one constant gives 0.
    """
    if len(omega) != len(c):
        raise DataValidationError(f"label vectors differ in length: {len(omega)} vs {len(c)}")
    if len(omega) == 0:
        raise DataValidationError("NMI needs at least one labeled item")
    h_omega, h_c = _entropy(omega), _entropy(c)
    if h_omega == 0.0 and h_c == 0.0:
        return 1.0
    if h_omega == 0.0 or h_c == 0.0:
        return 0.0
    value = normalized_mutual_info_score(
        [str(x) for x in c], [str(x) for x in omega], average_method="arithmetic"
    )
    return float(min(1.0, max(0.0, value)))


def format_report(metrics: Dict[str, object]) -> List[str]:
    """`metric=value` lines in key order"""
    lines = []
    for key in sorted(metrics):
        value = metrics[key]
        lines.append(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
    return lines
