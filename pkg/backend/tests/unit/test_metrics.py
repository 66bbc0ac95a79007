"""
Unit tests for detection scores, NMI and report formatting
"""
import math
from collections import Counter

import numpy as np
import pytest

from src.core.model import FailureWindow
from src.errors import DataValidationError
from src.services.metrics import DetectionScore, format_report, nmi, score_detection

pytestmark = pytest.mark.unit


def contingency_nmi(omega, c):
    """NMI straight from the contingency table"""
    n = len(omega)
    joint = Counter(zip(omega, c))
    p_w, p_c = Counter(omega), Counter(c)
    mi = sum(k / n * math.log(n * k / (p_w[w] * p_c[x])) for (w, x), k in joint.items())
    h_w = -sum(k / n * math.log(k / n) for k in p_w.values())
    h_c = -sum(k / n * math.log(k / n) for k in p_c.values())
    return 2 * mi / (h_w + h_c)


class TestDetectionScore:
    """Test cases for window matching"""

    def test_one_of_each(self):
        """Test one hit, one false alarm and one miss"""
        score = score_detection(
            [FailureWindow(1, 2), FailureWindow(10, 12)],
            [FailureWindow(2, 3), FailureWindow(20, 21)],
        )

        assert (score.tp, score.fp, score.fn) == (1, 1, 1)
        assert (score.precision, score.recall, score.f1) == (0.5, 0.5, 0.5)

    def test_truth_matched_once(self):
        """Test that two predictions cannot both claim one truth window"""
        score = score_detection([FailureWindow(1, 2), FailureWindow(4, 5)], [FailureWindow(0, 9)])
        assert (score.tp, score.fp, score.fn) == (1, 1, 0)

    def test_empty_inputs(self):
        """Test that empty inputs score zero instead of dividing by zero"""
        assert score_detection([], []) == DetectionScore(0, 0, 0, 0.0, 0.0, 0.0)
        assert score_detection([], [FailureWindow(0, 1)]).fn == 1

    def test_covering_a_missed_failure_never_lowers_recall(self):
        """Test that adding a window over an unmatched truth window keeps or raises recall"""
        rng = np.random.default_rng(3)
        for _ in range(200):
            truth = [FailureWindow(s, s + int(rng.integers(0, 5)))
                     for s in sorted(rng.choice(np.arange(0, 200, 10), size=6, replace=False).tolist())]
            predicted = [FailureWindow(s, s + int(rng.integers(0, 4)))
                         for s in sorted(rng.choice(np.arange(3, 200, 7), size=5, replace=False).tolist())]
            base = score_detection(predicted, truth)

            for t in truth:
                if any(p.overlaps(t) for p in predicted):
                    continue
                extended = score_detection(sorted(predicted + [t], key=lambda w: w.start_minute), truth)
                assert extended.recall >= base.recall
                assert extended.tp == base.tp + 1

    def test_as_dict(self):
        """Test the flat dictionary form"""
        assert DetectionScore.from_counts(2, 0, 2).as_dict() == {
            "tp": 2, "fp": 0, "fn": 2, "precision": 1.0, "recall": 0.5, "f1": pytest.approx(2 / 3),
        }


class TestNmi:
    """Test cases for normalized mutual information"""

    def test_reference_value(self):
        """Test a hand-computed labeling pair"""
        assert nmi([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.343711, abs=1e-6)

    def test_matches_contingency_table(self):
        """Test against a direct computation on random labelings"""
        rng = np.random.default_rng(0)
        for _ in range(20):
            omega = rng.integers(0, 4, 30).tolist()
            c = rng.integers(0, 3, 30).tolist()
            if len(set(omega)) > 1 and len(set(c)) > 1:
                assert nmi(omega, c) == pytest.approx(contingency_nmi(omega, c), abs=1e-9)

    def test_symmetric_and_label_invariant(self):
        """Test symmetry and invariance to renaming clusters"""
        omega, c = [0, 0, 1, 2, 2], ["x", "y", "y", "z", "z"]
        renamed = [7, 7, 3, 5, 5]

        assert nmi(omega, c) == pytest.approx(nmi(c, omega))
        assert nmi(omega, c) == pytest.approx(nmi(renamed, c))

    def test_bounded_on_random_labelings(self):
        """Test 0 <= NMI <= 1 over ten thousand random label pairs"""
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            n = int(rng.integers(1, 20))
            omega = rng.integers(0, int(rng.integers(1, 6)), n).tolist()
            c = rng.integers(0, int(rng.integers(1, 6)), n).tolist()
            assert 0.0 <= nmi(omega, c) <= 1.0

    def test_identical_partitions(self):
        """Test that a perfect clustering scores one"""
        assert nmi([1, 1, 2, 3], ["a", "a", "b", "c"]) == pytest.approx(1.0)

    def test_constant_labelings(self):
        """Test the zero-entropy conventions"""
        assert nmi([0, 0, 0], [5, 5, 5]) == 1.0
        assert nmi([0, 0, 0], [1, 2, 1]) == 0.0
        assert nmi([0, 1, 2], [4, 4, 4]) == 0.0

    def test_invalid_inputs(self):
        """Test length mismatch and empty input"""
        with pytest.raises(DataValidationError):
            nmi([0, 1], [0])
        with pytest.raises(DataValidationError):
            nmi([], [])


class TestReport:
    """Test cases for report formatting"""

    def test_sorted_key_value_lines(self):
        """Test key order and float formatting"""
        lines = format_report({"nmi": 0.5, "n_groups": 3, "mode": "full"})
        assert lines == ["mode=full", "n_groups=3", "nmi=0.500000"]
