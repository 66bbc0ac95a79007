"""
Incident-burst detection on the per-minute incident-count series.

A streaming peaks-over-threshold detector learns the normal range of the count series
from a calibration sample, fits a Generalized Pareto tail to the excesses over a high
empirical threshold and flags every minute above the extreme quantile of level ``risk_q``.
Consecutive anomalous minutes are merged into one failure window.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DetectorConfig
from ..core.model import FailureWindow, IncidentRecord
from ..core.topology import TopologyGraph
from ..errors import DataValidationError, DetectorStateError, UnsortedStreamError

logger = logging.getLogger(__name__)


class Verdict(str, Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"


def count_per_minute(incidents: Iterable[IncidentRecord], start: int, end: int) -> np.ndarray:
    """Number of incidents per minute over the inclusive range, zero-filled

    Raises:
        UnsortedStreamError: incidents are not sorted by minute
    """
    if end < start:
        return np.zeros(0, dtype=np.int64)
    counts = np.zeros(end - start + 1, dtype=np.int64)
    last = None
    for inc in incidents:
        if last is not None and inc.minute < last:
            raise UnsortedStreamError(f"incident stream not sorted: minute {inc.minute} after {last}")
        last = inc.minute
        if start <= inc.minute <= end:
            counts[inc.minute - start] += 1
    return counts


def fit_gpd_moments(excesses: np.ndarray) -> Tuple[float, float]:
    """Method-of-moments Generalized Pareto fit, returns (shape, scale)

    Non-finite values are returned as-is for degenerate samples; callers fall back.
    """
    mean = float(np.mean(excesses))
    var = float(np.var(excesses))
    if var <= 0.0:
        return math.nan, math.nan
    ratio = mean * mean / var
    return 0.5 * (1.0 - ratio), 0.5 * mean * (1.0 + ratio)


class EvtDetector:
    """Streaming peaks-over-threshold detector for an upper-bound anomaly threshold"""

    def __init__(
        self,
        risk_q: float = 1e-3,
        calib_n: int = 288,
        peak_frac: float = 0.02,
        min_peaks: int = 10,
    ):
        if not 0.0 < risk_q < 1.0:
            raise DataValidationError(f"risk_q must lie in (0, 1), got {risk_q}")
        if not 0.0 < peak_frac < 1.0:
            raise DataValidationError(f"peak_frac must lie in (0, 1), got {peak_frac}")
        if calib_n < 1:
            raise DataValidationError(f"calib_n must be positive, got {calib_n}")
        self.risk_q = risk_q
        self.calib_n = calib_n
        self.peak_frac = peak_frac
        self.min_peaks = min_peaks

        self.t: Optional[float] = None
        self.z_q: Optional[float] = None
        self.peaks: List[float] = []
        self.n = 0
        self.n_seen = 0
        self.gamma = math.nan
        self.sigma = math.nan
        self.fallback_threshold: Optional[float] = None
        self.using_fallback = False

    @classmethod
    def from_config(cls, cfg: DetectorConfig, calib_n: Optional[int] = None) -> "EvtDetector":
        return cls(
            risk_q=cfg.risk_q,
            calib_n=cfg.calib_minutes if calib_n is None else calib_n,
            peak_frac=cfg.peak_frac,
            min_peaks=cfg.min_peaks,
        )

    @property
    def calibrated(self) -> bool:
        return self.z_q is not None

    @property
    def n_peaks(self) -> int:
        return len(self.peaks)

    def calibrate(self, sample: Sequence[float]) -> "EvtDetector":
        """Set the peak threshold and fit the tail on an initial batch

        Args:
            sample: at least ``calib_n`` finite observations; all of it is used

        Returns:
            the detector itself, calibrated
        """
        data = np.asarray(sample, dtype=float)
        if data.ndim != 1 or data.size < self.calib_n:
            raise DataValidationError(
                f"calibration needs at least {self.calib_n} observations, got {data.size}"
            )
        if not np.all(np.isfinite(data)):
            raise DataValidationError("calibration sample contains NaN or infinite values")

        ordered = np.sort(data)
        n = ordered.size
        self.t = float(ordered[min(int((1.0 - self.peak_frac) * n), n - 1)])
        self.fallback_threshold = float(ordered[min(int((1.0 - self.risk_q) * n), n - 1)])
        self.peaks = [float(x - self.t) for x in data[data > self.t]]
        self.n = n
        self.n_seen = n
        self._update_threshold()
        if self.using_fallback:
            logger.warning("tail fit unavailable (%d peaks); using empirical quantile %.4g",
                           self.n_peaks, self.fallback_threshold)
        logger.debug("calibrated on %d points: t=%.4g z_q=%.4g peaks=%d fallback=%s",
                     n, self.t, self.z_q, self.n_peaks, self.using_fallback)
        return self

    def _update_threshold(self) -> None:
        z = self._tail_quantile()
        if z is None:
            self.using_fallback = True
            z = self.fallback_threshold
        else:
            self.using_fallback = False
        self.z_q = max(z, self.t)

    def _tail_quantile(self) -> Optional[float]:
        if self.n_peaks < self.min_peaks:
            return None
        gamma, sigma = fit_gpd_moments(np.asarray(self.peaks))
        if not (math.isfinite(gamma) and math.isfinite(sigma)) or sigma <= 0.0:
            return None
        self.gamma, self.sigma = gamma, sigma
        r = self.risk_q * self.n / self.n_peaks
        if abs(gamma) < 1e-8:
            z = self.t - sigma * math.log(r)
        else:
            z = self.t + (sigma / gamma) * (r ** (-gamma) - 1.0)
        return z if math.isfinite(z) else None

    def _require_calibrated(self) -> None:
        if not self.calibrated:
            raise DetectorStateError("detector must be calibrated before observing")

    def classify(self, x: float) -> Verdict:
        """Verdict for x without touching the detector state"""
        self._require_calibrated()
        if math.isnan(x):
            raise DataValidationError("cannot classify NaN")
        return Verdict.ANOMALOUS if x > self.z_q else Verdict.NORMAL

    def observe(self, x: float) -> Verdict:
        """Classify x; normal points above the peak threshold refit the tail"""
        verdict = self.classify(x)
        self.n_seen += 1
        if verdict is Verdict.ANOMALOUS:
            return verdict
        self.n += 1
        if x > self.t:
            self.peaks.append(float(x - self.t))
            self._update_threshold()
        return verdict

    def __repr__(self):
        return (f"<EvtDetector(risk_q={self.risk_q}, t={self.t}, z_q={self.z_q}, "
                f"peaks={self.n_peaks}, n={self.n})>")


def merge_runs(flags: Sequence[bool], start_minute: int = 0) -> List[FailureWindow]:
    """Maximal runs of True flags as inclusive minute windows"""
    windows: List[FailureWindow] = []
    run_start = None
    for offset, flag in enumerate(flags):
        if flag and run_start is None:
            run_start = offset
        elif not flag and run_start is not None:
            windows.append(FailureWindow(start_minute + run_start, start_minute + offset - 1))
            run_start = None
    if run_start is not None:
        windows.append(FailureWindow(start_minute + run_start, start_minute + len(flags) - 1))
    return windows


def detect_failures(counts: Sequence[float], detector: EvtDetector, start_minute: int = 0) -> List[FailureWindow]:
    """Run the detector over a contiguous count series and merge anomalous minutes.

    An uncalibrated detector is calibrated on the first ``calib_n`` counts; those minutes
    are classified against the calibrated threshold without updating it.
    """
    values = np.asarray(counts, dtype=float)
    if np.any(np.isnan(values)):
        raise DataValidationError("count series contains NaN")
    flags: List[bool] = []
    rest = values
    if not detector.calibrated:
        head = values[:detector.calib_n]
        detector.calibrate(head)
        flags = [detector.classify(x) is Verdict.ANOMALOUS for x in head]
        rest = values[detector.calib_n:]
    flags.extend(detector.observe(x) is Verdict.ANOMALOUS for x in rest)
    windows = merge_runs(flags, start_minute)
    logger.info("EVT detection: %d minutes, %d windows, z_q=%.4g", values.size, len(windows), detector.z_q)
    return windows


def fixed_threshold_detect(counts: Sequence[float], threshold: int, start_minute: int = 0) -> List[FailureWindow]:
    """Baseline detector: a minute is anomalous iff its count exceeds ``threshold``"""
    return merge_runs([c > threshold for c in counts], start_minute)


def union_windows(window_lists: Iterable[Sequence[FailureWindow]]) -> List[FailureWindow]:
    """Merge windows from several partitions into one disjoint, sorted list"""
    merged: List[FailureWindow] = []
    for w in sorted((w for ws in window_lists for w in ws), key=lambda w: (w.start_minute, w.end_minute)):
        if merged and w.start_minute <= merged[-1].end_minute + 1:
            last = merged[-1]
            merged[-1] = FailureWindow(last.start_minute, max(last.end_minute, w.end_minute))
        else:
            merged.append(w)
    return merged


# --- availability-zone partitions --------------------------------------------

def partition_names(topology: TopologyGraph, key: str) -> Dict[str, str]:
    """Map node -> partition name for the given partition key"""
    if key == "none":
        return {n: "all" for n in topology.node_names}
    if key == "component":
        return {n: f"zone-{k:03d}" for k, comp in enumerate(topology.components()) for n in comp}
    if key == "layer":
        return {n: topology.layer(n) or "unlayered" for n in topology.node_names}
    raise DataValidationError(f"unknown partition key {key!r}")


def partition_incidents(
    incidents: Sequence[IncidentRecord], topology: TopologyGraph, key: str
) -> Dict[str, List[Tuple[int, IncidentRecord]]]:
    """Split a stream into per-partition sub-streams of (stream index, incident), in name order"""
    owner = partition_names(topology, key)
    parts: Dict[str, List[Tuple[int, IncidentRecord]]] = {name: [] for name in sorted(set(owner.values()))}
    for idx, inc in enumerate(incidents):
        try:
            parts[owner[inc.node]].append((idx, inc))
        except KeyError:
            raise DataValidationError(f"incident node {inc.node!r} not in topology") from None
    return parts


def detect_partitioned(
    incidents: Sequence[IncidentRecord],
    topology: TopologyGraph,
    cfg: DetectorConfig,
    start: int,
    end: int,
    workers: int = 4,
) -> Tuple[Dict[str, List[FailureWindow]], Dict[str, EvtDetector]]:
    """One EVT detector per partition over [start, end], run on a thread pool

    Returns:
        per-partition windows and the per-partition detectors after streaming
    """
    parts = partition_incidents(incidents, topology, cfg.partition_key)
    calib_n = min(cfg.calib_minutes, end - start + 1)

    def run(name: str) -> Tuple[str, List[FailureWindow], EvtDetector]:
        counts = count_per_minute((inc for _, inc in parts[name]), start, end)
        detector = EvtDetector.from_config(cfg, calib_n=calib_n)
        return name, detect_failures(counts, detector, start), detector

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, parts))
    windows = {name: ws for name, ws, _ in results}
    detectors = {name: det for name, _, det in results}
    return windows, detectors
