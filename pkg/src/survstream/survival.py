"""Discrete-time survival machinery and censored-data evaluation statistics.

Time is discretised into bins whose boundaries come from percentiles of the
uncensored follow-up times. A network predicts one conditional hazard per
bin; survival probabilities, the censored NLL loss, concordance indices,
Kaplan-Meier curves and the log-rank test are all built on top of that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from . import autodiff as ad

HAZARD_EPS = 1e-7


class InsufficientEventsError(ValueError):
    """Too few (or degenerate) uncensored times to place bin boundaries."""


class UndefinedMetricError(ValueError):
    """A statistic has an empty comparison set (no comparable pairs, etc.)."""


class DegenerateWeightsError(ValueError):
    """IPCW weight 1/G(t-)^2 undefined because G(t-) = 0."""


@dataclass(frozen=True)
class BinSpec:
    """Discrete time grid: n_bins bins separated by n_bins-1 boundaries."""

    n_bins: int
    boundaries: tuple[float, ...]

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("need at least 2 bins")
        if len(self.boundaries) != self.n_bins - 1:
            raise ValueError("boundary count must be n_bins - 1")
        if any(b >= c for b, c in zip(self.boundaries, self.boundaries[1:])):
            raise InsufficientEventsError("boundaries must be strictly increasing")


@dataclass(frozen=True)
class SurvLossConfig:
    """censored_weight is the alpha_s factor scaling down the censored term."""

    censored_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.censored_weight <= 1.0:
            raise ValueError("censored_weight must lie in [0, 1]")


def compute_bins(times, censor, n_bins: int) -> BinSpec:
    """Bin boundaries at the i/n_bins percentiles of the uncensored times.

    Percentiles use linear interpolation between order statistics.
    """
    times = np.asarray(times, dtype=np.float64)
    censor = np.asarray(censor)
    uncensored = np.sort(times[censor == 0])
    if uncensored.size < n_bins:
        raise InsufficientEventsError(
            f"{uncensored.size} uncensored times for {n_bins} bins")
    qs = [100.0 * i / n_bins for i in range(1, n_bins)]
    bounds = np.percentile(uncensored, qs, method="linear")
    return BinSpec(n_bins, tuple(float(b) for b in bounds))


def assign_bin(t: float, spec: BinSpec) -> int:
    """Bin index of t; boundaries belong to the higher bin, last bin open."""
    return int(np.searchsorted(spec.boundaries, t, side="right"))


def hazards_to_survival(hazards) -> np.ndarray:
    """S[r] = prod_{u<=r} (1 - h[u])."""
    h = np.asarray(hazards, dtype=np.float64)
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValueError("hazards must lie in [0, 1]")
    return np.cumprod(1.0 - h)


def nll_survival_loss(hazards: ad.Tensor, label: int, censored: int,
                      cfg: SurvLossConfig = SurvLossConfig()) -> ad.Tensor:
    """Censored negative log-likelihood on one case, as an autodiff scalar.

    `hazards` is a (1, n_bins) tensor of per-bin conditional hazards.
    Uncensored: -(log S(t_{Y-1}) + log h(t_Y)). Censored:
    -(1 - censored_weight) * log S(t_Y). Hazards are clamped away from
    {0, 1} before the logs.
    """
    n_bins = hazards.shape[1]
    if not 0 <= label < n_bins:
        raise ValueError(f"label {label} outside [0, {n_bins})")
    clamped = np.clip(hazards.data, HAZARD_EPS, 1.0 - HAZARD_EPS)
    # clamp as a constant offset so the graph stays differentiable where active
    h = ad.add(hazards, ad.constant(clamped - hazards.data))
    log_h = ad.log(h)
    log_1mh = ad.log(ad.sub(ad.constant(np.ones((1, n_bins))), h))
    if censored:
        surv_mask = np.zeros((n_bins, 1))
        surv_mask[:label + 1, 0] = 1.0
        log_surv = ad.matmul(log_1mh, ad.constant(surv_mask))
        return ad.scale(log_surv, -(1.0 - cfg.censored_weight))
    surv_mask = np.zeros((n_bins, 1))
    surv_mask[:label, 0] = 1.0  # S(t_{Y-1}); empty sum = log 1 = 0
    pick = np.zeros((n_bins, 1))
    pick[label, 0] = 1.0
    term = ad.add(ad.matmul(log_1mh, ad.constant(surv_mask)),
                  ad.matmul(log_h, ad.constant(pick)))
    return ad.scale(term, -1.0)


def risk_score(hazards) -> float:
    """Negative sum of survival probabilities; higher = shorter survival."""
    return float(-hazards_to_survival(hazards).sum())


def c_index(risks, times, censor) -> float:
    """Harrell-style concordance over pairs (i, j): t_i < t_j, i uncensored."""
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    censor = np.asarray(censor)
    lt = (times[:, None] < times[None, :]) & (censor[:, None] == 0)
    n_pairs = lt.sum()
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pairs")
    gt = risks[:, None] > risks[None, :]
    eq = risks[:, None] == risks[None, :]
    concordant = (lt & gt).sum() + 0.5 * (lt & eq).sum()
    return float(concordant / n_pairs)


def km_estimator(times, events) -> tuple[np.ndarray, np.ndarray]:
    """Product-limit survival estimate at the distinct event times.

    `events` uses 1 = event occurred. Ties at one time point: all events are
    processed before censored cases leave the risk set. Returns (event_times,
    survival) step-curve arrays.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if times.size == 0:
        raise ValueError("empty sample")
    out_t, out_s = [], []
    s = 1.0
    for t in np.unique(times):
        at = times == t
        d = int(events[at].sum())
        n_risk = int((times >= t).sum())
        if d > 0:
            s *= 1.0 - d / n_risk
            out_t.append(float(t))
            out_s.append(s)
    return np.asarray(out_t), np.asarray(out_s)


def _km_left(ts: np.ndarray, ss: np.ndarray, t: float) -> float:
    """Left limit of a KM step curve at t (value just before t)."""
    idx = np.searchsorted(ts, t, side="left")
    return 1.0 if idx == 0 else float(ss[idx - 1])


def c_index_ipcw(risks, times, censor, tau: float | None = None) -> float:
    """Uno's censoring-weighted concordance index.

    Pairs (i, j) with t_i < t_j, t_i < tau, i uncensored get weight
    1 / G(t_i-)^2 where G is the Kaplan-Meier estimate of the censoring
    distribution. Defaults tau to the maximum uncensored time.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    censor = np.asarray(censor)
    if tau is None:
        unc = times[censor == 0]
        if unc.size == 0:
            raise UndefinedMetricError("no uncensored cases")
        tau = float(unc.max())
    g_t, g_s = km_estimator(times, censor)  # censoring distribution
    num = 0.0
    den = 0.0
    for i in range(times.size):
        if censor[i] != 0 or not times[i] < tau:
            continue
        comparable = times > times[i]
        if not comparable.any():
            continue
        g = _km_left(g_t, g_s, times[i])
        if g <= 0.0:
            raise DegenerateWeightsError(f"G(t-) = 0 at t = {times[i]}")
        w = 1.0 / (g * g)
        den += w * comparable.sum()
        num += w * ((risks[i] > risks[comparable]).sum()
                    + 0.5 * (risks[i] == risks[comparable]).sum())
    if den == 0.0:
        raise UndefinedMetricError("no comparable pairs under truncation")
    return float(num / den)


def chi2_sf(x: float, df: int = 1) -> float:
    """Chi-square survival function via the regularized incomplete gamma."""
    if x < 0.0:
        raise ValueError("chi2_sf requires x >= 0")
    return float(gammaincc(df / 2.0, x / 2.0))


def log_rank_test(times_a, events_a, times_b, events_b) -> tuple[float, float]:
    """Two-group log-rank test; returns (chi2, p) with 1 degree of freedom."""
    times_a = np.asarray(times_a, dtype=np.float64)
    times_b = np.asarray(times_b, dtype=np.float64)
    events_a = np.asarray(events_a)
    events_b = np.asarray(events_b)
    if times_a.size == 0 or times_b.size == 0:
        raise ValueError("both groups must be nonempty")
    all_times = np.concatenate([times_a, times_b])
    all_events = np.concatenate([events_a, events_b])
    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    for t in np.unique(all_times[all_events == 1]):
        n_a = int((times_a >= t).sum())
        n_b = int((times_b >= t).sum())
        n = n_a + n_b
        d = int(all_events[all_times == t].sum())
        d_a = int(events_a[times_a == t].sum())
        observed_a += d_a
        expected_a += n_a * d / n
        if n > 1:
            variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance == 0.0:
        raise UndefinedMetricError("log-rank variance is zero")
    chi2 = (observed_a - expected_a) ** 2 / variance
    return float(chi2), chi2_sf(chi2, 1)
