"""Incremental semantics-HMM map matcher.

States are landmark positions on road segments; observations are detected
semantic events.  Emission combines a Gaussian on geodesic distance with the
detector confusion probability; transitions combine heading-change agreement
with penalties for landmarks a transition would have skipped undetected.
Decoding is an online Viterbi over a sliding window: when the window is
full, the oldest step's state is committed and never revised.

All probabilities are kept in log domain; -inf marks genuinely impossible
events (zero type probability or unreachable states).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from statistics import median
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from semmatch.roadnet import HiddenState, RoadNetwork, geodesic_distance, wrap_deg
from semmatch.semantics import ConfusionMatrix, SemanticEvent, SemanticType, build_confusion

logger = logging.getLogger(__name__)

Observation = SemanticEvent

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Lower bound applied when calibrating the heading-noise scale; a zero
# scale would make the transition model a delta distribution.
SIGMA_H_FLOOR_DEG = 1.0


class NoCandidatesError(Exception):
    """No hidden state lies within the observation's search radius."""


@dataclass(frozen=True)
class HmmConfig:
    """Matcher tunables."""

    sigma_h_deg: float = 10.0     # heading-change noise scale
    window_steps: int = 10        # sliding-window length before commitment
    err_scale: float = 1.5        # candidate radius multiplier on the fix error
    min_candidates: int = 1       # below this, the connectivity filter is bypassed
    max_candidates: Optional[int] = None  # optional cap, nearest states kept
    v_max_mps: float = 50.0       # speed bound for the connectivity travel budget

    def __post_init__(self):
        if self.sigma_h_deg <= 0.0:
            raise ValueError("sigma_h_deg must be positive")
        if self.window_steps < 2:
            raise ValueError("window_steps must be >= 2")
        if self.err_scale <= 0.0 or self.v_max_mps <= 0.0:
            raise ValueError("err_scale and v_max_mps must be positive")
        if self.min_candidates < 1:
            raise ValueError("min_candidates must be >= 1")
        if self.max_candidates is not None and self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1 when set")


@dataclass
class CandidateSet:
    """Candidate states for one step, with their running prior weights."""

    step: int
    t: float
    states: list[HiddenState]
    priors: Optional[np.ndarray] = None
    fallback: bool = False        # connectivity filter emptied, radius set used
    prior_fallback: bool = False  # prior mass vanished, uniform used


def extract_candidates(
    network: RoadNetwork,
    z: Observation,
    prev: Optional[CandidateSet],
    cfg: HmmConfig,
    step: int = 0,
) -> CandidateSet:
    """States within the error circle of z, filtered by road connectivity.

    The radius is err_scale * z.err_m.  With a previous step, states must be
    reachable from at least one previous candidate within a travel budget of
    v_max * dt; if that filter leaves fewer than min_candidates, the
    unfiltered radius set is used and flagged, so one bad fix cannot sever
    the track.  Raises NoCandidatesError when even the radius set is empty.
    """
    radius = cfg.err_scale * z.err_m
    in_radius = network.query_radius(z.loc, radius)
    if not in_radius:
        raise NoCandidatesError(f"no states within {radius:.0f} m of t={z.t:.1f}")
    if cfg.max_candidates is not None and len(in_radius) > cfg.max_candidates:
        ranked = sorted(
            in_radius, key=lambda s: (geodesic_distance(s.loc, z.loc), s.index)
        )[: cfg.max_candidates]
        in_radius = sorted(ranked, key=lambda s: s.index)
    states = in_radius
    fallback = False
    if prev is not None:
        budget = cfg.v_max_mps * max(z.t - prev.t, 0.0)
        filtered = [
            s for s in in_radius if any(network.connected(p, s, budget) for p in prev.states)
        ]
        if len(filtered) >= cfg.min_candidates:
            states = filtered
        else:
            fallback = True
    return CandidateSet(step=step, t=z.t, states=states, fallback=fallback)


# ----------------------------------------------------------------------
# Probability model
# ----------------------------------------------------------------------


def observation_prob(z: Observation, s: HiddenState, m: ConfusionMatrix) -> float:
    """Log emission probability of observing z at state s.

    Gaussian on the geodesic distance (sigma = the fix error estimate),
    scaled by the detector's probability of reporting z's type for s's
    landmark class.
    """
    p_type = m.prob(z.type, s.type)
    if p_type <= 0.0:
        return float("-inf")
    d = geodesic_distance(z.loc, s.loc)
    return math.log(p_type) - _LOG_SQRT_2PI - math.log(z.err_m) - 0.5 * (d / z.err_m) ** 2


def heading_residual(dtheta_z: float, dtheta_s: float) -> float:
    """Circular distance between observed and map heading change, degrees.

    Segments are undirected, so the map heading change is ambiguous by 180
    degrees; the smaller residual of the two readings is used.
    """
    r_direct = abs(wrap_deg(dtheta_z - dtheta_s))
    r_flipped = abs(wrap_deg(dtheta_z - dtheta_s - 180.0))
    return min(r_direct, r_flipped)


def _transition_log(
    dtheta_z: float,
    dtheta_s: float,
    skipped: Sequence[SemanticType],
    m: ConfusionMatrix,
    sigma_h: float,
) -> float:
    r = heading_residual(dtheta_z, dtheta_s)
    log_p = -_LOG_SQRT_2PI - math.log(sigma_h) - 0.5 * (r / sigma_h) ** 2
    for sem_type in skipped:
        p_miss = m.miss(sem_type)
        if p_miss <= 0.0:
            return float("-inf")
        log_p += math.log(p_miss)
    return log_p


def transition_prob(
    s_i: HiddenState,
    s_j: HiddenState,
    dtheta_z: float,
    network: RoadNetwork,
    m: ConfusionMatrix,
    sigma_h: float,
) -> float:
    """Log transition probability from state s_i to state s_j.

    Gaussian agreement between the observed heading change and the map
    heading change, times the probability of having missed every landmark
    the transition skips.  Unreachable pairs get -inf.
    """
    geometry = network.transition_geometry(s_i, s_j)
    if geometry is None:
        return float("-inf")
    dtheta_s, skipped = geometry
    return _transition_log(dtheta_z, dtheta_s, skipped, m, sigma_h)


def estimate_sigma_h(pairs: Sequence[tuple[float, float]]) -> float:
    """Robust heading-noise scale from (observed, map) heading-change pairs.

    1.4826 times the median absolute residual, the Gaussian-consistent
    median absolute deviation estimate.
    """
    if not pairs:
        raise ValueError("need at least one heading-change pair")
    residuals = [abs(wrap_deg(dz - ds)) for dz, ds in pairs]
    return 1.4826 * median(residuals)


def initial_priors(
    candidates: Sequence[HiddenState], z: Observation, m: ConfusionMatrix
) -> np.ndarray:
    """First-step state priors: confusion weight of the detected type,
    normalized over the candidate set."""
    weights = np.array([m.prob(z.type, s.type) for s in candidates], dtype=float)
    total = weights.sum()
    if total <= 0.0:
        logger.warning("all candidate priors zero at t=%.1f; falling back to uniform", z.t)
        return np.full(len(candidates), 1.0 / len(candidates))
    return weights / total


def _propagate_priors(
    prev_priors: np.ndarray, log_transitions: np.ndarray
) -> tuple[np.ndarray, bool]:
    with np.errstate(divide="ignore"):
        log_prev = np.log(np.maximum(prev_priors, 0.0))
    log_mass = logsumexp(log_prev[:, None] + log_transitions, axis=0)
    if np.all(np.isneginf(log_mass)):
        logger.warning("prior mass vanished; falling back to uniform")
        n = log_transitions.shape[1]
        return np.full(n, 1.0 / n), True
    return np.exp(log_mass - logsumexp(log_mass)), False


def update_priors(prev_priors: np.ndarray, log_transitions: np.ndarray) -> np.ndarray:
    """Propagate state priors through one transition step and renormalize.

    prior_i <- sum_j prior_j * p(i | j), computed with log-sum-exp.  If all
    mass vanishes (every path impossible), falls back to uniform.
    """
    return _propagate_priors(prev_priors, log_transitions)[0]


# ----------------------------------------------------------------------
# Online Viterbi over a sliding window
# ----------------------------------------------------------------------


@dataclass(eq=False)
class _Column:
    labels: list
    log_prior: np.ndarray
    log_obs: np.ndarray
    log_tr: Optional[np.ndarray]  # [prev x cur]; None for the window head
    delta: np.ndarray = field(init=False)
    backptr: Optional[np.ndarray] = field(init=False, default=None)


class TrellisWindow:
    """Sliding-window Viterbi trellis with committed-prefix semantics.

    Columns hold per-state best log scores and back-pointers.  When a push
    exceeds the capacity, the oldest column's state on the current best path
    is committed (it will never change afterwards), the column is dropped,
    and the remaining columns are re-anchored on the next column's priors.

    Ties are broken toward the lowest state position, both at the final
    column and in every back-pointer (numpy argmax keeps the first maximum).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self.columns: list[_Column] = []
        self.committed: list = []

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def last_delta(self) -> np.ndarray:
        return self.columns[-1].delta

    def push(
        self,
        log_obs: np.ndarray,
        labels: Optional[Sequence] = None,
        log_prior: Optional[np.ndarray] = None,
        log_tr: Optional[np.ndarray] = None,
    ) -> None:
        """Append one step; commits and slides when capacity is exceeded."""
        log_obs = np.asarray(log_obs, dtype=float)
        n = len(log_obs)
        col = _Column(
            labels=list(labels) if labels is not None else list(range(n)),
            log_prior=np.asarray(
                log_prior if log_prior is not None else np.full(n, -math.log(n)), dtype=float
            ),
            log_obs=log_obs,
            log_tr=None if not self.columns else np.asarray(log_tr, dtype=float),
        )
        if not self.columns:
            col.delta = col.log_prior + col.log_obs
        else:
            if col.log_tr is None or col.log_tr.shape != (len(self.columns[-1].labels), n):
                raise ValueError("log_tr must be a [previous x current] matrix")
            scores = self.columns[-1].delta[:, None] + col.log_tr
            col.backptr = np.argmax(scores, axis=0)
            col.delta = scores[col.backptr, np.arange(n)] + col.log_obs
        self.columns.append(col)
        if len(self.columns) > self.capacity:
            path, _ = self.decode()
            self.committed.append(path[0])
            self.columns.pop(0)
            self._reanchor()

    def _reanchor(self) -> None:
        """Recompute scores with the new head anchored on its own priors."""
        head = self.columns[0]
        head.log_tr = None
        head.backptr = None
        head.delta = head.log_prior + head.log_obs
        for prev, col in zip(self.columns, self.columns[1:]):
            scores = prev.delta[:, None] + col.log_tr
            col.backptr = np.argmax(scores, axis=0)
            col.delta = scores[col.backptr, np.arange(len(col.labels))] + col.log_obs

    def decode(self) -> tuple[list, float]:
        """Best label path through the current window and its log score."""
        if not self.columns:
            return [], float("-inf")
        last = self.columns[-1]
        pos = int(np.argmax(last.delta))
        loglik = float(last.delta[pos])
        path = [last.labels[pos]]
        for k in range(len(self.columns) - 1, 0, -1):
            pos = int(self.columns[k].backptr[pos])
            path.append(self.columns[k - 1].labels[pos])
        path.reverse()
        return path, loglik

    def flush(self) -> None:
        """Commit the full current decode and clear the window."""
        if self.columns:
            path, _ = self.decode()
            self.committed.extend(path)
            self.columns.clear()

    def full_path(self) -> list:
        """Committed prefix plus the current in-window decode."""
        path, _ = self.decode()
        return list(self.committed) + path


# ----------------------------------------------------------------------
# Matcher
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """Per-observation output line."""

    t: float
    segment_id: Optional[str]
    lat: Optional[float]
    lon: Optional[float]
    loglik: Optional[float]
    stale: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "segment_id": self.segment_id,
                "lat": self.lat,
                "lon": self.lon,
                "loglik": self.loglik,
                "stale": self.stale,
            },
            sort_keys=True,
        )


@dataclass
class MatchOutput:
    """Full matching result for one trace."""

    records: list[StepRecord]
    states: list[HiddenState]       # decoded sequence, one per processed observation
    log_likelihood: float
    skipped_steps: int
    restarts: int


class Matcher:
    """Sequential map matcher for one trace.

    Bind a network, confusion matrix and config once, then feed time-ordered
    semantic events through :meth:`step`.  Instances are single-stream; run
    one per trace.  The shared network and matrix are read-only.
    """

    def __init__(
        self,
        network: RoadNetwork,
        confusion: Optional[ConfusionMatrix] = None,
        config: Optional[HmmConfig] = None,
    ):
        self.network = network
        self.confusion = confusion if confusion is not None else build_confusion()
        self.config = config if config is not None else HmmConfig()
        self._window = TrellisWindow(self.config.window_steps)
        self._prev_cands: Optional[CandidateSet] = None
        self._prev_event: Optional[Observation] = None
        self._records: list[StepRecord] = []
        self._step_index = 0
        self._skipped = 0
        self._restarts = 0
        # Skipped-landmark penalties depend only on the type multiset.
        self._miss_cache: dict[tuple[SemanticType, ...], float] = {}

    # Hook points so the location-only baseline can reuse the machinery.

    def _log_obs_vector(self, z: Observation, states: Sequence[HiddenState]) -> np.ndarray:
        return np.array([observation_prob(z, s, self.confusion) for s in states])

    def _initial_prior_vector(self, z: Observation, states: Sequence[HiddenState]) -> np.ndarray:
        return initial_priors(states, z, self.confusion)

    def _skip_penalty(self, skipped: tuple[SemanticType, ...]) -> float:
        cached = self._miss_cache.get(skipped)
        if cached is None:
            cached = 0.0
            for sem_type in skipped:
                p = self.confusion.miss(sem_type)
                cached = float("-inf") if p <= 0.0 else cached + math.log(p)
                if cached == float("-inf"):
                    break
            self._miss_cache[skipped] = cached
        return cached

    def _log_tr_matrix(
        self,
        prev_states: Sequence[HiddenState],
        cur_states: Sequence[HiddenState],
        dtheta_z: float,
    ) -> np.ndarray:
        sigma = self.config.sigma_h_deg
        const = -_LOG_SQRT_2PI - math.log(sigma)
        out = np.full((len(prev_states), len(cur_states)), float("-inf"))
        for j, pj in enumerate(prev_states):
            for i, si in enumerate(cur_states):
                geometry = self.network.transition_geometry(pj, si)
                if geometry is None:
                    continue
                dtheta_s, skipped = geometry
                penalty = self._skip_penalty(skipped)
                if penalty == float("-inf"):
                    continue
                r = heading_residual(dtheta_z, dtheta_s)
                out[j, i] = const - 0.5 * (r / sigma) ** 2 + penalty
        return out

    def step(self, z: Observation) -> StepRecord:
        """Process one observation and emit the current best estimate.

        NO_CLASS events carry no landmark evidence and must be dropped by
        the caller.  A step with no candidate states is skipped: the
        previous output is repeated with the stale flag set.
        """
        if z.type is SemanticType.NO_CLASS:
            raise ValueError("NO_CLASS events are not matcher observations")
        self._step_index += 1
        try:
            cands = extract_candidates(
                self.network, z, self._prev_cands, self.config, step=self._step_index
            )
        except NoCandidatesError as exc:
            logger.warning("step %d skipped: %s", self._step_index, exc)
            self._skipped += 1
            prev = self._records[-1] if self._records else None
            rec = (
                replace(prev, t=z.t, stale=True)
                if prev is not None
                else StepRecord(t=z.t, segment_id=None, lat=None, lon=None, loglik=None, stale=True)
            )
            self._records.append(rec)
            return rec

        log_obs = self._log_obs_vector(z, cands.states)
        if len(self._window) == 0:
            priors = self._initial_prior_vector(z, cands.states)
            cands.priors = priors
            self._push(cands, log_obs, priors, None)
        else:
            dtheta_z = wrap_deg(z.heading_deg - self._prev_event.heading_deg)
            log_tr = self._log_tr_matrix(self._prev_cands.states, cands.states, dtheta_z)
            best_entry = (self._window.last_delta[:, None] + log_tr).max(axis=0) + log_obs
            if np.all(np.isneginf(best_entry)):
                # Every continuation is impossible (disconnected map region):
                # commit what we have and restart the chain here.
                logger.warning("step %d: no feasible continuation; restarting window",
                               self._step_index)
                self._restarts += 1
                self._window.flush()
                priors = self._initial_prior_vector(z, cands.states)
                cands.priors = priors
                self._push(cands, log_obs, priors, None)
            else:
                priors, degenerate = _propagate_priors(self._prev_cands.priors, log_tr)
                cands.priors = priors
                cands.prior_fallback = degenerate
                self._push(cands, log_obs, priors, log_tr)

        self._prev_cands = cands
        self._prev_event = z
        path, loglik = self._window.decode()
        last: HiddenState = path[-1]
        rec = StepRecord(
            t=z.t,
            segment_id=last.segment_id,
            lat=last.loc.lat,
            lon=last.loc.lon,
            loglik=loglik,
            stale=False,
        )
        self._records.append(rec)
        return rec

    def _push(
        self,
        cands: CandidateSet,
        log_obs: np.ndarray,
        priors: np.ndarray,
        log_tr: Optional[np.ndarray],
    ) -> None:
        with np.errstate(divide="ignore"):
            log_prior = np.log(np.maximum(priors, 0.0))
        self._window.push(log_obs, labels=cands.states, log_prior=log_prior, log_tr=log_tr)

    def result(self) -> MatchOutput:
        """Final output: all step records plus the decoded state sequence."""
        path, loglik = self._window.decode()
        return MatchOutput(
            records=list(self._records),
            states=list(self._window.committed) + path,
            log_likelihood=loglik,
            skipped_steps=self._skipped,
            restarts=self._restarts,
        )


class LocationOnlyMatcher(Matcher):
    """Comparison arm: same candidates, distance-only Gaussian emission,
    uniform transitions, uniform priors.  Ignores all semantic structure."""

    def _log_obs_vector(self, z: Observation, states: Sequence[HiddenState]) -> np.ndarray:
        base = -_LOG_SQRT_2PI - math.log(z.err_m)
        return np.array(
            [base - 0.5 * (geodesic_distance(z.loc, s.loc) / z.err_m) ** 2 for s in states]
        )

    def _initial_prior_vector(self, z: Observation, states: Sequence[HiddenState]) -> np.ndarray:
        return np.full(len(states), 1.0 / len(states))

    def _log_tr_matrix(
        self,
        prev_states: Sequence[HiddenState],
        cur_states: Sequence[HiddenState],
        dtheta_z: float,
    ) -> np.ndarray:
        return np.full((len(prev_states), len(cur_states)), -math.log(len(cur_states)))


def match_events(
    network: RoadNetwork,
    events: Sequence[Observation],
    confusion: Optional[ConfusionMatrix] = None,
    config: Optional[HmmConfig] = None,
    matcher_cls: type = Matcher,
) -> MatchOutput:
    """Match a full event sequence; NO_CLASS events are dropped."""
    m = matcher_cls(network, confusion, config)
    for z in events:
        if z.type is SemanticType.NO_CLASS:
            continue
        m.step(z)
    return m.result()
