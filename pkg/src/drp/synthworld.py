"""Synthetic search-session logs generated from an explicit causal model.

Every impression carries its oracle relevance ``R*``, oracle preference
``P*``, the user's relevance sensitivity for the query and the resulting area
id, so downstream analysis can be checked against ground truth.

Generative story (all draws from one seeded PCG64 stream):

* user, query and item latents are uniform on the sphere of radius sqrt(k)
  (normalized Gaussians), so every query has the same share of relevant
  items and a uniformly drawn item's relevance and preference scores are
  uncorrelated;
* relevance logit ``scale * <z_q, z_i> / sqrt(k) + c_r`` and preference logit
  ``scale * <z_u, z_i> / sqrt(k) + c_p``, with the offsets solved so the mean
  rate of a uniformly drawn item hits ``relevance_rate`` / ``preference_rate``;
* sessions pick their query, and candidate slots their item, with Zipf-like
  popularity (weight ``rank ** -zipf`` over a random ranking of the ids);
* each candidate slot is, with probability ``gamma``, drawn from the query's
  relevant pool (items whose relevance logit is >= 0, same popularity
  weighting) instead of from all items;
  relevant exposures that turn out relevant get ``kappa`` added to their
  preference logit, which entangles P* with R* in the logs;
* sensitivity: per-user mean ``m_u ~ Beta(sens_a, sens_b)``, per (user, query)
  ``s ~ Beta(c m_u, c (1 - m_u))``;
* behaviour: P*=R*=1 always clicks; P*=1, R*=0 clicks with probability
  ``pi_p (1 - s) / (1 - mean_s)``; P*=0, R*=1 with ``pi_r s / mean_s``;
  P*=R*=0 never clicks. Both off-diagonal rates average to ``pi_p`` and
  ``pi_r`` over the sensitivity distribution.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import roots_jacobi

from drp.data import HISTORY_MAX, Dataset
from drp.errors import ConfigurationError, ContradictionError, GenerationError
from drp.numerics import make_rng, sigmoid

# AREA_TABLE[P, R, B] -> area id; -1 marks the two triples the causal model forbids.
AREA_TABLE = np.array(
    [[[0, -1], [5, 4]],
     [[1, 2], [-1, 3]]],
    dtype=np.int64,
)


def label_area(P: int, R: int, B: int) -> int:
    """Area id 0..5 of a (preference, relevance, behaviour) triple."""
    for name, bit in (("P", P), ("R", R), ("B", B)):
        if bit not in (0, 1):
            raise ValueError(f"{name} must be 0 or 1, got {bit!r}")
    area = int(AREA_TABLE[P, R, B])
    if area < 0:
        raise ContradictionError(f"triple (P={P}, R={R}, B={B}) contradicts the causal assumption")
    return area


@dataclass
class WorldConfig:
    n_users: int = 2000
    n_queries: int = 5000
    n_items: int = 20000
    latent_dim: int = 8
    n_interactions: int = 200_000
    session_length: int = 20
    gamma: float = 0.5
    item_zipf: float = 1.2
    query_zipf: float = 1.2
    pi_p: float = 0.5
    pi_r: float = 0.5
    relevance_rate: float = 0.25
    preference_rate: float = 0.35
    scale: float = 4.0
    kappa: float = 3.0
    sens_a: float = 2.0
    sens_b: float = 2.0
    sens_concentration: float = 10.0
    max_tries: int = 2000
    seed: int = 0

    @property
    def sensitivity_mean(self) -> float:
        return self.sens_a / (self.sens_a + self.sens_b)

    def validate(self) -> None:
        if self.latent_dim < 2:
            raise ConfigurationError("world.latent_dim must be >= 2")
        for name in ("n_users", "n_queries", "n_items", "latent_dim", "n_interactions",
                     "session_length", "max_tries"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"world.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("gamma", "pi_p", "pi_r"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"world.{name} must lie in [0, 1], got {getattr(self, name)}")
        for name in ("relevance_rate", "preference_rate"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"world.{name} must lie in (0, 1), got {getattr(self, name)}")
        for name in ("scale", "sens_a", "sens_b", "sens_concentration"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"world.{name} must be positive, got {getattr(self, name)}")
        for name in ("item_zipf", "query_zipf"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"world.{name} must be non-negative, got {getattr(self, name)}")
        if self.kappa < 0:
            raise ConfigurationError("world.kappa must be non-negative")
        if self.seed < 0:
            raise ConfigurationError("world.seed must be non-negative")
        mu = self.sensitivity_mean
        # the sensitivity-modulated click rates must stay probabilities for every s in [0, 1]
        if self.pi_r > mu:
            raise ConfigurationError(f"pi_r={self.pi_r} exceeds the mean sensitivity {mu:.4f}")
        if self.pi_p > 1.0 - mu:
            raise ConfigurationError(f"pi_p={self.pi_p} exceeds 1 - mean sensitivity {1 - mu:.4f}")


def calibrate_offset(scale: float, target: float, k: int, n_nodes: int = 96) -> float:
    """Offset ``c`` with ``E[sigmoid(scale * sqrt(k) * cos + c)] = target``.

    ``cos`` is the cosine between two independent uniform directions in R^k,
    whose density is proportional to ``(1 - x^2)^((k-3)/2)``; the expectation
    is evaluated by Gauss-Jacobi quadrature, so the result is deterministic.
    """
    x, w = roots_jacobi(n_nodes, (k - 3) / 2.0, (k - 3) / 2.0)
    w = w / w.sum()
    score = scale * np.sqrt(k) * x
    return float(brentq(lambda c: float(w @ sigmoid(score + c)) - target, -60.0, 60.0, xtol=1e-12))


def _sphere_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``n`` points uniform on the radius-sqrt(k) sphere, stored divided by ``k ** 0.25``.

    Returned rows have norm ``k ** 0.25`` so that ``<a, b>`` of two rows equals
    ``<z_a, z_b> / sqrt(k)`` for the radius-sqrt(k) points.
    """
    z = rng.standard_normal((n, k))
    return z / np.linalg.norm(z, axis=1, keepdims=True) * k ** 0.25


class _Popularity:
    """Zipf-like sampler: the id at popularity rank ``r`` is drawn with weight ``r ** -exponent``."""

    def __init__(self, n: int, exponent: float, rng: np.random.Generator):
        w = np.arange(1, n + 1, dtype=np.float64) ** -exponent
        cdf = np.cumsum(w[rng.permutation(n)])
        self.cdf = cdf / cdf[-1]
        self.cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.searchsorted(self.cdf, rng.random(size), side="right").astype(np.int64)


@dataclass
class _Latents:
    users: np.ndarray
    queries: np.ndarray
    items: np.ndarray
    c_r: float
    c_p: float
    item_pop: _Popularity
    query_pop: _Popularity


def _relevance_logit(lat: _Latents, scale: float, q, i):
    return scale * np.einsum("nk,nk->n", lat.queries[q], lat.items[i]) + lat.c_r


def _preference_logit(lat: _Latents, scale: float, u, i):
    return scale * np.einsum("nk,nk->n", lat.users[u], lat.items[i]) + lat.c_p


def _draw_relevant(lat, cfg, rng, queries: np.ndarray) -> np.ndarray:
    """Rejection-sample one item with relevance logit >= 0 for every entry of ``queries``."""
    out = np.empty(len(queries), dtype=np.int64)
    pending = np.arange(len(queries))
    for _ in range(cfg.max_tries):
        if pending.size == 0:
            return out
        cand = lat.item_pop.draw(rng, pending.size)
        ok = _relevance_logit(lat, cfg.scale, queries[pending], cand) >= 0.0
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    if pending.size:
        raise GenerationError(
            f"no relevant item found for query {int(queries[pending[0]])} after {cfg.max_tries} draws; "
            "lower gamma or raise relevance_rate"
        )
    return out


def _stratified_beta(rng: np.random.Generator, a: float, b: float, n: int) -> np.ndarray:
    """``n`` Beta(a, b) draws, one per equal-probability stratum, in random order.

    Each draw is still exactly Beta-distributed, but the sample mean no longer
    wanders with the seed, so the per-user sensitivity averages to the
    configured mean and the area-conditional click rates hit their targets.
    """
    u = (rng.permutation(n) + rng.random(n)) / n
    return stats.beta.ppf(u, a, b)


def generate_world(cfg: WorldConfig) -> Dataset:
    """Generate ``cfg.n_interactions`` impressions in time order, with oracle columns."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    k = cfg.latent_dim
    lat = _Latents(
        users=_sphere_rows(rng, cfg.n_users, k),
        queries=_sphere_rows(rng, cfg.n_queries, k),
        items=_sphere_rows(rng, cfg.n_items, k),
        c_r=calibrate_offset(cfg.scale, cfg.relevance_rate, k),
        c_p=calibrate_offset(cfg.scale, cfg.preference_rate, k),
        item_pop=_Popularity(cfg.n_items, cfg.item_zipf, rng),
        query_pop=_Popularity(cfg.n_queries, cfg.query_zipf, rng),
    )
    N = cfg.n_interactions
    L = cfg.session_length
    S = -(-N // L)
    sess_len = np.full(S, L, dtype=np.int64)
    sess_len[-1] = N - L * (S - 1)
    sess_user = rng.integers(0, cfg.n_users, size=S)
    sess_query = lat.query_pop.draw(rng, S)
    ex_sess = np.repeat(np.arange(S), sess_len)
    user = sess_user[ex_sess]
    query = sess_query[ex_sess]

    # sensitivity, cached per (user, query) pair
    m_u = np.clip(_stratified_beta(rng, cfg.sens_a, cfg.sens_b, cfg.n_users), 1e-6, 1 - 1e-6)
    pair_keys, pair_inv = np.unique(sess_user * cfg.n_queries + sess_query, return_inverse=True)
    m = m_u[pair_keys // cfg.n_queries]
    c = cfg.sens_concentration
    s_pair = rng.beta(c * m, c * (1.0 - m))
    sens = s_pair[pair_inv][ex_sess]

    # candidate exposure
    exposed = rng.random(N) < cfg.gamma
    item = lat.item_pop.draw(rng, N)
    idx = np.flatnonzero(exposed)
    item[idx] = _draw_relevant(lat, cfg, rng, query[idx])

    # oracle effects
    R = rng.random(N) < sigmoid(_relevance_logit(lat, cfg.scale, query, item))
    pref_logit = _preference_logit(lat, cfg.scale, user, item) + cfg.kappa * (exposed & R)
    P = rng.random(N) < sigmoid(pref_logit)

    # behaviour
    mu = cfg.sensitivity_mean
    u01 = rng.random(N)
    rate_p = cfg.pi_p * (1.0 - sens) / (1.0 - mu)
    rate_r = cfg.pi_r * sens / mu
    y = (P & R) | (P & ~R & (u01 < rate_p)) | (~P & R & (u01 < rate_r))

    # strictly increasing timestamps: random idle gaps between sessions, unit steps inside
    gaps = 1 + rng.integers(0, 600, size=S)
    sess_start = np.cumsum(gaps + np.concatenate([[0], sess_len[:-1]]))
    offsets = np.arange(N) - np.repeat(np.cumsum(sess_len) - sess_len, sess_len)
    timestamp = 1_700_000_000 + sess_start[ex_sess] + offsets

    # histories: the user's clicks from earlier sessions, most recent last
    sess_hist = np.full((S, HISTORY_MAX), -1, dtype=np.int32)
    sess_hist_len = np.zeros(S, dtype=np.int64)
    clicks: dict[int, deque] = {}
    bounds = np.concatenate([[0], np.cumsum(sess_len)])
    for s in range(S):
        hist = clicks.setdefault(int(sess_user[s]), deque(maxlen=HISTORY_MAX))
        sess_hist[s, : len(hist)] = list(hist)
        sess_hist_len[s] = len(hist)
        a, b = bounds[s], bounds[s + 1]
        hist.extend(item[a:b][y[a:b]].tolist())

    P8, R8, y8 = P.astype(np.int8), R.astype(np.int8), y.astype(np.int8)
    area = AREA_TABLE[P8, R8, y8].astype(np.int8)
    if (area < 0).any():  # cannot happen by construction; guards the behaviour law
        raise ContradictionError("generator produced a forbidden (P, R, B) triple")
    return Dataset(
        user_id=user.astype(np.int64),
        query_id=query.astype(np.int64),
        item_id=item,
        hist=sess_hist[ex_sess],
        hist_len=sess_hist_len[ex_sess],
        label=y8,
        timestamp=timestamp.astype(np.int64),
        session_id=ex_sess.astype(np.int64),
        oracle_p=P8,
        oracle_r=R8,
        sensitivity=sens,
        area=area,
    )


@dataclass
class WorldSummary:
    n_examples: int
    n_sessions: int
    positive_rate: float
    area_counts: list[int]
    pr_correlation: float

    def format(self) -> str:
        lines = [f"examples={self.n_examples} sessions={self.n_sessions} positive_rate={self.positive_rate:.4f}",
                 "area  count"]
        lines += [f"{a:>4}  {c}" for a, c in enumerate(self.area_counts)]
        lines.append(f"P*/R* correlation: {self.pr_correlation:+.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def pr_correlation(data: Dataset) -> float:
    """Pearson correlation of the oracle preference and relevance bits (0 if either is constant)."""
    p = data.oracle_p.astype(np.float64)
    r = data.oracle_r.astype(np.float64)
    if p.std() == 0 or r.std() == 0:
        return 0.0
    return float(np.corrcoef(p, r)[0, 1])


def summarize(data: Dataset) -> WorldSummary:
    if not data.has_oracle:
        raise ConfigurationError("summary needs oracle columns")
    counts = np.bincount(data.area.astype(np.int64), minlength=6)
    return WorldSummary(len(data), int(len(np.unique(data.session_id))),
                        float(data.label.mean()) if len(data) else 0.0,
                        [int(c) for c in counts], pr_correlation(data))
