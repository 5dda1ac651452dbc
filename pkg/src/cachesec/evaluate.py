"""Ground-truth evaluation, delivery baselines and Monte Carlo sweeps.

Scheme ids pair a caching rule with a delivery rule, e.g. ``proposed+greedy``.
Caching rules: ``proposed`` (trained with secrecy), ``nosecrecy`` (trained
without the secrecy constraints), ``preference`` (most popular files) and
``uniform``. Delivery rules: ``greedy`` (robust cooperation formation),
``coordinated`` (nearest BS per request), ``full`` (every BS serves every
request) and ``nonrobust`` (greedy that trusts the ER estimate).
"""

from __future__ import annotations

import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .caching import (CacheMatrix, TrainingError, preference_caching, train_cache,
                      training_scenarios, uniform_caching)
from .delivery import (CooperationDecision, TransmitSolution, full_cooperation, greedy_delivery,
                       solve_fixed_cooperation)
from .model import Scenario, SystemConfig, derive_seed, draw_scenario, zipf_popularity
from .rates import er_capacity, lr_rate, worst_case_er_rate

log = logging.getLogger(__name__)

CACHING_SCHEMES = ("proposed", "nosecrecy", "preference", "uniform")
DELIVERY_SCHEMES = ("greedy", "coordinated", "full", "nonrobust")
NUM_ER_SAMPLES = 1000
# slack of the evaluated secrecy-rate comparison
SECRECY_SLACK = 1e-9
CSV_COLUMNS = ("capacity_pct", "scheme", "n_trials", "n_feasible", "avg_power_dBm", "p_out",
               "avg_coop_bs", "master_seed")


@dataclass
class TrialResult:
    scheme: str
    cache_capacity: float  # bits
    feasible: bool
    total_power: float = math.inf  # watts
    per_bs_power: np.ndarray | None = None
    avg_coop_bs: float = math.nan
    worst_case_er_rate: np.ndarray | None = None  # bits/s/Hz per LR
    min_secrecy_rate: float = 0.0
    outage: bool = True
    seed: int | None = None
    decision: CooperationDecision | None = field(default=None, repr=False, compare=False)
    solution: TransmitSolution | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.feasible:
            self.outage = True
        self.min_secrecy_rate = max(0.0, float(self.min_secrecy_rate))


def split_scheme(scheme: str) -> tuple:
    try:
        caching, delivery = scheme.split("+")
    except ValueError:
        raise ValueError(f"scheme {scheme!r} is not of the form caching+delivery") from None
    if caching not in CACHING_SCHEMES:
        raise ValueError(f"unknown caching scheme {caching!r}; choose from {CACHING_SCHEMES}")
    if delivery not in DELIVERY_SCHEMES:
        raise ValueError(f"unknown delivery scheme {delivery!r}; choose from {DELIVERY_SCHEMES}")
    return caching, delivery


# -- ground truth ------------------------------------------------------------------

def secrecy_report(scenario: Scenario, config: SystemConfig, beams, V,
                   n_samples: int = NUM_ER_SAMPLES, seed: int = 0) -> dict:
    """LR rates, worst sampled ER rates and secrecy rates of vectors ``beams``.

    The ER rate of each stream is the larger of the rate at the true channel
    and the sampled worst case over the uncertainty ball around the estimate.
    """
    K = scenario.num_lr
    rng = np.random.default_rng(seed)
    lr = np.array([lr_rate(scenario.lr_channels[k], beams, k, V) for k in range(K)])
    er = np.empty(K)
    for k in range(K):
        true_rate = er_capacity(scenario.er_channel, beams[k], V)
        er[k] = max(true_rate, worst_case_er_rate(scenario.er_estimate, scenario.uncertainty_radius,
                                                  beams[k], V, n_samples=n_samples, rng=rng))
    sec = np.maximum(lr - er, 0.0)
    return {"lr_rate": lr, "er_rate": er, "secrecy_rate": sec}


def _coop_count(decision: CooperationDecision, scenario: Scenario) -> float:
    sets = decision.coop_sets
    return float(np.mean([len(sets[f]) for _, f in scenario.requests]))


def trial_result(scheme: str, scenario: Scenario, config: SystemConfig, decision, solution,
                 evaluated: bool = False, n_samples: int = NUM_ER_SAMPLES,
                 seed: int | None = None) -> TrialResult:
    """Summarize one delivery outcome.

    With ``evaluated`` the outage flag comes from the evaluated secrecy rate
    instead of the optimizer's feasibility verdict.
    """
    res = TrialResult(scheme, config.cache_capacity, solution.feasible, seed=seed,
                      decision=decision, solution=solution)
    if not solution.feasible:
        return res
    rep = secrecy_report(scenario, config, solution.beamformers, solution.an_covariance,
                         n_samples)
    res.total_power = solution.total_power
    res.per_bs_power = solution.per_bs_power
    res.avg_coop_bs = _coop_count(decision, scenario)
    res.worst_case_er_rate = rep["er_rate"]
    res.min_secrecy_rate = float(np.min(rep["secrecy_rate"]))
    target = config.secrecy_rate_target
    res.outage = bool(evaluated and res.min_secrecy_rate < target - SECRECY_SLACK)
    return res


def secrecy_outage_probability(trials) -> float:
    trials = list(trials)
    if not trials:
        raise ValueError("no trials")
    return sum(bool(t.outage) for t in trials) / len(trials)


# -- delivery baselines ------------------------------------------------------------

def coordinated_assignment(scenario: Scenario, config: SystemConfig, cache):
    """Nearest-BS assignment with residual backhaul, in LR order.

    Returns an (F, M) 0/1 matrix, or ``None`` when some request finds no
    BS. A file requested twice reuses its first assignment.
    """
    c = np.zeros((config.num_files, scenario.num_bs)) if cache is None else \
        np.asarray(getattr(cache, "c", cache), dtype=float)
    residual = np.array(scenario.backhaul_caps, dtype=float)
    slack = 1e-9 * config.subfile_rate
    q = np.zeros((config.num_files, scenario.num_bs), dtype=int)
    for k, f in scenario.requests:
        if q[f].any():
            continue
        for m in np.argsort(scenario.lr_distances[k], kind="stable"):
            need = (1.0 - c[f, m]) * config.subfile_rate
            if c[f, m] >= 1.0 or residual[m] + slack >= need:
                q[f, m] = 1
                residual[m] -= need
                break
        else:
            return None
    return q


def coordinated_beamforming_delivery(scenario: Scenario, config: SystemConfig, cache,
                                     mode: str = "robust", backend: str = "auto",
                                     scheme: str = "coordinated", seed=None) -> TrialResult:
    q = coordinated_assignment(scenario, config, cache)
    if q is None:
        q = np.zeros((config.num_files, scenario.num_bs), dtype=int)
        sol = TransmitSolution("infeasible", diagnostics={"outage": "no BS can serve a request"})
    else:
        sol = solve_fixed_cooperation(scenario, config, q, mode, backend)
    decision = CooperationDecision.from_q(q, cache, scenario, config)
    return trial_result(scheme, scenario, config, decision, sol, seed=seed)


def full_cooperation_delivery(scenario: Scenario, config: SystemConfig, cache,
                              mode: str = "robust", backend: str = "auto",
                              scheme: str = "full", seed=None) -> TrialResult:
    q = full_cooperation(scenario, config)
    sol = solve_fixed_cooperation(scenario, config, q, mode, backend)
    decision = CooperationDecision.from_q(q, cache, scenario, config)
    return trial_result(scheme, scenario, config, decision, sol, seed=seed)


def nonrobust_delivery(scenario: Scenario, config: SystemConfig, cache, backend: str = "auto",
                       scheme: str = "nonrobust", seed=None) -> TrialResult:
    """Greedy delivery that takes the ER estimate as exact, judged on the truth."""
    decision, sol = greedy_delivery(scenario, config, cache, "nonrobust", backend)
    return trial_result(scheme, scenario, config, decision, sol, evaluated=True, seed=seed)


def greedy_trial(scenario: Scenario, config: SystemConfig, cache, mode: str = "robust",
                 backend: str = "auto", scheme: str = "greedy", seed=None) -> TrialResult:
    decision, sol = greedy_delivery(scenario, config, cache, mode, backend)
    return trial_result(scheme, scenario, config, decision, sol, seed=seed)


def run_delivery(delivery: str, scenario: Scenario, config: SystemConfig, cache,
                 scheme: str | None = None, seed=None, backend: str = "auto") -> TrialResult:
    scheme = delivery if scheme is None else scheme
    if delivery == "greedy":
        return greedy_trial(scenario, config, cache, "robust", backend, scheme, seed)
    if delivery == "coordinated":
        return coordinated_beamforming_delivery(scenario, config, cache, "robust", backend,
                                                scheme, seed)
    if delivery == "full":
        return full_cooperation_delivery(scenario, config, cache, "robust", backend, scheme, seed)
    if delivery == "nonrobust":
        return nonrobust_delivery(scenario, config, cache, backend, scheme, seed)
    raise ValueError(f"unknown delivery scheme {delivery!r}")


# -- caching -----------------------------------------------------------------------

def build_cache(caching: str, config: SystemConfig, scenarios=None,
                power_units=None) -> CacheMatrix:
    """Cache placement of one caching rule; trained rules need ``scenarios``."""
    if caching == "preference":
        return preference_caching(zipf_popularity(config.num_files, config.zipf_exponent), config)
    if caching == "uniform":
        return uniform_caching(config)
    if caching in ("proposed", "nosecrecy"):
        if scenarios is None:
            raise ValueError(f"{caching} caching needs training scenarios")
        return train_cache(scenarios, config, include_secrecy=caching == "proposed",
                           power_units=power_units)
    raise ValueError(f"unknown caching scheme {caching!r}")


# -- sweeps ------------------------------------------------------------------------

@dataclass
class SweepRow:
    capacity_pct: float
    scheme: str
    n_trials: int
    n_feasible: int
    avg_power_dBm: float
    p_out: float
    avg_coop_bs: float
    master_seed: int
    trials: list = field(default_factory=list, repr=False, compare=False)
    cache: CacheMatrix | None = field(default=None, repr=False, compare=False)
    untrained: str = ""

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def power_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1e3) if watts > 0 else -math.inf


def aggregate(trials, capacity_pct: float, scheme: str, master_seed: int) -> SweepRow:
    """Power averages over feasible trials; outage over all trials."""
    ok = [t for t in trials if t.feasible]
    power = float(np.mean([t.total_power for t in ok])) if ok else math.nan
    coop = float(np.mean([t.avg_coop_bs for t in ok])) if ok else math.nan
    dbm = power_dbm(power) if ok else math.nan
    return SweepRow(capacity_pct, scheme, len(trials), len(ok), dbm,
                    secrecy_outage_probability(trials), coop, master_seed, list(trials))


def capacity_bits(config: SystemConfig, pct: float) -> float:
    return pct / 100.0 * config.library_size


def capacity_pct(config: SystemConfig) -> float:
    return 100.0 * config.cache_capacity / config.library_size


def _label(scheme: str, param: str | None, value) -> str:
    return scheme if param is None else f"{scheme}@{param}={value:g}"


def run_sweep(config: SystemConfig, schemes, param: str | None, values, n_trials: int,
              master_seed: int, on_trial=None, on_row=None, num_training=None) -> list:
    """Rows for every (grid value, scheme) pair.

    ``param`` names the config field set to each grid value (``None`` runs
    the config as is). Trial scenarios depend only on the master seed and
    trial index, so every scheme and grid point sees the same draws once
    the swept field leaves the scenario distribution unchanged. Training
    scenarios are shared across grid points in the same way.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    schemes = list(schemes)
    parsed = [split_scheme(s) for s in schemes]
    values = [None] if param is None else list(values)
    rows = []
    train_sets = {}
    for gi, value in enumerate(values):
        cfg = config if param is None else config.replace(**{param: value})
        caches, errors = {}, {}
        need_training = {c for c, _ in parsed if c in ("proposed", "nosecrecy")}
        train = units = None
        if need_training:
            # one training seed for the whole grid keeps the sets comparable;
            # the cache size does not enter scenario generation
            key = cfg.replace(cache_capacity=0.0).digest()
            try:
                if key not in train_sets:
                    train_sets[key] = training_scenarios(cfg, derive_seed(master_seed, "train"),
                                                         num_training, with_power=True)
                train, units = train_sets[key]
            except TrainingError as exc:
                for c in need_training:
                    errors[c] = str(exc)
        for caching, _ in parsed:
            if caching in caches or caching in errors:
                continue
            try:
                caches[caching] = build_cache(caching, cfg, train, units)
            except TrainingError as exc:
                errors[caching] = str(exc)
        scenarios = [draw_scenario(cfg, derive_seed(master_seed, "trial", t))
                     for t in range(n_trials)]
        # delivery outcomes depend on the cache only through its contents
        outcomes = {}
        for scheme, (caching, delivery) in zip(schemes, parsed):
            label = _label(scheme, param if param != "cache_capacity" else None, value)
            pct = capacity_pct(cfg)
            if caching in errors:
                log.warning("%s untrained at %s: %s", scheme, value, errors[caching])
                row = SweepRow(pct, label, 0, 0, math.nan, math.nan, math.nan, master_seed,
                               untrained=errors[caching])
            else:
                cache = caches[caching]
                trials = []
                for t, sc in enumerate(scenarios):
                    key = (delivery, cache.c.tobytes(), t)
                    if key in outcomes:
                        res = dataclasses.replace(outcomes[key], scheme=label)
                    else:
                        res = run_delivery(delivery, sc, cfg, cache, label,
                                           seed=derive_seed(master_seed, "trial", t))
                        outcomes[key] = res
                    trials.append(res)
                    if on_trial is not None:
                        on_trial(gi, label, t, res)
                row = aggregate(trials, pct, label, master_seed)
                row.cache = cache
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def run_cache_sweep(config: SystemConfig, schemes, capacity_grid, n_trials: int,
                    master_seed: int, **kw) -> list:
    """Sweep over cache capacities given in percent of the library size."""
    if isinstance(schemes, str):
        schemes = [schemes]
    bits = [capacity_bits(config, p) for p in capacity_grid]
    return run_sweep(config, schemes, "cache_capacity", bits, n_trials, master_seed, **kw)


def run_csi_error_sweep(config: SystemConfig, schemes, error_grid, n_trials: int,
                        master_seed: int, **kw) -> list:
    return run_sweep(config, schemes, "normalized_csi_error", error_grid, n_trials,
                     master_seed, **kw)


def run_antenna_sweep(config: SystemConfig, schemes, antenna_grid, n_trials: int,
                      master_seed: int, **kw) -> list:
    return run_sweep(config, schemes, "antennas_per_bs", antenna_grid, n_trials,
                     master_seed, **kw)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def rows_to_csv(rows) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        out.write(",".join(_fmt(v) for v in row.as_tuple()) + "\n")
    return out.getvalue()
