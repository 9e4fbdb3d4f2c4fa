"""Trajectory-based stochastic SEIR engine.

Each run alternates a contagion stage (within-cell S->E, E->I, I->R
transitions from start-of-step counts, one explicit-Euler step per tick)
with a movement stage (users relocate along their trajectories).  Day
rates are converted to per-tick rates by step/86400.  Fractional
increments are discretized as floor(x) + Bernoulli(frac(x)); transitioning
users are drawn uniformly without replacement.  Screening detects
infectious users in plan cells and quarantines them (removed from cell
occupancy, I->R clock keeps running off-grid).

The per-timestep counting kernel is compiled (Cython) when available and
falls back to numpy; both follow the identical random-draw discipline, so
results are bit-identical across kernels and worker counts.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..mobility import TrajectorySet
from ..poirisk import EpidemicParams, RiskField

if os.environ.get("EPIMOB_FORCE_NUMPY"):
    from . import _step_py as _kernel
else:
    try:
        from . import _kernel  # type: ignore
    except ImportError:
        from . import _step_py as _kernel

KERNEL_NAME = _kernel.BACKEND_NAME

S, E, I, R = 0, 1, 2, 3


def sample_discrete_increment(x: float, rng) -> int:
    """floor(x) plus a Bernoulli draw on the fractional part; mean = x."""
    if x < 0:
        raise InvalidInputError("increment must be non-negative")
    k = int(x)
    frac = x - k
    if rng.random() < frac:
        k += 1
    return k


@dataclass
class CompiledMobility:
    """Trajectory set flattened to dense arrays for the engine."""

    uids: list[str]
    cell_vocab: np.ndarray  # int64 CellIds, index = dense cell code
    pos: np.ndarray  # (T, U) int32 dense cell codes
    slot_of_tick: np.ndarray  # (T,) int16 hour-of-week
    day_bounds: list[tuple[int, int, int]]  # (day_key, tick0, tick1)
    step: int
    start: int
    static: bool


def compile_mobility(ts: TrajectorySet, tz_offset: int | None = None) -> CompiledMobility:
    uids = ts.uids()
    mat = np.stack([ts.trajectories[u].cells for u in uids], axis=1)  # (T, U)
    vocab, inv = np.unique(mat, return_inverse=True)
    pos = np.ascontiguousarray(inv.reshape(mat.shape).astype(np.int32))
    tz = ts.tz_offset if tz_offset is None else tz_offset
    ticks = np.arange(ts.n_ticks, dtype=np.int64)
    slot = (((ts.horizon.start + ticks * ts.step + tz) // 3600) % 168).astype(np.int16)
    static = bool((pos == pos[0]).all())
    return CompiledMobility(
        uids, vocab, pos, slot, ts.day_bounds(), ts.step, ts.horizon.start, static
    )


@dataclass
class SimulationRun:
    run_index: int
    rng_seed: int
    event_uid: np.ndarray  # user indices of S->E events, in time order
    event_t: np.ndarray  # UTC seconds
    event_cell: np.ndarray  # CellId
    detection_uid: np.ndarray
    detection_t: np.ndarray
    detection_cell: np.ndarray
    day_keys: np.ndarray
    daily: np.ndarray  # (D, 6): S, E, I, R (non-quarantined), quarantined, cum_inf
    initial_infected: np.ndarray  # user indices

    @property
    def total_infections(self) -> int:
        return int(len(self.event_uid))

    def daily_cum_infections(self) -> np.ndarray:
        return self.daily[:, 5]


def _select(members: np.ndarray, k: int, rng) -> np.ndarray:
    """k distinct uniform picks via partial Fisher-Yates over sorted members."""
    n = len(members)
    if k >= n:
        return members
    arr = members.copy()
    for j in range(k):
        m = int(rng.integers(j, n))
        arr[j], arr[m] = arr[m], arr[j]
    return arr[:k]


def _discretize(lam: np.ndarray, cap: np.ndarray, rng) -> np.ndarray:
    base = np.floor(lam)
    k = base.astype(np.int64)
    if len(lam):
        k = k + (rng.random(len(lam)) < (lam - base))
    return np.minimum(k, cap)


def init_compartments(n_users: int, i0: int, rng) -> np.ndarray:
    """All susceptible except i0 uniformly sampled initially infected."""
    if i0 < 1:
        raise InvalidInputError("i0 must be >= 1")
    if i0 > n_users:
        raise InvalidInputError("i0 exceeds the population size")
    comp = np.zeros(n_users, dtype=np.int8)
    comp[rng.choice(n_users, size=i0, replace=False)] = I
    return comp


def _screen_prob_arrays(plan, vocab: np.ndarray):
    """Per screening entry: (tick0, tick1, float[C] per-cell probability)."""
    out = []
    if plan is None or plan.empty:
        return out
    lookup = {int(c): i for i, c in enumerate(vocab.tolist())}
    for entry in plan.entries:
        probs = np.zeros(len(vocab), dtype=np.float64)
        hit = False
        for cell, p in entry.probs.items():
            i = lookup.get(cell)
            if i is not None:
                probs[i] = p
                hit = True
        if hit:
            out.append((entry.tick0, entry.tick1, probs))
    return out


def run_simulation(
    cm: CompiledMobility,
    field: RiskField,
    params: EpidemicParams,
    plan=None,
    run_seed: int | np.random.SeedSequence = 0,
    run_index: int = 0,
    check_conservation: bool = False,
) -> SimulationRun:
    if params.step != cm.step:
        raise InvalidInputError("params.step does not match the trajectory cadence")
    T, U = cm.pos.shape
    C = len(cm.cell_vocab)
    dt_days = cm.step / 86400.0
    beta_hat = field.beta_matrix(cm.cell_vocab.tolist()) * dt_days  # (C, 168)
    sigma_hat = params.sigma * dt_days
    gamma_hat = params.gamma * dt_days

    rng = np.random.Generator(np.random.Philox(run_seed))
    comp = init_compartments(U, params.i0, rng)
    quarantined = np.zeros(U, dtype=bool)
    initial_infected = np.where(comp == I)[0].copy()

    screen_entries = _screen_prob_arrays(plan, cm.cell_vocab)

    ev_uid: list[int] = []
    ev_t: list[int] = []
    ev_cell: list[int] = []
    det_uid: list[int] = []
    det_t: list[int] = []
    det_cell: list[int] = []

    day_ends = {i1 - 1: dk for dk, _, i1 in cm.day_bounds}
    day_keys: list[int] = []
    daily: list[list[int]] = []

    q_u8 = quarantined.view(np.uint8)
    for t in range(T):
        cells_t = cm.pos[t]
        counts = _kernel.cell_counts(cells_t, comp, q_u8, C)
        cs, ce_, ci_, cr_ = counts[S], counts[E], counts[I], counts[R]

        bcol = beta_hat[:, cm.slot_of_tick[t]]
        cells_E = np.where((cs > 0) & (ci_ > 0))[0]
        cells_I = np.where(ce_ > 0)[0]
        cells_R = np.where(ci_ > 0)[0]
        n_cells = cs + ce_ + ci_ + cr_

        lam_E = bcol[cells_E] * cs[cells_E] * ci_[cells_E] / n_cells[cells_E]
        lam_I = sigma_hat * ce_[cells_I]
        lam_R = gamma_hat * ci_[cells_R]
        k_E = _discretize(lam_E, cs[cells_E], rng)
        k_I = _discretize(lam_I, ce_[cells_I], rng)
        k_R = _discretize(lam_R, ci_[cells_R], rng)
        # quarantined infectious keep their recovery clock off-grid
        nq_I = int(np.count_nonzero(quarantined & (comp == I)))
        k_Q = 0
        if nq_I:
            k_Q = min(sample_discrete_increment(gamma_hat * nq_I, rng), nq_I)

        t_utc = cm.start + t * cm.step
        active = ~quarantined
        for c, k in zip(cells_E.tolist(), k_E.tolist()):
            if not k:
                continue
            members = np.where((cells_t == c) & (comp == S) & active)[0]
            chosen = _select(members, k, rng)
            comp[chosen] = E
            cell_id = int(cm.cell_vocab[c])
            for u in chosen.tolist():
                ev_uid.append(u)
                ev_t.append(t_utc)
                ev_cell.append(cell_id)
        for c, k in zip(cells_I.tolist(), k_I.tolist()):
            if not k:
                continue
            members = np.where((cells_t == c) & (comp == E) & active)[0]
            comp[_select(members, k, rng)] = I
        for c, k in zip(cells_R.tolist(), k_R.tolist()):
            if not k:
                continue
            members = np.where((cells_t == c) & (comp == I) & active)[0]
            comp[_select(members, k, rng)] = R
        if k_Q:
            members = np.where(quarantined & (comp == I))[0]
            comp[_select(members, k_Q, rng)] = R

        if check_conservation:
            # counts are start-of-step occupancy, before this step's detections
            nq = int(np.count_nonzero(quarantined))
            if int(counts.sum()) + nq != U:
                raise AssertionError(f"conservation violated at tick {t}")
            if int(np.bincount(comp, minlength=4).sum()) != U:
                raise AssertionError(f"compartment partition violated at tick {t}")

        # screening after contagion: a just-exposed user is E and passes
        for tick0, tick1, probs in screen_entries:
            if not (tick0 <= t < tick1):
                continue
            cand = np.where((comp == I) & ~quarantined & (probs[cells_t] > 0))[0]
            if not len(cand):
                continue
            detected = cand[rng.random(len(cand)) < probs[cells_t[cand]]]
            if len(detected):
                quarantined[detected] = True
                q_u8 = quarantined.view(np.uint8)
                for u in detected.tolist():
                    det_uid.append(u)
                    det_t.append(t_utc)
                    det_cell.append(int(cm.cell_vocab[cells_t[u]]))

        if t in day_ends:
            act = ~quarantined
            day_keys.append(day_ends[t])
            daily.append(
                [
                    int(np.count_nonzero(act & (comp == S))),
                    int(np.count_nonzero(act & (comp == E))),
                    int(np.count_nonzero(act & (comp == I))),
                    int(np.count_nonzero(act & (comp == R))),
                    int(np.count_nonzero(quarantined)),
                    len(ev_uid),
                ]
            )

    seed_int = run_seed if isinstance(run_seed, (int, np.integer)) else -1
    return SimulationRun(
        run_index=run_index,
        rng_seed=int(seed_int),
        event_uid=np.array(ev_uid, dtype=np.int64),
        event_t=np.array(ev_t, dtype=np.int64),
        event_cell=np.array(ev_cell, dtype=np.int64),
        detection_uid=np.array(det_uid, dtype=np.int64),
        detection_t=np.array(det_t, dtype=np.int64),
        detection_cell=np.array(det_cell, dtype=np.int64),
        day_keys=np.array(day_keys, dtype=np.int64),
        daily=np.array(daily, dtype=np.int64).reshape(len(daily), 6),
        initial_infected=initial_infected,
    )


def run_fractional(
    cm: CompiledMobility, field: RiskField, params: EpidemicParams,
    initial_infected: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic mode: increments stay real-valued (no sampling).

    Only defined for static mobility (users never change cells); exists to
    check the stochastic engine against explicit-Euler SEIR integration.
    Returns (day_keys, daily) with daily columns S, E, I, R (floats, global
    sums at each day end).
    """
    if not cm.static:
        raise InvalidInputError("fractional mode requires static trajectories")
    T, U = cm.pos.shape
    C = len(cm.cell_vocab)
    dt_days = cm.step / 86400.0
    beta_hat = field.beta_matrix(cm.cell_vocab.tolist()) * dt_days
    sigma_hat = params.sigma * dt_days
    gamma_hat = params.gamma * dt_days

    n_cell = np.bincount(cm.pos[0], minlength=C).astype(np.float64)
    i_cell = np.zeros(C)
    if initial_infected is None:
        rng = np.random.Generator(np.random.Philox(params.rng_seed))
        initial_infected = rng.choice(U, size=params.i0, replace=False)
    np.add.at(i_cell, cm.pos[0][initial_infected], 1.0)
    s_cell = n_cell - i_cell
    e_cell = np.zeros(C)
    r_cell = np.zeros(C)

    day_ends = {i1 - 1: dk for dk, _, i1 in cm.day_bounds}
    day_keys, daily = [], []
    occupied = n_cell > 0
    for t in range(T):
        b = beta_hat[:, cm.slot_of_tick[t]]
        d_e = np.zeros(C)
        d_e[occupied] = b[occupied] * s_cell[occupied] * i_cell[occupied] / n_cell[occupied]
        d_i = sigma_hat * e_cell
        d_r = gamma_hat * i_cell
        s_cell = s_cell - d_e
        e_cell = e_cell + d_e - d_i
        i_cell = i_cell + d_i - d_r
        r_cell = r_cell + d_r
        if t in day_ends:
            day_keys.append(day_ends[t])
            daily.append([s_cell.sum(), e_cell.sum(), i_cell.sum(), r_cell.sum()])
    return np.array(day_keys, dtype=np.int64), np.array(daily, dtype=np.float64)


@dataclass
class EnsembleResult:
    fingerprint: str
    runs: list[SimulationRun]
    kept: list[int]  # indices into runs, inside the 95% interval of totals
    day_keys: np.ndarray
    mean: np.ndarray  # per-day mean cumulative infections over kept runs
    ci_low: np.ndarray
    ci_high: np.ndarray
    population: int
    uids: list[str] = field(default_factory=list)
    cell_vocab: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.runs)

    def kept_runs(self) -> list[SimulationRun]:
        return [self.runs[i] for i in self.kept]


def run_ensemble(
    ts_or_cm,
    field: RiskField,
    params: EpidemicParams,
    plan=None,
    m: int = 100,
    n_workers: int = 1,
    fingerprint: str = "",
    check_conservation: bool = False,
    meta: dict | None = None,
) -> EnsembleResult:
    """m seeded repetitions with empirical 95% CI filtering of totals."""
    if m < 2:
        raise InvalidInputError("ensemble size m must be >= 2")
    cm = ts_or_cm if isinstance(ts_or_cm, CompiledMobility) else compile_mobility(ts_or_cm)
    seeds = np.random.SeedSequence(params.rng_seed).spawn(m)

    def one(i: int) -> SimulationRun:
        return run_simulation(
            cm, field, params, plan, run_seed=seeds[i], run_index=i,
            check_conservation=check_conservation,
        )

    if n_workers <= 1:
        runs = [one(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(one, range(m)))

    totals = np.array([r.total_infections for r in runs], dtype=np.float64)
    lo, hi = np.percentile(totals, [2.5, 97.5])
    kept = [i for i, v in enumerate(totals) if lo <= v <= hi]
    if not kept:
        # tiny m with spread-out totals can leave the interior band empty
        kept = list(range(m))
    cum = np.stack([runs[i].daily_cum_infections() for i in kept]).astype(np.float64)
    return EnsembleResult(
        fingerprint=fingerprint,
        runs=runs,
        kept=kept,
        day_keys=runs[0].day_keys.copy(),
        mean=cum.mean(axis=0),
        ci_low=np.percentile(cum, 2.5, axis=0),
        ci_high=np.percentile(cum, 97.5, axis=0),
        population=cm.pos.shape[1],
        uids=cm.uids,
        cell_vocab=cm.cell_vocab,
        meta=meta or {},
    )


def export_events_jsonl(er: EnsembleResult, fobj) -> None:
    from ..grid import cell_to_hex

    for run in er.runs:
        for u, t, c in zip(
            run.event_uid.tolist(), run.event_t.tolist(), run.event_cell.tolist()
        ):
            uid = er.uids[u] if er.uids else str(u)
            fobj.write(
                f'{{"run": {run.run_index}, "uid": "{uid}", "t": {t}, '
                f'"cell": "{cell_to_hex(c)}"}}\n'
            )


def export_daily_csv(er: EnsembleResult, fobj) -> None:
    fobj.write("run,day,S,E,I,R,cum_infections\n")
    for run in er.runs:
        for dk, row in zip(run.day_keys.tolist(), run.daily.tolist()):
            fobj.write(
                f"{run.run_index},{dk},{row[0]},{row[1]},{row[2]},{row[3]},{row[5]}\n"
            )
