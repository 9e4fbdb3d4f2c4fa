"""Compare the compiled per-cell counting kernel with the numpy fallback.

Times the raw kernel on synthetic occupancy arrays and a full stochastic
run on a synthetic city with both backends.  Run from the repo root:

    python3 scripts/benchmark_kernel.py
"""

import argparse
import time

import numpy as np


def bench_kernel(kernel, cells, comp, quar, n_cells, repeats):
    # warm up once so import/JIT noise stays out of the timing
    kernel.cell_counts(cells, comp, quar, n_cells)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernel.cell_counts(cells, comp, quar, n_cells)
    return (time.perf_counter() - t0) / repeats


def bench_full_run(n_users, days):
    from epimob.engine import compile_mobility, run_simulation
    from epimob.mobility import SyntheticCitySpec, TimeRange, build_trajectory_set, synthesize_raw
    from epimob.poirisk import EpidemicParams, empty_risk_field

    start = 1341068400
    hor = TimeRange(start, start + days * 86400)
    raws = synthesize_raw(SyntheticCitySpec(n_users=n_users, rng_seed=3), hor)
    cm = compile_mobility(build_trajectory_set(raws, hor))
    params = EpidemicParams(rng_seed=1)
    field = empty_risk_field(0.302, 9 * 3600)
    t0 = time.perf_counter()
    run = run_simulation(cm, field, params, run_seed=5)
    return time.perf_counter() - t0, int(run.total_infections)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=200_000)
    ap.add_argument("--cells", type=int, default=4000)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--city-users", type=int, default=2000)
    ap.add_argument("--city-days", type=int, default=14)
    args = ap.parse_args()

    from epimob.engine import _step_py

    try:
        from epimob.engine import _kernel as compiled
    except ImportError:
        compiled = None

    rng = np.random.default_rng(0)
    cells = rng.integers(0, args.cells, size=args.users).astype(np.int32)
    comp = rng.integers(0, 4, size=args.users).astype(np.int8)
    quar = (rng.random(args.users) < 0.01).astype(np.uint8)

    print(f"kernel microbenchmark: {args.users} users, {args.cells} cells, "
          f"{args.repeats} repeats")
    t_py = bench_kernel(_step_py, cells, comp, quar, args.cells, args.repeats)
    print(f"  numpy fallback   {t_py * 1e3:8.3f} ms/call")
    if compiled is None:
        print("  compiled kernel  not built (pip install -e . rebuilds it)")
    else:
        a = compiled.cell_counts(cells, comp, quar, args.cells)
        b = _step_py.cell_counts(cells, comp, quar, args.cells)
        assert np.array_equal(a, b), "backends disagree"
        t_cy = bench_kernel(compiled, cells, comp, quar, args.cells, args.repeats)
        print(f"  compiled kernel  {t_cy * 1e3:8.3f} ms/call  "
              f"({t_py / t_cy:.1f}x vs fallback)")

    print(f"full run: {args.city_users} users, {args.city_days} days, 300 s cadence")
    import epimob.engine.core as core

    backends = [("fallback", _step_py)]
    if compiled is not None:
        backends.insert(0, ("compiled", compiled))
    for name, kernel in backends:
        core._kernel = kernel
        dt, total = bench_full_run(args.city_users, args.city_days)
        print(f"  {name:9s} {dt:6.2f} s  ({total} infections)")


if __name__ == "__main__":
    main()
