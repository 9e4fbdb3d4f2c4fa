from .core import (  # noqa: F401
    KERNEL_NAME,
    CompiledMobility,
    EnsembleResult,
    SimulationRun,
    compile_mobility,
    export_daily_csv,
    export_events_jsonl,
    init_compartments,
    run_ensemble,
    run_fractional,
    run_simulation,
    sample_discrete_increment,
)
