from .runner import (MODES, AttestationSummary, CorrectnessError, RunOutcome, RunReport,
                     attestation_trials, materialize, report_storage, run, run_modes)
from .sim import SimConfig, SimResult, Simulator
from .workload import (Dataset, Op, WorkloadKind, WorkloadSpec, check_queries, generate_dataset,
                       session_ops, tpcc_row_counts)

__all__ = [n for n in dir() if not n.startswith("_")]
