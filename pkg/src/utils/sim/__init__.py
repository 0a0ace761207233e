"""Simulation driver, baselines, drift scenarios and communication accounting."""

from utils.sim.sim_utils import SimConfig, AblationConfig, RunArtifacts, run, run_baseline, sample_participants
from utils.sim.comm_utils import CommLedger, account_comm
from utils.sim.drift_utils import drift_scenario

__all__ = [
    "SimConfig",
    "AblationConfig",
    "RunArtifacts",
    "run",
    "run_baseline",
    "sample_participants",
    "CommLedger",
    "account_comm",
    "drift_scenario",
]
