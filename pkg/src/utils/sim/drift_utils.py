"""Drift scenarios: schedule builders and drop/recovery measurement."""

import logging
from dataclasses import replace
from typing import Optional, Sequence

from utils.data.data_utils import DriftEvent
from utils.errors import ConfigError
from utils.report.report_utils import drift_metrics
from utils.sim.sim_utils import RunArtifacts, SimConfig, run

logger = logging.getLogger(__name__)


def _targets(clients: Optional[Sequence[int]], fraction: float) -> dict:
    if clients is not None:
        return {"affected_clients": tuple(clients)}
    return {"fraction": fraction}


def subset_switch_event(
    round_index: int,
    source: Sequence[int],
    target: Sequence[int],
    fraction: float = 1.0,
    clients: Optional[Sequence[int]] = None,
) -> DriftEvent:
    """Clients trained on source classes switch to target classes (e.g. 0-4 then 5-9)."""
    return DriftEvent(
        round=round_index,
        kind="label-subset-switch",
        parameters={"source": list(source), "target": list(target)},
        **_targets(clients, fraction),
    )


def label_permutation_event(
    round_index: int,
    permutation: Sequence[int],
    fraction: float = 1.0,
    clients: Optional[Sequence[int]] = None,
) -> DriftEvent:
    return DriftEvent(
        round=round_index,
        kind="label-permutation",
        parameters={"permutation": list(permutation)},
        **_targets(clients, fraction),
    )


def feature_shift_event(
    round_index: int,
    magnitude: float,
    fraction: float = 1.0,
    clients: Optional[Sequence[int]] = None,
) -> DriftEvent:
    return DriftEvent(
        round=round_index,
        kind="feature-shift",
        parameters={"shift": float(magnitude)},
        **_targets(clients, fraction),
    )


def drift_scenario(config: SimConfig, drift_round: Optional[int] = None) -> RunArtifacts:
    """
    Run with a drift schedule and measure the accuracy drop and recovery.

    The measured round defaults to the first scheduled drift event. The
    returned artifacts carry the DriftMetrics in .drift.
    """
    if not config.drift:
        raise ConfigError("drift_scenario needs a non-empty drift schedule")
    measured = drift_round if drift_round is not None else min(event.round for event in config.drift)
    if measured > config.rounds:
        raise ConfigError(f"drift round {measured} is after the last round {config.rounds}")

    artifacts = run(config)
    metrics = drift_metrics(artifacts.accuracy_series(), measured, config.drift_tolerance_pp)
    logger.info(
        "%s drift at round %d: drop %.2f pp, recovery %s",
        config.method,
        measured,
        metrics.drop_pp,
        "none" if metrics.recovery_rounds is None else f"{metrics.recovery_rounds} rounds",
    )
    return replace(artifacts, drift=metrics)
