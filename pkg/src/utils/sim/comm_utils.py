"""Communication accounting in model-units and bytes per link."""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from utils.errors import ConfigError

LINKS = ("client_edge", "edge_cloud", "client_cloud")
EVENTS = ("upload", "download")


@dataclass
class CommLedger:
    """
    Cumulative transfers keyed by (link, event).

    One model-unit is one serialized model crossing a link once;
    bytes = units * model_bytes for a fixed model spec.
    """

    units: Dict[Tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    bytes: Dict[Tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    per_round: Dict[int, Dict[str, int]] = field(default_factory=dict)

    def total_units(self, link: str, event: Optional[str] = None) -> int:
        events = EVENTS if event is None else (event,)
        return sum(self.units[(link, e)] for e in events)

    def total_bytes(self, link: str, event: Optional[str] = None) -> int:
        events = EVENTS if event is None else (event,)
        return sum(self.bytes[(link, e)] for e in events)

    def snapshot(self) -> Dict[str, int]:
        """Cumulative bytes per link."""
        return {link: self.total_bytes(link) for link in LINKS}

    def to_json(self) -> dict:
        return {
            f"{link}_{event}": {"units": self.units[(link, event)], "bytes": self.bytes[(link, event)]}
            for link in LINKS
            for event in EVENTS
        }


def account_comm(
    ledger: CommLedger,
    event: str,
    link: str,
    model_bytes: int,
    round_index: Optional[int] = None,
) -> CommLedger:
    """Add one model transfer of model_bytes to the named link."""
    if event not in EVENTS:
        raise ConfigError(f"comm event must be one of {EVENTS}, got {event!r}")
    if link not in LINKS:
        raise ConfigError(f"comm link must be one of {LINKS}, got {link!r}")
    if model_bytes <= 0:
        raise ConfigError(f"model_bytes must be > 0, got {model_bytes}")
    ledger.units[(link, event)] += 1
    ledger.bytes[(link, event)] += int(model_bytes)
    if round_index is not None:
        per_link = ledger.per_round.setdefault(round_index, {})
        per_link[link] = per_link.get(link, 0) + int(model_bytes)
    return ledger


def closed_form_units(clients: int, rounds: int, every: Optional[int]) -> int:
    """clients * rounds * aggregation frequency, in model-units per direction."""
    if every is None:
        return 0
    return clients * (rounds // every)
