"""Simulation-model contract and entity placement.

A model is a set of entities spread over L logical processes.  The engine
only ever talks to the three callbacks (init / handle_event / terminate)
plus a state-copy hook; everything an event handler does to other entities
must flow through the ``emit`` capability it is given, or rollback cannot
undo it.
"""

from __future__ import annotations

import copy
from typing import Any, Callable, Optional

__all__ = ["EntityMap", "ModelCallbacks", "EmitFn"]

# emit(destination_entity, payload, timestamp)
EmitFn = Callable[[int, Any, float], None]


class EntityMap:
    """Total, stable entity -> LP mapping.  Block (contiguous) partition:
    entity e lives on LP floor(e * L / E), balanced within one entity."""

    def __init__(self, num_entities: int, num_lps: int) -> None:
        if num_lps < 1:
            raise ValueError(f"need at least one LP, got {num_lps}")
        if num_entities < 1:
            raise ValueError(f"need at least one entity, got {num_entities}")
        self.num_entities = num_entities
        self.num_lps = num_lps

    def route(self, entity: int) -> int:
        if not 0 <= entity < self.num_entities:
            raise ValueError(
                f"entity {entity} out of range [0, {self.num_entities})"
            )
        return entity * self.num_lps // self.num_entities

    def entities_of(self, lp: int) -> range:
        """All entities hosted by ``lp`` (a contiguous block)."""
        if not 0 <= lp < self.num_lps:
            raise ValueError(f"LP {lp} out of range [0, {self.num_lps})")
        e, l = self.num_entities, self.num_lps
        return range(-(-lp * e // l), -(-(lp + 1) * e // l))


class ModelCallbacks:
    """Base class for simulation models.

    ``handle_event`` must be a pure function of (state, payload, timestamp)
    with any randomness drawn from streams stored inside the state: the
    engine snapshots state before each event and may restore it, so hidden
    mutable externals would survive rollback and corrupt the run.
    """

    entity_map: EntityMap

    def init(self, lp: int) -> Any:
        """Build the model state for one LP (its hosted entities)."""
        raise NotImplementedError

    def handle_event(self, state: Any, payload: Any, timestamp: float, emit: EmitFn) -> Any:
        """Consume one event, emit follow-ups, return the updated state."""
        raise NotImplementedError

    def terminate(self, state: Any) -> dict:
        """Summarize one LP's state at the end of the run."""
        return {}

    def copy_state(self, state: Any) -> Any:
        """Snapshot for checkpointing; deep copy unless overridden with a
        cheaper copy that is observationally identical."""
        return copy.deepcopy(state)

    # Wire support (TCP transport); in-process runs never call these.
    def encode_payload(self, payload: Any) -> bytes:
        raise NotImplementedError

    def decode_payload(self, data: bytes) -> Any:
        raise NotImplementedError

    def trace_digest(self, payload: Any) -> Optional[tuple[int, int, int]]:
        """(entity, entity_sender, value) for committed-trace recording,
        or None if the model does not support tracing."""
        return None
