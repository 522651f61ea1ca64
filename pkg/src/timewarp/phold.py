"""PHOLD benchmark model.

A fixed population of timestamped events bounces among E entities spread
over L logical processes.  Handling an event draws a uniform recipient
(self-sends are legal), an exponential timestamp increment, burns a
configurable number of floating-point operations, and emits exactly one
follow-up event, so the event population stays constant for the whole run.

Every entity owns a private Lehmer RNG stream kept inside the model state.
That makes the trajectory a function of (base_seed, E) alone: repartitioning
the same model over a different number of LPs replays the identical
committed executions, which is what the sequential-equivalence checks rely
on.  ``rng_mode="lp"`` switches to one shared stream per LP instead; that
variant is faithful to classic per-process seeding but its trajectory
depends on L and on delivery order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Any, Optional

from .errors import ConfigError, ModelError
from .messages import ENVIRONMENT_LP, Message, MessageKind
from .model import EmitFn, EntityMap, ModelCallbacks
from .rng import check_seed, next_exponential, next_int, next_uniform, seed_for_entity

__all__ = [
    "PholdConfig",
    "PholdPayload",
    "PholdModel",
    "init_events",
    "workload_loop",
]


@dataclass(frozen=True)
class PholdPayload:
    """Event body: destination entity, emitting entity, and a value counter
    threaded through the event chain (deterministic, used for tracing)."""

    entity: int
    entity_sender: int
    value: int


@dataclass(frozen=True)
class PholdConfig:
    num_entities: int
    num_lps: int
    end_time: float
    base_seed: int
    rho: float = 0.5
    mean_increment: float = 5.0
    workload_fpops: int = 0
    rng_mode: str = "entity"

    def __post_init__(self) -> None:
        if self.num_lps < 1:
            raise ConfigError(f"num_lps must be >= 1, got {self.num_lps}")
        if self.num_entities < 1:
            raise ConfigError(
                f"num_entities must be >= 1, got {self.num_entities}"
            )
        if self.num_entities % self.num_lps != 0:
            raise ConfigError(
                f"num_entities ({self.num_entities}) must be a multiple of "
                f"num_lps ({self.num_lps})"
            )
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")
        if self.mean_increment <= 0.0:
            raise ConfigError(
                f"mean_increment must be positive, got {self.mean_increment}"
            )
        if self.workload_fpops < 0:
            raise ConfigError(
                f"workload_fpops must be >= 0, got {self.workload_fpops}"
            )
        if self.end_time <= 0.0:
            raise ConfigError(f"end_time must be positive, got {self.end_time}")
        if self.rng_mode not in ("entity", "lp"):
            raise ConfigError(
                f"rng_mode must be 'entity' or 'lp', got {self.rng_mode!r}"
            )
        try:
            check_seed(self.base_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def num_initial_events(self) -> int:
        # round(rho * E), half away from zero
        return math.floor(self.rho * self.num_entities + 0.5)


def workload_loop(n_fpops: int) -> float:
    """Burn exactly ``n_fpops`` floating-point operations.

    A dependent multiply-add chain, two operations per step, so neither the
    interpreter nor the hardware can skip or reorder the work.  Returns the
    accumulator, which is a pure function of ``n_fpops``.
    """
    acc = 1.0
    pairs, rem = divmod(n_fpops, 2)
    for _ in range(pairs):
        acc = acc * 0.999999 + 1e-7
    if rem:
        acc = acc * 0.999999
    return acc


def _draw_event(seed: int, now: float, cfg: PholdConfig) -> tuple[int, float, int]:
    """One PHOLD emission: recipient draw, then increment draw.
    Returns (recipient entity, event timestamp, advanced seed)."""
    u, seed = next_uniform(seed)
    recipient = int(u * cfg.num_entities)
    dt, seed = next_exponential(seed, cfg.mean_increment)
    return recipient, now + dt, seed


def init_events(cfg: PholdConfig) -> list[Message]:
    """The starting event population: round(rho * E) events, drawn from the
    streams of entities 0..k-1 at time 0 and stamped as environment sends.

    These are preloaded into LP inboxes before the run, never transported.
    ``PholdModel.init`` advances the same streams identically, so the state
    an LP starts with already accounts for these draws.
    """
    emap = EntityMap(cfg.num_entities, cfg.num_lps)
    out = []
    for j in range(cfg.num_initial_events):
        seed = seed_for_entity(cfg.base_seed, j)
        recipient, ts, seed = _draw_event(seed, 0.0, cfg)
        out.append(
            Message(
                kind=MessageKind.EVENT,
                seq_number=j,
                lp_sender=ENVIRONMENT_LP,
                lp_receiver=emap.route(recipient),
                timestamp=ts,
                payload=PholdPayload(recipient, j, j),
            )
        )
    return out


_PAYLOAD = struct.Struct("<IIq")


class PholdModel(ModelCallbacks):
    """Callbacks the engine drives; all randomness lives in the state."""

    def __init__(self, cfg: PholdConfig) -> None:
        self.cfg = cfg
        self.entity_map = EntityMap(cfg.num_entities, cfg.num_lps)

    def init(self, lp: int) -> dict:
        hosted = self.entity_map.entities_of(lp)
        k = self.cfg.num_initial_events
        state: dict[str, Any] = {"counts": {e: 0 for e in hosted}}
        if self.cfg.rng_mode == "entity":
            seeds = {}
            for e in hosted:
                seed = seed_for_entity(self.cfg.base_seed, e)
                if e < k:
                    # skip the two draws init_events consumed
                    seed = next_int(next_int(seed))
                seeds[e] = seed
            state["seeds"] = seeds
        else:
            state["seed"] = seed_for_entity(
                self.cfg.base_seed, self.cfg.num_entities + lp
            )
        return state

    def handle_event(self, state: dict, payload: PholdPayload,
                     timestamp: float, emit: EmitFn) -> dict:
        e = payload.entity
        if e not in state["counts"]:
            raise ModelError(f"entity {e} not hosted here (routing bug?)")
        if "seeds" in state:
            seed = state["seeds"][e]
        else:
            seed = state["seed"]
        recipient, ts, seed = _draw_event(seed, timestamp, self.cfg)
        acc = workload_loop(self.cfg.workload_fpops)
        value = (payload.value + int(acc * 1024.0) + 1) & 0x7FFFFFFF
        emit(recipient, PholdPayload(recipient, e, value), ts)
        if "seeds" in state:
            state["seeds"][e] = seed
        else:
            state["seed"] = seed
        state["counts"][e] += 1
        return state

    def terminate(self, state: dict) -> dict:
        return {
            "events": sum(state["counts"].values()),
            "entities": len(state["counts"]),
        }

    def copy_state(self, state: dict) -> dict:
        new = dict(state)
        for key in ("seeds", "counts"):
            if key in new:
                new[key] = dict(new[key])
        return new

    def encode_payload(self, payload: PholdPayload) -> bytes:
        return _PAYLOAD.pack(payload.entity, payload.entity_sender, payload.value)

    def decode_payload(self, data: bytes) -> PholdPayload:
        entity, sender, value = _PAYLOAD.unpack(data)
        return PholdPayload(entity, sender, value)

    def trace_digest(self, payload: PholdPayload) -> Optional[tuple[int, int, int]]:
        return (payload.entity, payload.entity_sender, payload.value)
