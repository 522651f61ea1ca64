"""PHOLD model: configuration validation, initial event population,
event handling semantics, workload loop, and recipient statistics."""

import math
import random

import pytest

from timewarp.errors import ConfigError, ModelError
from timewarp.messages import ENVIRONMENT_LP, MessageKind
from timewarp.model import EntityMap
from timewarp.phold import (
    PholdConfig,
    PholdModel,
    PholdPayload,
    init_events,
    workload_loop,
)
from timewarp.rng import MODULUS, next_int, seed_for_entity

BASE = PholdConfig(num_entities=24, num_lps=3, end_time=100.0, base_seed=12345)


def test_config_validation():
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=0, num_lps=1, end_time=1.0, base_seed=1)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=0, end_time=1.0, base_seed=1)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=10, num_lps=4, end_time=1.0, base_seed=1)  # 4 !| 10
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=1, rho=0.0)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=1, rho=1.5)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=1,
                    mean_increment=0.0)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=1,
                    workload_fpops=-1)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=0.0, base_seed=1)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=0)
    with pytest.raises(ConfigError):
        PholdConfig(num_entities=4, num_lps=2, end_time=1.0, base_seed=1,
                    rng_mode="global")


def test_initial_population_size():
    assert BASE.num_initial_events == 12  # round(0.5 * 24)
    big = PholdConfig(num_entities=840, num_lps=4, end_time=1.0, base_seed=1)
    assert big.num_initial_events == 420  # round(0.5 * 840)
    third = PholdConfig(num_entities=9, num_lps=3, end_time=1.0, base_seed=1,
                        rho=0.5)
    assert third.num_initial_events == 5  # round(4.5) rounds half up


def test_init_events_shape():
    events = init_events(BASE)
    em = EntityMap(BASE.num_entities, BASE.num_lps)
    assert len(events) == 12
    for j, m in enumerate(events):
        assert m.kind is MessageKind.EVENT
        assert m.seq_number == j
        assert m.lp_sender == ENVIRONMENT_LP
        assert m.timestamp > 0.0  # exponential increments are positive
        assert m.payload.entity == m.payload.entity  # routed to its entity's LP:
        assert m.lp_receiver == em.route(m.payload.entity)
        assert m.payload.entity_sender == j  # originating entity id
        assert m.payload.value == j


def test_init_events_deterministic_and_partition_independent():
    one = init_events(BASE)
    two = init_events(BASE)
    assert one == two
    # the same population, rehomed, for a different L
    other = PholdConfig(num_entities=24, num_lps=4, end_time=100.0,
                        base_seed=12345)
    em4 = EntityMap(24, 4)
    for a, b in zip(one, init_events(other)):
        assert (a.timestamp, a.payload) == (b.timestamp, b.payload)
        assert b.lp_receiver == em4.route(b.payload.entity)


def test_model_init_accounts_for_initial_draws():
    model = PholdModel(BASE)
    state = model.init(0)  # LP 0 hosts entities 0..7
    k = BASE.num_initial_events  # 12 > 7, so all of LP 0's entities drew
    for e in range(8):
        expected = seed_for_entity(BASE.base_seed, e)
        if e < k:
            expected = next_int(next_int(expected))  # recipient + increment
        assert state["seeds"][e] == expected
    assert state["counts"] == {e: 0 for e in range(8)}


def test_handle_event_emits_exactly_one_future_event():
    model = PholdModel(BASE)
    state = model.init(0)
    emitted = []
    payload = PholdPayload(entity=3, entity_sender=9, value=40)
    state = model.handle_event(state, payload, 10.0,
                               lambda e, p, ts: emitted.append((e, p, ts)))
    assert len(emitted) == 1
    entity, out, ts = emitted[0]
    assert ts > 10.0
    assert out.entity == entity
    assert out.entity_sender == 3  # the handling entity
    assert 0 <= entity < 24
    assert state["counts"][3] == 1
    # value chain: previous value + folded workload accumulator + 1
    assert out.value == (40 + int(workload_loop(0) * 1024.0) + 1) & 0x7FFFFFFF


def test_handle_event_rejects_foreign_entity():
    model = PholdModel(BASE)
    state = model.init(0)  # hosts 0..7 only
    with pytest.raises(ModelError):
        model.handle_event(state, PholdPayload(20, 0, 0), 1.0, lambda *a: None)


def test_handle_event_pure_given_state():
    # same state in, same emission out: replay after rollback must agree
    model = PholdModel(BASE)
    state = model.init(0)
    payload = PholdPayload(entity=5, entity_sender=1, value=7)

    runs = []
    for _ in range(2):
        emitted = []
        model.handle_event(model.copy_state(state), payload, 3.0,
                           lambda e, p, ts: emitted.append((e, p, ts)))
        runs.append(emitted)
    assert runs[0] == runs[1]


def test_copy_state_isolates_mutations():
    model = PholdModel(BASE)
    state = model.init(1)
    snap = model.copy_state(state)
    model.handle_event(state, PholdPayload(8, 0, 0), 1.0, lambda *a: None)
    assert snap["counts"][8] == 0
    assert snap["seeds"][8] != state["seeds"][8]


def test_lp_rng_mode_shares_one_stream():
    cfg = PholdConfig(num_entities=24, num_lps=3, end_time=100.0,
                      base_seed=12345, rng_mode="lp")
    model = PholdModel(cfg)
    state = model.init(2)
    assert "seeds" not in state
    assert state["seed"] == seed_for_entity(12345, 24 + 2)
    emitted = []
    before = state["seed"]
    state = model.handle_event(state, PholdPayload(16, 0, 0), 1.0,
                               lambda e, p, ts: emitted.append(ts))
    assert state["seed"] == next_int(next_int(before))


def test_payload_roundtrip():
    model = PholdModel(BASE)
    p = PholdPayload(entity=23, entity_sender=7, value=2**31 - 1)
    assert model.decode_payload(model.encode_payload(p)) == p
    assert model.trace_digest(p) == (23, 7, 2**31 - 1)


def test_terminate_summary():
    model = PholdModel(BASE)
    state = model.init(0)
    for _ in range(3):
        state = model.handle_event(state, PholdPayload(2, 0, 0), 1.0,
                                   lambda *a: None)
    assert model.terminate(state) == {"events": 3, "entities": 8}


def test_workload_loop_exact_semantics():
    assert workload_loop(0) == 1.0
    assert workload_loop(1) == 1.0 * 0.999999
    assert workload_loop(2) == 1.0 * 0.999999 + 1e-7
    # deterministic, and every op count gives a distinct accumulator
    values = [workload_loop(n) for n in range(50)]
    assert values == [workload_loop(n) for n in range(50)]
    assert len(set(values)) == 50


def test_recipient_draws_are_uniform_over_entities():
    # raw routing statistics at L=4: a remote recipient has probability
    # (L-1)/L = 0.75; checked over 10^5 independent draws
    em = EntityMap(840, 4)
    seed = 555
    n = 100_000
    remote = 0
    counts = [0, 0, 0, 0]
    for _ in range(n):
        seed = next_int(seed)
        recipient = int(seed / MODULUS * 840)
        lp = em.route(recipient)
        counts[lp] += 1
        if lp != 0:  # relative to a fixed sender LP
            remote += 1
    frac = remote / n
    assert math.isclose(frac, 0.75, abs_tol=0.01)
    for c in counts:  # each LP receives ~ n/4
        assert math.isclose(c, n / 4, rel_tol=0.05)


def test_timestamp_increments_have_requested_mean():
    cfg = PholdConfig(num_entities=8, num_lps=1, end_time=1e9, base_seed=99,
                      mean_increment=5.0)
    model = PholdModel(cfg)
    state = model.init(0)
    rng = random.Random(1)
    total = 0.0
    n = 20_000
    now = 0.0
    for _ in range(n):
        entity = rng.randrange(8)
        holder = []
        state = model.handle_event(state, PholdPayload(entity, 0, 0), now,
                                   lambda e, p, ts: holder.append(ts))
        total += holder[0] - now
    assert math.isclose(total / n, 5.0, rel_tol=0.05)
