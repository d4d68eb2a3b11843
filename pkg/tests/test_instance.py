import itertools
import json
import math

import numpy as np
import pytest

from services.errors import ConfigError, InstanceParseError
from services.instance import (
    GeneratorConfig,
    VariantFlags,
    deserialize,
    distance,
    generate_instance,
    instance_to_dict,
    load_instance,
    save_instance,
    serialize,
    validate_instance,
    with_variant,
)

ALL_FLAGS = [VariantFlags(*combo) for combo in itertools.product([False, True], repeat=4)]


def test_same_seed_same_bytes(make_instance):
    a = make_instance(n=10, fleet=4, types=3, variant="tw", seed=7)
    b = make_instance(n=10, fleet=4, types=3, variant="tw", seed=7)
    assert serialize(a) == serialize(b)
    assert serialize(a) != serialize(make_instance(n=10, fleet=4, types=3, variant="tw", seed=8))


@pytest.mark.parametrize("variant", ["cvrp", "o", "b", "l", "tw", "obltw"])
def test_generated_instances_are_valid(make_instance, variant):
    for seed in range(5):
        inst = make_instance(n=20, fleet=6, types=3, variant=variant, seed=seed)
        assert validate_instance(inst) == []
        assert inst.n_customers == 20
        assert inst.fleet_size == 6
        assert inst.n_actions == 1 + 3 + 20


def test_round_trip_preserves_instance(make_instance):
    for variant in ("cvrp", "obltw"):
        inst = make_instance(n=8, fleet=3, types=2, variant=variant, seed=3)
        assert deserialize(serialize(inst)) == inst


def test_saved_instance_file_loads_back(make_instance, tmp_path):
    inst = make_instance(n=6, fleet=3, types=2, variant="ltw", seed=9)
    path = tmp_path / "inst.json"
    save_instance(path, inst)
    assert path.read_bytes() == serialize(inst)
    assert load_instance(path) == inst


def test_open_windows_serialize_as_null(make_instance):
    payload = json.loads(serialize(make_instance(variant="cvrp")))
    assert all(node["l"] is None for node in payload["nodes"])
    assert payload["depot_close"] is None


def test_same_seed_shares_coordinates_across_variants(make_instance):
    plain = make_instance(n=10, seed=4, variant="cvrp")
    windows = make_instance(n=10, seed=4, variant="tw")
    assert [(n.x, n.y) for n in plain.nodes] == [(n.x, n.y) for n in windows.nodes]


def test_fleet_layout(make_instance):
    inst = make_instance(n=10, fleet=7, types=3, seed=2)
    capacities = [v.capacity for v in inst.fleet]
    assert capacities == sorted(capacities)
    assert [v.count for v in inst.fleet] == [3, 2, 2]
    assert all(v.unit_cost > 0 for v in inst.fleet)


def test_hc_mode_has_no_fixed_costs(make_instance):
    inst = make_instance(n=5, fleet=3, types=3, fleet_mode="hc")
    assert all(v.fixed_cost == 0.0 for v in inst.fleet)


def test_backhaul_customers_are_pickup_only(make_instance):
    inst = make_instance(n=20, fleet=5, types=2, variant="b", seed=1)
    pickups = [n for n in inst.nodes[1:] if n.q_b > 0]
    assert len(pickups) == 4
    assert all(n.q_l == 0 for n in pickups)


def test_distance_matrix_matches_scalar_distance(make_instance):
    inst = make_instance(n=6, seed=5)
    coords = [(n.x, n.y) for n in inst.nodes]
    for i, j in itertools.product(range(len(coords)), repeat=2):
        assert inst.dist[i, j] == distance(coords[i], coords[j])


def test_invalid_dimensions_rejected():
    with pytest.raises(ValueError):
        GeneratorConfig(n_customers=0)
    with pytest.raises(ValueError):
        GeneratorConfig(fleet_size=2, n_vehicle_types=3)
    with pytest.raises(ValueError):
        GeneratorConfig(unknown_key=1)
    with pytest.raises(ConfigError):
        generate_instance(GeneratorConfig.model_construct(n_customers=0))


def test_truncated_file_reports_location(make_instance):
    data = serialize(make_instance())
    with pytest.raises(InstanceParseError, match="line"):
        deserialize(data[: len(data) // 2])


def test_missing_field_reports_path(make_instance):
    payload = instance_to_dict(make_instance())
    del payload["nodes"][2]["x"]
    with pytest.raises(InstanceParseError, match="nodes.2.x"):
        deserialize(json.dumps(payload))


def test_validation_names_offending_customer(make_instance):
    payload = instance_to_dict(make_instance())
    payload["nodes"][3]["q_l"] = 1000.0
    violations = validate_instance(deserialize(json.dumps(payload)))
    assert any("customer 3" in v and "exceeds largest capacity" in v for v in violations)


def test_variant_names():
    assert VariantFlags.from_name("cvrp") == VariantFlags()
    assert VariantFlags.from_name("HFOVRPBLTW") == VariantFlags(True, True, True, True)
    assert VariantFlags.from_name("btw") == VariantFlags(backhaul=True, time_window=True)
    assert VariantFlags(open_route=True, time_window=True).name == "HFOVRPTW"
    for flags in ALL_FLAGS:
        assert VariantFlags.from_name(flags.name) == flags
        assert VariantFlags.from_name(flags.code) == flags
    with pytest.raises(ConfigError):
        VariantFlags.from_name("xyz")


def test_with_variant_keeps_nodes(make_instance):
    inst = make_instance(seed=9)
    opened = with_variant(inst, VariantFlags(open_route=True))
    assert opened.nodes == inst.nodes
    assert opened.variant.open_route
    assert not math.isinf(opened.dist[0, 1])


def test_distance_examples():
    assert distance((0.0, 0.0), (0.0, 0.0)) == 0.0
    assert distance((0.0, 0.0), (3.0, 4.0)) == 5.0


def test_distances_are_a_metric(make_instance):
    inst = make_instance(n=8, seed=6)
    dist = inst.dist
    assert (dist == dist.T).all()
    for i, j, k in itertools.product(range(len(inst.nodes)), repeat=3):
        assert dist[i, k] <= dist[i, j] + dist[j, k] + 1e-12


def test_minimal_and_large_instances(make_instance):
    tiny = make_instance(n=1, fleet=1, types=1)
    assert len(tiny.nodes) == 2 and tiny.fleet_size == 1
    assert validate_instance(tiny) == []
    assert deserialize(serialize(tiny)) == tiny

    large = make_instance(n=50, fleet=20, types=3, seed=7)
    assert len(large.nodes) == 51
    assert large.fleet_size == 20
    assert deserialize(serialize(large)) == large


def test_validation_reports_inverted_window(make_instance):
    payload = instance_to_dict(make_instance(variant="tw"))
    payload["nodes"][1]["e"] = payload["nodes"][1]["l"] + 1.0
    violations = validate_instance(deserialize(json.dumps(payload)))
    assert any("customer 1: time window opens" in v for v in violations)


@pytest.mark.slow
def test_generator_fuzz():
    rng = np.random.default_rng(23)
    for i in range(10_000):
        fleet = int(rng.integers(1, 8))
        cfg = GeneratorConfig(
            n_customers=int(rng.integers(1, 21)),
            fleet_size=fleet,
            n_vehicle_types=int(rng.integers(1, fleet + 1)),
            variant=ALL_FLAGS[i % len(ALL_FLAGS)],
            fleet_mode="hc" if i % 7 == 0 else "hf",
            seed=int(rng.integers(0, 2**32)),
        )
        inst = generate_instance(cfg)
        assert validate_instance(inst) == [], cfg
