import math

import pytest

from services.instance import GeneratorConfig, Instance, Node, VariantFlags, VehicleType, generate_instance


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def make_instance():
    def _make(n=5, fleet=3, types=2, variant="cvrp", seed=0, **overrides):
        cfg = GeneratorConfig(
            n_customers=n, fleet_size=fleet, n_vehicle_types=types, variant=variant, seed=seed, **overrides
        )
        return generate_instance(cfg)

    return _make


@pytest.fixture
def build_instance():
    """Instancia armada a mano: coords[0] es el depósito."""

    def _build(
        coords,
        linehaul=None,
        backhaul=None,
        fleet=((10.0, 0.2, 1.0, 1),),
        variant=VariantFlags(),
        dist_limit=None,
        depot_close=None,
        windows=None,
        service=None,
    ):
        n = len(coords) - 1
        linehaul = linehaul or [1.0] * n
        backhaul = backhaul or [0.0] * n
        windows = windows or [(0.0, math.inf)] * n
        service = service or [0.0] * n
        nodes = [Node(id=0, x=coords[0][0], y=coords[0][1], l=depot_close if depot_close else math.inf)]
        for i in range(n):
            nodes.append(
                Node(
                    id=i + 1,
                    x=coords[i + 1][0],
                    y=coords[i + 1][1],
                    q_l=linehaul[i],
                    q_b=backhaul[i],
                    e=windows[i][0],
                    l=windows[i][1],
                    s=service[i],
                )
            )
        vehicles = tuple(
            VehicleType(id=k, capacity=q, fixed_cost=fc, unit_cost=ac, count=count)
            for k, (q, fc, ac, count) in enumerate(fleet)
        )
        return Instance(
            nodes=tuple(nodes), fleet=vehicles, variant=variant, dist_limit=dist_limit, depot_close=depot_close
        )

    return _build
