import pytest

from pmuopt.jacobian import OperatingPoint
from pmuopt.netmodel import Branch, Bus, BusKind, Network, load_case, operating_point

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LOG: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(ACCEPTANCE_LOG[k])


def make_net(n, edges, reference=1, x=0.1, r=0.0, b=0.0, thetas=None, vmags=None):
    """Network on buses 1..n; ``edges`` are (from, to) pairs or full Branch objects."""
    buses = []
    for i in range(1, n + 1):
        kind = BusKind.SLACK if i == reference else BusKind.PQ
        th = 0.0 if thetas is None else float(thetas[i - 1])
        vm = 1.0 if vmags is None else float(vmags[i - 1])
        buses.append(Bus(i, kind, vm, th, 0.0, 0.0))
    branches = [e if isinstance(e, Branch) else Branch(e[0], e[1], r, x, b) for e in edges]
    return Network(tuple(buses), tuple(branches), reference)


def random_network(rng, n, extra=None, taps=True, shifters=False):
    """Connected random network: a random spanning tree plus extra edges."""
    order = rng.permutation(n) + 1
    edges = set()
    for k in range(1, n):
        u = int(order[k])
        v = int(order[rng.integers(0, k)])
        edges.add((min(u, v), max(u, v)))
    extra = n // 2 if extra is None else extra
    for _ in range(extra):
        u, v = rng.choice(n, 2, replace=False) + 1
        edges.add((int(min(u, v)), int(max(u, v))))
    branches = []
    for u, v in sorted(edges):
        tap = float(rng.uniform(0.9, 1.1)) if taps and rng.random() < 0.3 else 0.0
        shift = float(rng.uniform(-0.2, 0.2)) if shifters and rng.random() < 0.3 else 0.0
        branches.append(Branch(u, v, float(rng.uniform(0, 0.05)), float(rng.uniform(0.02, 0.3)),
                               float(rng.uniform(0, 0.4)), tap, shift))
    return make_net(n, branches, reference=int(rng.integers(1, n + 1)))


def random_point(rng, n):
    return OperatingPoint(rng.uniform(-0.5, 0.5, n), rng.uniform(0.9, 1.1, n))


@pytest.fixture(scope="session")
def case39():
    return load_case("case39")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture
def triangle():
    return make_net(3, [(1, 2), (2, 3), (1, 3)], thetas=[0.0, -0.05, -0.1])


@pytest.fixture
def path3():
    return make_net(3, [(1, 2), (2, 3)], thetas=[0.0, -0.05, -0.1])


def base_of(net):
    return operating_point(net)

