import numpy as np
import pytest

from a2tune.actions import ActionGrid
from a2tune.network import SyntheticNetworkConfig, build_graph, generate_synthetic
from a2tune.reward import observe
from a2tune.simulator import CellModel, Simulator, SimulatorConfig


def random_action_world(cells=8, days=5, seed=0):
    """Graph, simulator and per-day observations under random A2 draws."""
    net = generate_synthetic(SyntheticNetworkConfig(cell_count=cells, days=days, seed=seed))
    graph = build_graph(net.stats, net.data.cells, 10.0)
    cfg = SimulatorConfig()
    sim = Simulator(graph, CellModel.from_data(net.data, cfg), cfg)
    rng = np.random.default_rng(seed + 1)
    grid = ActionGrid()
    obs = []
    for t in range(days):
        a2 = rng.choice(grid.values, size=cells).astype(float)
        feats, thr = sim.step(net.data.features[t], a2)
        obs.append(observe(t + 1, a2, feats, thr, graph))
    return graph, sim, obs, net


@pytest.fixture(scope="session")
def world():
    return random_action_world()


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
