import numpy as np
import pytest

from compact.cascade import Cascade, Stage
from compact.pool import GeneratorConfig, FamilySpec, load_manifest, synth_generate
from compact.trees import Node, Tree


def ladder_manifest(with_trigger=True):
    """Four families with costs 1/2/4/9 (5 features each) and an optional gated one."""
    fams = [
        {"name": "a", "start": 0, "end": 5, "unit_cost": 1, "trigger_group": None, "disc": 0.2},
        {"name": "b", "start": 5, "end": 10, "unit_cost": 2, "trigger_group": None, "disc": 0.3},
        {"name": "c", "start": 10, "end": 15, "unit_cost": 4, "trigger_group": None, "disc": 0.4},
        {"name": "d", "start": 15, "end": 20, "unit_cost": 9, "trigger_group": None, "disc": 0.5},
    ]
    groups = []
    if with_trigger:
        fams.append({"name": "g", "start": 20, "end": 24, "unit_cost": 1, "trigger_group": "gate", "disc": 0.6})
        groups.append({"id": "gate", "trigger_cost": 50})
    return load_manifest({"families": fams, "trigger_groups": groups})


def small_generator(n_pos=100, n_neg=100, delta=1.0, with_trigger=True):
    fams = [
        FamilySpec("a", 5, 1.0, 0.2),
        FamilySpec("b", 5, 2.0, 0.3),
        FamilySpec("c", 5, 4.0, 0.4),
        FamilySpec("d", 5, 9.0, 0.5),
    ]
    groups = {}
    if with_trigger:
        fams.append(FamilySpec("g", 4, 1.0, 0.6, trigger_group="gate"))
        groups["gate"] = 50.0
    return GeneratorConfig(tuple(fams), groups, n_pos, n_neg, delta)


def random_tree(rng, n_features, depth, features=None):
    """A full random tree of the given depth (for evaluation tests, not fitting)."""
    pool = np.arange(n_features) if features is None else np.asarray(features)
    nodes = []

    def grow(d):
        at = len(nodes)
        if d == 0:
            nodes.append(Node(value=int(rng.choice([-1, 1]))))
            return at
        nodes.append(None)
        left = grow(d - 1)
        right = grow(d - 1)
        nodes[at] = Node(feature=int(rng.choice(pool)), threshold=float(rng.normal()), left=left, right=right)
        return at

    grow(depth)
    return Tree(tuple(nodes))


def random_cascade(rng, manifest, m, depth=2, features=None, threshold_scale=1.0):
    stages = []
    for k in range(m):
        tree = random_tree(rng, manifest.total_features, depth, features)
        alpha = float(rng.uniform(0.05, 1.0))
        t = None if k == m - 1 else float(rng.uniform(0.0, 2.0) * threshold_scale)
        stages.append(Stage(tree, alpha, t))
    return Cascade(tuple(stages), manifest)


@pytest.fixture
def manifest():
    return ladder_manifest()


@pytest.fixture
def plain_manifest():
    return ladder_manifest(with_trigger=False)


@pytest.fixture
def small_data():
    return synth_generate(small_generator(), seed=3)


# acceptance lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
