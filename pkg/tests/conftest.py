import numpy as np
import pytest

from metamarl.backend.games import make_ipd, make_rps
from metamarl.backend.policies import PolicyParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ipd():
    return make_ipd(horizon=3)


@pytest.fixture
def rps():
    return make_rps(2, horizon=3)


def random_joint(game, rng, scale=1.0):
    """One random logit table per agent"""
    return [
        PolicyParams(agent_id=j, logits=rng.normal(0.0, scale, size=(game.n_states, game.n_actions)))
        for j in range(game.n_agents)
    ]


@pytest.fixture
def joint_factory():
    return random_joint


@pytest.fixture
def tiny_config_text():
    return "\n".join(
        [
            "game = ipd",
            "population = ipd",
            "K = 2",
            "H = 2",
            "L = 1",
            "peers_per_batch = 2",
            "max_iters = 2",
            "outer_lr = 0.1",
            "seeds = 0",
            "workers = 1",
        ]
    ) + "\n"


@pytest.fixture
def tiny_config_file(tmp_path, tiny_config_text):
    path = tmp_path / "tiny.cfg"
    path.write_text(tiny_config_text)
    return path
