import numpy as np
import pytest

from morphnet.nncore import Activation, PolicyKind, init_network

# exact probability (random_walk_solve_probability(8)) that a uniform-random walker
# solves GridRoom(8) within its 256-step limit
RANDOM_SOLVE_RATE_N8 = 0.5796018317883513


def random_net(seed, depth=2, width=8, obs_dim=4, n_out=3, kind=PolicyKind.CATEGORICAL,
               activation=Activation.RELU, widths=None):
    """Initialised net with non-zero biases and log_std so every parameter path is live."""
    widths = widths if widths is not None else [width] * depth
    net = init_network([obs_dim, *widths], n_out, kind, seed, activation)
    rng = np.random.default_rng(seed + 1000)
    for layer in net.extractor:
        layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
    net.policy_head.weight[:] = rng.normal(0, 0.5, net.policy_head.weight.shape)
    net.policy_head.bias[:] = rng.normal(0, 0.3, net.policy_head.bias.shape)
    net.value_head.bias[:] = rng.normal(0, 0.3, 1)
    if net.log_std is not None:
        net.log_std[:] = rng.normal(0, 0.3, net.log_std.shape)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(0)
