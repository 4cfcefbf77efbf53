import numpy as np
import pytest

from genrec.generator import Activation, GeneratorNetwork


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_linear_net(weights, biases=None, seed=0):
    """Hand-built identity-activation net from explicit weight matrices."""
    weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in weights]
    dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    if biases is None:
        biases = [np.zeros(w.shape[0]) for w in weights]
    return GeneratorNetwork(tuple(dims), tuple(weights), tuple(biases),
                            Activation("identity"), seed)


def kink_free(net, z, margin=1e-3):
    """True when no pre-activation of any layer is within `margin` of 0."""
    from genrec.generator import layer_preactivations
    return all(np.min(np.abs(pre)) > margin for pre in layer_preactivations(net, z))
