import numpy as np
import pytest

from spammsqrt import synthetic as sy


def random_spd(n, kappa, seed=0):
    """Dense SPD matrix with a geometric spectrum on [1/kappa, 1]."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0 / kappa, 1.0, n)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def decay_spd(n, kappa, gamma=0.5, dim=1):
    return sy.impose_condition(
        sy.gen_decay(sy.SyntheticSpec(n, lattice_dim=dim, decay_rate=gamma)), kappa)


def inv_sqrt(m):
    w, v = np.linalg.eigh(m)
    return (v / np.sqrt(w)) @ v.T


def cond(m):
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return w[-1] / w[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
