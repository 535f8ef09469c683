import numpy as np
import pytest

from spammsqrt import frechet as fr
from spammsqrt import qtree
from spammsqrt import sqrt_iter as si
from spammsqrt.frechet import Direction
from spammsqrt.sqrt_iter import IterationConfig

from conftest import decay_spd, inv_sqrt, random_spd


def _h(x, a):
    return 0.5 * np.sqrt(a) * (3 * np.eye(len(x)) - a * x)


def x_dual(y, z, a):
    h = _h(y @ z, a)
    return (h @ y) @ (z @ h)


def x_single(z, s, a):
    zk = z @ _h(z.T @ s @ z, a)
    return zk.T @ s @ zk


def central(f, p, d, h=1e-6):
    return (f(p + h * d) - f(p - h * d)) / (2 * h)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_point(rng):
    y, z, d = rng.uniform(-1, 1, (3, 8, 8))
    return y, z, d / np.linalg.norm(d), rng.uniform(1, 2.85)


@pytest.mark.parametrize("seed", range(10))
def test_finite_differences(seed):
    rng = np.random.default_rng(seed)
    y, z, d, a = random_point(rng)
    fz = central(lambda q: x_dual(y, q, a), z, d)
    fy = central(lambda q: x_dual(q, z, a), y, d)
    assert rel(fr.frechet_x_wrt_z(y, z, Direction(d, "z"), a), fz) <= 1e-5
    assert rel(fr.frechet_x_wrt_y(y, z, Direction(d, "y"), a), fy) <= 1e-5
    s = y @ y.T + np.eye(8)
    fs = central(lambda q: x_single(q, s, a), z, d)
    assert rel(fr.frechet_x_wrt_z_single(z, s, Direction(d, "z"), a), fs) <= 1e-5


@pytest.mark.parametrize("c", [-1.0, 2.0, 0.5])
def test_linearity(c, rng):
    y, z, d, a = random_point(rng)
    s = y @ y.T + np.eye(8)
    for f, args in ((fr.frechet_x_wrt_z, (y, z)), (fr.frechet_x_wrt_y, (y, z)),
                    (fr.frechet_x_wrt_z_single, (z, s))):
        base = f(*args, d, a)
        np.testing.assert_allclose(f(*args, c * d, a), c * base, rtol=0,
                                   atol=1e-12 * np.abs(base).max())


def test_direction_validation():
    with pytest.raises(ValueError):
        Direction(np.eye(2), "z")
    with pytest.raises(ValueError):
        Direction(np.eye(2) / np.sqrt(2), "w")
    with pytest.raises(ValueError):
        Direction.of(np.zeros((2, 2)), "y")
    assert np.linalg.norm(Direction.of(np.ones((3, 3)), "y").unit_matrix) == pytest.approx(1)


def test_shape_mismatch():
    with pytest.raises(qtree.ShapeMismatchError):
        fr.frechet_x_wrt_z(np.eye(3), np.eye(4), np.eye(3) / np.sqrt(3))


def test_fixed_point_derivatives_vanish(rng):
    s = random_spd(8, 10, seed=2)
    z = inv_sqrt(s)
    w, v = np.linalg.eigh(s)
    y = (v * np.sqrt(w)) @ v.T
    d = Direction.of(rng.standard_normal((8, 8)), "z")
    assert np.linalg.norm(fr.frechet_x_wrt_z(y, z, d)) < 1e-10
    assert np.linalg.norm(fr.frechet_x_wrt_y(y, z, Direction(d.unit_matrix, "y"))) < 1e-10
    assert np.linalg.norm(fr.frechet_x_wrt_z_single(z, s, d)) < 1e-10
    assert np.linalg.norm(fr.limit_forms(y, y, z, z, d)) == 0
    assert np.linalg.norm(fr.limit_form_single(z, z, s, d)) == 0


def test_single_symmetric_output(rng):
    s = random_spd(8, 50, seed=4)
    z = 0.5 * np.eye(8) + 0.01 * random_spd(8, 2, seed=5)
    d = rng.standard_normal((8, 8))
    d = d + d.T
    out = fr.frechet_x_wrt_z_single(z, s, Direction.of(d, "z"), 1.3)
    np.testing.assert_allclose(out, out.T, atol=1e-12 * np.abs(out).max())


def test_limit_forms_direct(rng):
    yk, yp, zk, zp = rng.standard_normal((4, 6, 6))
    d = Direction.of(rng.standard_normal((6, 6)), "y")
    np.testing.assert_allclose(fr.limit_forms(yk, yp, zk, zp, d), d.unit_matrix @ (zk - zp))
    dz = Direction(d.unit_matrix, "z")
    np.testing.assert_allclose(fr.limit_forms(yk, yp, zk, zp, dz), (yk - yp) @ dz.unit_matrix)


def _trajectory(s, steps):
    ys, zs = [s], [np.eye(len(s))]
    for _ in range(steps):
        h = _h(ys[-1] @ zs[-1], 1.0)
        ys.append(h @ ys[-1])
        zs.append(zs[-1] @ h)
    return ys, zs


def test_limit_forms_approach_derivatives(rng):
    s = random_spd(8, 20, seed=7)
    s = s / (1.01 * np.linalg.eigvalsh(s)[-1])
    ys, zs = _trajectory(s, 12)
    d = Direction.of(rng.standard_normal((8, 8)), "z")
    gaps = []
    for k in range(1, 13):
        full = fr.frechet_x_wrt_z(ys[k - 1], zs[k - 1], d)
        lim = fr.limit_forms(ys[k], ys[k - 1], zs[k], zs[k - 1], d)
        gaps.append(np.linalg.norm(full - lim))
    # last five steps before the round-off floor
    approach = [g for g in gaps if g > 1e-13][-5:]
    assert len(approach) == 5
    assert all(b < a for a, b in zip(approach, approach[1:]))
    assert gaps[-1] < 1e-8


def test_displacement_bound_values():
    assert fr.displacement_bound(3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 10) == 0
    assert fr.displacement_bound(1, 1, 1, 1, 1, 0.0, 1, 1.0) == pytest.approx(2.5)
    assert fr.displacement_bound(1, 1, 0, 0, 0, 0.1, 3, 1.0) == pytest.approx(0.9)


def test_tau_zero_tracking_is_exact():
    s = decay_spd(48, 100)
    flow = fr.track_error_flow(s, IterationConfig(block_size=8), 15)
    assert all(max(r.dy, r.dz, r.dx) < 1e-12 for r in flow.records)
    assert flow.converged and not flow.diverged


def test_looser_sensitive_threshold_hurts():
    s = decay_spd(64, 1e4)
    dz = {}
    for ts in (1e-2, 1e-4):
        cfg = IterationConfig(tau=1e-2, tau_s=ts, scaling_enabled=False)
        dz[ts] = fr.track_error_flow(s, cfg, 40).terminal_dz
    assert dz[1e-2] > dz[1e-4]


def test_well_conditioned_bounded_and_bound_sound():
    s = decay_spd(64, 10)
    flow = fr.track_error_flow(s, IterationConfig(tau=1e-3), 30)
    assert flow.converged and not flow.diverged
    zref = np.linalg.norm(flow.reference.z[-1])
    assert flow.terminal_dz < zref
    for r in flow.records:
        assert r.dz <= r.bound_dz


def test_bound_sound_on_bifurcating_run():
    s = decay_spd(64, 1e6)
    cfg = IterationConfig(tau=1e-2, tau_s=1e-3, scaling_enabled=False)
    flow = fr.track_error_flow(s, cfg, 60)
    assert flow.diverged
    for r in flow.records:
        if np.isfinite(r.dz):
            assert r.dz <= r.bound_dz


def test_single_mode_tracking():
    s = decay_spd(32, 100)
    flow = fr.track_error_flow(s, IterationConfig(mode=si.SINGLE, tau=1e-4, block_size=8), 20)
    assert not flow.diverged
    assert all(r.deriv_y == 0 for r in flow.records)


def test_dense_cap():
    with pytest.raises(ValueError):
        fr.track_error_flow(np.eye(600), IterationConfig(), 1)
