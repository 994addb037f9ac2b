import numpy as np
import pytest

from minehaul.errors import ParameterDomainError
from minehaul.schemas.common import FusionMode
from minehaul.schemas.prediction import EvidentialPrediction
from minehaul.services.fusion_service import FusionBuffer, confidence, fuse, ingest


def _pred(gamma, nu=1.0, alpha=2.0, beta=1.0, k=None) -> EvidentialPrediction:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim == 1:
        gamma = np.repeat(gamma[:, None], k or 1, axis=1)
    shape = gamma.shape
    return EvidentialPrediction(
        gamma=gamma,
        nu=np.broadcast_to(nu, shape).copy(),
        alpha=np.broadcast_to(alpha, shape).copy(),
        beta=np.broadcast_to(beta, shape).copy(),
    )


def _bin(buffer, d, *entries):
    buffer.bins[d] = [(np.full(4, value), np.full(4, lam)) for value, lam in entries]


@pytest.mark.parametrize("nu, alpha, beta, lam", [(1.0, 2.0, 1.0, 1.0), (4.0, 3.0, 2.0, 4.0)])
def test_confidence(nu, alpha, beta, lam):
    assert confidence(_pred([0.0] * 4, nu, alpha, beta)) == pytest.approx(np.full((4, 1), lam))


def test_alpha_at_most_one_rejected():
    buffer = FusionBuffer(1)
    with pytest.raises(ParameterDomainError):
        ingest(buffer, 0.0, _pred([0.0] * 4, alpha=1.0))


def test_ingest_bins_follow_odometer_floor():
    buffer = FusionBuffer(5)
    ingest(buffer, 10.2, _pred([0.1] * 4, k=5))
    ingest(buffer, 10.8, _pred([0.2] * 4, k=5))
    assert sorted(buffer.bins) == [10, 11, 12, 13, 14]
    assert all(len(buffer.entries(d)) == 2 for d in range(10, 15))
    ingest(buffer, 11.9, _pred([0.3] * 4, k=5))
    assert sorted(buffer.bins) == [11, 12, 13, 14, 15]
    assert len(buffer.entries(11)) == 3
    assert len(buffer.entries(15)) == 1


def test_ingest_stores_each_lookahead_in_its_bin():
    gamma = np.tile(np.array([0.0, 0.1, 0.2]), (4, 1))
    buffer = ingest(FusionBuffer(3), 4.5, _pred(gamma))
    for k, d in enumerate((4, 5, 6)):
        (values, lam), = buffer.entries(d)
        assert values == pytest.approx(np.full(4, 0.1 * k))
        assert lam == pytest.approx(np.ones(4))


def test_ingest_rejects_other_lookahead_count():
    with pytest.raises(ValueError):
        ingest(FusionBuffer(5), 0.0, _pred([0.0] * 4, k=3))


def test_hand_computed_bin():
    buffer = FusionBuffer(1)
    _bin(buffer, 7, (0.2, 3.0), (0.6, 1.0))
    latest = _pred([0.9] * 4)
    assert fuse(buffer, 7, FusionMode.EVIDENTIAL, latest).steer == pytest.approx(0.3)
    assert fuse(buffer, 7, FusionMode.UNIFORM, latest).steer == pytest.approx(0.4)
    assert fuse(buffer, 7, FusionMode.INSTANTANEOUS, latest).steer == pytest.approx(0.9)


def test_equal_confidences_match_uniform():
    buffer = FusionBuffer(1)
    _bin(buffer, 0, (0.11, 2.5), (0.37, 2.5), (0.52, 2.5))
    latest = _pred([0.0] * 4)
    evidential = fuse(buffer, 0, FusionMode.EVIDENTIAL, latest).as_array()
    uniform = fuse(buffer, 0, FusionMode.UNIFORM, latest).as_array()
    assert np.max(np.abs(evidential - uniform)) <= 1e-12


def test_single_entry_modes_agree():
    buffer = ingest(FusionBuffer(1), 3.0, _pred([0.25, 0.5, 0.0, 0.1], nu=2.0, alpha=5.0, beta=0.3))
    latest = _pred([0.25, 0.5, 0.0, 0.1])
    outputs = [fuse(buffer, 3, mode, latest) for mode in FusionMode]
    assert outputs[0] == outputs[1] == outputs[2]


def test_empty_bin_falls_back_to_latest():
    latest = _pred([-0.4, 0.3, 0.0, 0.0])
    assert fuse(FusionBuffer(1), 42, FusionMode.EVIDENTIAL, latest).steer == pytest.approx(-0.4)


def test_output_is_clamped():
    latest = _pred([1.7, -0.2, 1.3, 0.5])
    cmd = fuse(FusionBuffer(1), 0, FusionMode.INSTANTANEOUS, latest)
    assert cmd.as_array() == pytest.approx([1.0, 0.0, 1.0, 0.5])


def test_fuse_needs_a_prediction():
    with pytest.raises(ValueError):
        fuse(FusionBuffer(1), 0, FusionMode.UNIFORM, None)


def test_convex_combination_on_random_bins():
    rng = np.random.default_rng(0)
    latest = _pred([0.0] * 4)
    for _ in range(10_000):
        n = int(rng.integers(1, 6))
        buffer = FusionBuffer(1)
        values = rng.uniform(0.0, 1.0, (n, 4))
        lams = rng.uniform(1e-3, 1e3, (n, 4))
        buffer.bins[0] = list(zip(values, lams))
        for mode in (FusionMode.UNIFORM, FusionMode.EVIDENTIAL):
            out = fuse(buffer, 0, mode, latest).as_array()
            assert np.all(out >= values.min(axis=0) - 1e-12)
            assert np.all(out <= values.max(axis=0) + 1e-12)


def test_scaling_confidences_changes_nothing():
    rng = np.random.default_rng(1)
    values, lams = rng.uniform(0.0, 1.0, (4, 4)), rng.uniform(0.1, 5.0, (4, 4))
    latest = _pred([0.0] * 4)
    a, b = FusionBuffer(1), FusionBuffer(1)
    a.bins[0] = list(zip(values, lams))
    b.bins[0] = list(zip(values, 37.0 * lams))
    assert fuse(a, 0, FusionMode.EVIDENTIAL, latest).as_array() == pytest.approx(
        fuse(b, 0, FusionMode.EVIDENTIAL, latest).as_array(), abs=1e-12
    )


def test_instantaneous_never_reads_the_buffer():
    buffer = FusionBuffer(2)
    latest = _pred([0.1] * 4, k=2)
    for d in range(20):
        fuse(buffer, d, FusionMode.INSTANTANEOUS, latest)
    assert buffer.reads == 0
    fuse(buffer, 0, FusionMode.UNIFORM, latest)
    assert buffer.reads == 1


def test_buffer_memory_is_bounded():
    buffer = FusionBuffer(5)
    for i in range(2000):
        ingest(buffer, i * 0.3, _pred([0.1] * 4, k=5))
        assert len(buffer) <= 6
