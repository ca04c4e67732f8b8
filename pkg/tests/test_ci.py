import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import crandn
from isacdesign import ci
from isacdesign.ci import RegionTag
from isacdesign.errors import DomainError
from isacdesign.model import Constellation
from isacdesign.oracle import projection_oracle_2d

QPSK = Constellation("psk", 4)
PSK8 = Constellation("psk", 8)
QAM16 = Constellation("qam", 16)
SCALE = 1 / np.sqrt(10)


def instance(constellation, symbol, center, channel=None):
    center = np.atleast_1d(np.asarray(center, dtype=complex))
    return ci.CIInstance(
        channel=np.ones(len(center)) if channel is None else channel,
        symbol=complex(symbol),
        sinr_threshold=10.0,
        noise_power=0.01,
        region=ci.classify_point(constellation, symbol),
        center=center,
    )


class TestClassify:
    def test_psk_cone(self):
        region = ci.classify_point(QPSK, QPSK.points[0])
        assert region.tag is RegionTag.PSK_CONE
        assert region.half_angle == pytest.approx(np.pi / 4)

    @pytest.mark.parametrize(
        "point,tag,quadrant",
        [
            (1 + 1j, RegionTag.EXACT_A, None),
            (-1 + 1j, RegionTag.EXACT_A, None),
            (1 + 3j, RegionTag.EDGE_B, 1),
            (-1 - 3j, RegionTag.EDGE_B, 3),
            (3 + 1j, RegionTag.EDGE_D, 1),
            (3 - 1j, RegionTag.EDGE_D, 4),
            (3 + 3j, RegionTag.CORNER_C, 1),
            (-3 - 3j, RegionTag.CORNER_C, 3),
        ],
    )
    def test_qam_classes(self, point, tag, quadrant):
        region = ci.classify_point(QAM16, point * SCALE)
        assert region.tag is tag
        assert region.quadrant == quadrant

    def test_not_a_point(self):
        with pytest.raises(DomainError):
            ci.classify_point(QAM16, 0.5 + 0.5j)

    def test_axis_has_no_quadrant(self):
        with pytest.raises(DomainError):
            ci.quadrant_of(1.0 + 0j)


class TestPsk:
    def test_feasible_center_is_unchanged(self):
        inst = instance(QPSK, QPSK.points[0], 5 * QPSK.points[0])
        assert_allclose(ci.project_psk(inst), inst.center)

    def test_origin_goes_to_apex(self):
        symbol = QPSK.points[1]
        inst = instance(QPSK, symbol, 0.0)
        assert_allclose(ci.project_psk(inst), [inst.threshold * symbol], atol=1e-12)

    def test_edge(self):
        symbol = QPSK.points[0]
        rotation = np.exp(1j * np.angle(symbol))
        inst = instance(QPSK, symbol, 0.0)
        apex = inst.threshold
        inst = inst.with_center(np.array([rotation * (apex + 1 + 5j)]))
        assert_allclose(ci.project_psk(inst), [rotation * (apex + 3 + 3j)], atol=1e-12)

    def test_case_order_does_not_matter(self, rng):
        for _ in range(20):
            symbol = PSK8.points[int(rng.integers(8))]
            inst = instance(PSK8, symbol, crandn(rng, 3), channel=crandn(rng, 3))
            assert_allclose(
                ci.project_psk(inst),
                ci.project_psk(inst, case_order=(4, 3, 2, 1)),
                atol=1e-12,
            )

    def test_wrong_region(self):
        inst = instance(QAM16, (1 + 1j) * SCALE, 0.0)
        with pytest.raises(DomainError):
            ci.project_psk(inst)


class TestQam:
    def test_exact_pins_received_symbol(self, rng):
        h = crandn(rng, 4)
        symbol = (-1 + 1j) * SCALE
        inst = instance(QAM16, symbol, crandn(rng, 4), channel=h)
        q = ci.project_qam_A(inst)
        assert h @ q == pytest.approx(inst.threshold * symbol, abs=1e-12)
        # Minimum-norm move lies along conj(h)
        move = q - inst.center
        assert np.linalg.matrix_rank(np.stack([move, np.conj(h)]), tol=1e-9) == 1

    def test_edge_b(self):
        symbol = (1 + 3j) * SCALE
        inst = instance(QAM16, symbol, 0.0)
        target = inst.threshold * symbol
        assert_allclose(ci.project_qam_B(inst), [target], atol=1e-12)
        inst = inst.with_center(np.array([target + 1 + 1j]))
        assert_allclose(ci.project_qam_B(inst), [target + 1j], atol=1e-12)

    def test_edge_d_mirrored(self):
        symbol = (-3 + 1j) * SCALE
        inst = instance(QAM16, symbol, 0.0)
        target = inst.threshold * symbol
        assert inst.region.tag is RegionTag.EDGE_D
        inst = inst.with_center(np.array([target - 2 + 0.5j]))
        assert_allclose(ci.project_qam_D(inst), [target - 2], atol=1e-12)
        inst = inst.with_center(np.array([target + 2 + 0.5j]))
        assert_allclose(ci.project_qam_D(inst), [target], atol=1e-12)

    def test_corner_third_quadrant(self):
        symbol = (-3 - 3j) * SCALE
        inst = instance(QAM16, symbol, 0.0)
        target = inst.threshold * symbol
        assert_allclose(ci.project_qam_C(inst), [target], atol=1e-12)
        deeper = target - 1 - 1j
        assert_allclose(ci.project_qam_C(inst.with_center(np.array([deeper]))), [deeper])
        inst = inst.with_center(np.array([target - 1 + 1j]))
        assert_allclose(ci.project_qam_C(inst), [target - 1], atol=1e-12)

    def test_corner_order_does_not_matter(self, rng):
        symbol = (3 - 3j) * SCALE
        for _ in range(20):
            inst = instance(QAM16, symbol, crandn(rng, 3), channel=crandn(rng, 3))
            assert_allclose(
                ci.project_qam_C(inst),
                ci.project_qam_C(inst, order=("pin_both", "pin_re", "pin_im", "free")),
                atol=1e-12,
            )

    def test_dispatch_rejects_wrong_class(self):
        inst = instance(QAM16, (3 + 3j) * SCALE, 0.0)
        with pytest.raises(DomainError):
            ci.project_qam_B(inst)


def test_zero_channel():
    inst = instance(QPSK, QPSK.points[0], [1.0, 2.0], channel=np.zeros(2))
    with pytest.raises(DomainError):
        ci.project(inst)


@pytest.mark.parametrize("constellation", [PSK8, QAM16], ids=["psk8", "qam16"])
def test_projection_matches_oracle(constellation, rng):
    for _ in range(25):
        n = int(rng.integers(1, 6))
        symbol = constellation.points[int(rng.integers(constellation.order))]
        inst = instance(constellation, symbol, np.zeros(n), channel=crandn(rng, n))
        inst = inst.with_center(2 * inst.threshold * crandn(rng, n))
        q = ci.project(inst)

        h, c = inst.channel, inst.center
        z0 = complex(h @ c)
        z_star = projection_oracle_2d(
            inst.region.tag.value, inst.symbol, inst.threshold, z0, inst.region.half_angle
        )
        expected = c + (z_star - z0) * np.conj(h) / np.vdot(h, h).real
        scale = max(np.linalg.norm(expected - c), inst.threshold)
        assert np.linalg.norm(q - expected) <= 1e-6 * scale
        slacks = ci.region_slacks(complex(h @ q), inst.symbol, inst.threshold, inst.region)
        assert min(slacks) >= -1e-9


def test_project_image_is_scalar_projection():
    symbol = (1 + 1j) * SCALE
    region = ci.classify_point(QAM16, symbol)
    assert ci.project_image(0.0, symbol, 0.5, region) == pytest.approx(0.5 * symbol)


def test_instances_for(tiny_scenario):
    templates = ci.instances_for(tiny_scenario)
    assert len(templates) == tiny_scenario.num_symbols
    assert all(t.region.tag is RegionTag.PSK_CONE for t in templates)
    assert templates[0].threshold == pytest.approx(tiny_scenario.ci_threshold)
