import numpy as np
import pytest

from metareg.core import DegenerateMaskError
from metareg.metrics import (
    MetricReport,
    UndefinedDiceError,
    count_negative_jacobians,
    dice,
    evaluate_registration,
    field_error,
    ssd_pair,
    warp_mask,
)


def test_ssd_hand_values():
    a = np.zeros((2, 2))
    b = np.array([[1.0, 2.0], [0.0, 3.0]])
    m = np.array([[0, 1], [0, 0]])
    total, healthy = ssd_pair(a, b, m)
    assert total == pytest.approx(14 / 4)
    assert healthy == pytest.approx(10 / 3)
    assert ssd_pair(a, b) == (total, total)
    with pytest.raises(DegenerateMaskError):
        ssd_pair(a, b, np.ones((2, 2)))


def test_dice_hand_values():
    a = np.array([[1, 1], [0, 0]])
    b = np.array([[1, 0], [1, 0]])
    assert dice(a, b) == pytest.approx(0.5)
    assert dice(a, a) == 1.0
    assert dice(a, 1 - a) == 0.0
    with pytest.raises(UndefinedDiceError):
        dice(np.zeros((2, 2)), np.zeros((2, 2)))


def test_field_error_hand_value():
    d = np.zeros((2, 3, 3))
    t = np.zeros((2, 3, 3))
    d[:, 1, 2] = (3.0, 4.0)
    assert field_error(d, t) == 5.0
    roi = np.zeros((3, 3), bool)
    roi[0, 0] = True
    assert field_error(d, t, roi) == 0.0


def test_count_negative_jacobians():
    assert count_negative_jacobians(np.zeros((2, 4, 4))) == 0
    y, x = np.mgrid[0:4, 0:4].astype(float)
    assert count_negative_jacobians(np.stack([-2.0 * x, np.zeros_like(x)])) == 16


def test_warp_mask_identity_and_shift():
    m = np.zeros((4, 4), bool)
    m[1:3, 1:3] = True
    np.testing.assert_array_equal(warp_mask(m, np.zeros((2, 4, 4))), m)
    phi = np.zeros((2, 4, 4))
    phi[0] = 1.0
    np.testing.assert_array_equal(warp_mask(m, phi)[:, 0:2], m[:, 1:3])


def test_report_optional_keys():
    r = MetricReport(1.0, None, 0, 2.0)
    assert set(r.as_dict()) == {"ssd_total", "foldings", "runtime_ms"}
    r.dice = 0.9
    assert r.as_dict()["dice"] == 0.9


def test_evaluate_registration():
    out = np.zeros((3, 3))
    tgt = np.ones((3, 3))
    phi = np.zeros((2, 3, 3))
    seg = np.eye(3, dtype=bool)
    r = evaluate_registration(out, tgt, np.zeros((3, 3)), phi, 12.5, seg, seg, phi)
    assert r.ssd_total == 1.0 and r.ssd_healthy == 1.0
    assert r.dice == 1.0 and r.field_err_max == 0.0 and r.runtime_ms == 12.5
    full = evaluate_registration(out, tgt, np.ones((3, 3)), phi, 0.0)
    assert full.ssd_healthy is None
