import math

import numpy as np
import pytest

from app.core.errors import BasePointMismatch, OutOfDomain, SnapFailure
from app.services.paths import PuncturedPlane, concat, invert, realize, route_path
from app.services.periods import (
    PeriodService,
    agm,
    agm_check,
    legendre_series,
    loop_matrix,
    series_frame,
)
from app.services.rep import RHO_G0, RHO_G1, Mat2, from_loop_matrix, rho, transport
from app.services.words import A0, A1, Alphabet, Word


@pytest.mark.parametrize("lam", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_series_matches_agm(lam):
    """Test omega1 từ chuỗi khớp pi / AGM(1, sqrt(1 - lambda))"""
    frame = series_frame(lam)
    assert abs(frame.omega1 - agm_check(lam)) / abs(frame.omega1) < 1e-10


def test_series_at_zero():
    value, deriv = legendre_series(0)
    assert value == 1
    assert deriv == pytest.approx(0.25)


def test_series_domain():
    with pytest.raises(OutOfDomain):
        series_frame(0)
    with pytest.raises(OutOfDomain):
        legendre_series(1.0)
    with pytest.raises(OutOfDomain):
        agm_check(1.5)


def test_agm_converges():
    value, _ = agm(1.0, math.sqrt(0.5))
    assert value == pytest.approx(0.8472130847939790, rel=1e-14)


def test_frame_at_half():
    frame = series_frame(0.5)
    # lambda = 1/2: omega2 = i omega1
    assert frame.omega2 == pytest.approx(1j * frame.omega1, rel=1e-13)
    assert frame.tau == pytest.approx(1j, rel=1e-13)
    assert frame.is_valid()


def test_wronskian_invariant():
    """Test lambda (1 - lambda) W là hằng số"""
    values = [lam * (1 - lam) * series_frame(lam).wronskian for lam in (0.3, 0.5, 0.6)]
    assert values[1] == pytest.approx(values[0], rel=1e-10)
    assert values[2] == pytest.approx(values[0], rel=1e-10)


@pytest.mark.parametrize("text, expected", [
    ("a0", RHO_G0),
    ("a1", RHO_G1),
    ("A0", RHO_G0.inverse()),
    ("a0 A1", RHO_G0 @ RHO_G1.inverse()),
])
def test_loop_matrices_match_rho(period_service, plane, text, expected):
    """Test ma trận vòng đo số trùng với rho(w)"""
    word = Word.parse(text)
    result = period_service.continue_frame(series_frame(0.5), realize(word, plane))
    assert result.transported_start_basis is not None
    assert from_loop_matrix(result.transported_start_basis) == expected == rho(word)
    assert result.residual < 1e-6
    assert result.wronskian_drift < 1e-8


def test_extra_puncture_is_invisible(period_service):
    plane = PuncturedPlane(0.5 + 0j, (2 + 0j,))
    result = period_service.continue_frame(series_frame(0.5), realize(Word.parse("d1"), plane))
    assert result.transported_start_basis == Mat2.identity()
    assert result.end_frame.omega1 == pytest.approx(series_frame(0.5).omega1, rel=1e-9)


def test_empty_path_keeps_frame(period_service, plane):
    result = period_service.continue_frame(series_frame(0.5), realize(Word(), plane))
    assert result.transported_start_basis == Mat2.identity()
    assert result.end_frame == series_frame(0.5)


def test_basepoint_mismatch(period_service, plane):
    with pytest.raises(BasePointMismatch):
        period_service.continue_frame(series_frame(0.4), realize(Word.parse("a0"), plane))


def test_snap_tolerance_enforced(plane):
    # dung sai tích phân lỏng, dung sai snap chặt
    service = PeriodService(rtol=1e-3, atol=1e-3, snap_tol=1e-14)
    with pytest.raises(SnapFailure):
        service.continue_frame(series_frame(0.5), realize(Word.parse("a0"), plane))


def test_frame_at_outside_series_domain(period_service):
    """Test khung tại lambda = -1 bằng tiếp tục từ 1/2"""
    frame = period_service.frame_at(-1)
    assert frame.lambda_ == -1
    assert frame.is_valid()
    # Wronskian được bảo toàn dọc đường đi
    c0 = 0.25 * series_frame(0.5).wronskian
    assert -2 * frame.wronskian == pytest.approx(c0, rel=1e-8)


def test_frame_continuation_trace(period_service, plane):
    path = route_path(0.5 + 0j, 0.5 + 0.5j, plane)
    result = period_service.continue_frame(series_frame(0.5), path)
    assert result.transported_start_basis is None
    direct = series_frame(0.5 + 0.5j)
    assert result.end_frame.omega1 == pytest.approx(direct.omega1, rel=1e-9)
    df = result.trace(per_piece=4)
    assert {"re_omega1", "im_omega2"} <= set(df.columns)
    assert len(df) == 4 * len(path.pieces)


def test_loop_matrix_identity():
    frame = series_frame(0.3)
    matrix, residual = loop_matrix(frame, frame)
    assert matrix.is_identity()
    assert residual == pytest.approx(0.0, abs=1e-12)


def test_pullback_frame(period_service, masser_cover):
    fiber = masser_cover.fiber(0.5)
    frame = period_service.pullback_frame(series_frame(0.5), fiber[1])
    assert frame.over == fiber[1]
    with pytest.raises(BasePointMismatch):
        period_service.pullback_frame(series_frame(0.4), fiber[1])
    assert np.isclose(frame.omega1, series_frame(0.5).omega1)


@pytest.mark.slow
def test_every_short_word_matches_rho(period_service, plane):
    """Test mọi từ rút gọn độ dài <= 4 trên a0, a1: ma trận đo = rho(w), chuyển vị = transport(w)"""
    letters = [A0, A0.inverse(), A1, A1.inverse()]
    start = series_frame(0.5)
    checked = 0
    for word in Alphabet(0).reduced_words(4, letters):
        result = period_service.continue_frame(start, realize(word, plane))
        matrix = result.transported_start_basis
        assert matrix is not None
        assert from_loop_matrix(matrix) == rho(word), str(word)
        assert matrix.transpose() == transport(word), str(word)
        assert result.residual < 1e-6
        checked += 1
    assert checked == 161


@pytest.mark.parametrize("text", ["a0", "a1 A0", "a0 A1 a0"])
def test_continuation_ignores_loop_radius(period_service, plane, text):
    """Test khung cuối không phụ thuộc bán kính vòng (đồng luân)"""
    word = Word.parse(text)
    ends = [
        period_service.continue_frame(series_frame(0.5), realize(word, plane, radius)).end_frame
        for radius in (0.05, 0.12, 0.3)
    ]
    for frame in ends[1:]:
        assert frame.omega1 == pytest.approx(ends[0].omega1, rel=1e-8)
        assert frame.omega2 == pytest.approx(ends[0].omega2, rel=1e-8)


@pytest.mark.parametrize("target", [0.3 + 0.4j, -0.6 + 0.1j, 1.7 - 0.5j])
def test_path_then_inverse_restores_frame(period_service, plane, target):
    start = series_frame(0.5)
    path = route_path(0.5 + 0j, target, plane)
    result = period_service.continue_frame(start, concat(path, invert(path)))
    assert result.transported_start_basis == Mat2.identity()
    assert result.end_frame.omega1 == pytest.approx(start.omega1, rel=1e-8)
    assert result.end_frame.omega2 == pytest.approx(start.omega2, rel=1e-8)


def test_loop_then_inverse_restores_frame(period_service, plane):
    start = series_frame(0.5)
    loop = realize(Word.parse("a0 a1"), plane)
    result = period_service.continue_frame(start, concat(loop, invert(loop)))
    assert result.transported_start_basis == Mat2.identity()
    assert result.end_frame.omega2 == pytest.approx(start.omega2, rel=1e-8)


@pytest.mark.parametrize("left, right", [("a0", "a1"), ("a1", "A0 a1"), ("a0 a0", "A1")])
def test_concatenated_loops_compose(period_service, plane, left, right):
    """Test M(p q) = M(p) M(q) với (omega)_end = M (omega)_start"""
    start = series_frame(0.5)
    p, q = realize(Word.parse(left), plane), realize(Word.parse(right), plane)
    m_p = period_service.continue_frame(start, p).transported_start_basis
    m_q = period_service.continue_frame(start, q).transported_start_basis
    m_pq = period_service.continue_frame(start, concat(p, q)).transported_start_basis
    assert m_pq == m_p @ m_q
    assert m_pq == period_service.continue_frame(
        start, realize(Word.parse(f"{left} {right}"), plane)).transported_start_basis
