import pytest

from app.core.errors import NotFound
from app.models.config import MASSER_COVER, MASSER_SECTION, CoverConfig, RunConfig, SectionConfig
from app.models.report import LoopReport, ReportBundle, StageReport, Verdict
from app.services.pipeline import (
    MonodromyPipelineService,
    finalize,
    period_value,
    masser_demo,
    quartic_demo,
    run_stage,
)
from app.services.rep import transport
from app.services.elog import betti_coords
from app.services.words import Word, decompose_kernel

TRINOMIAL = CoverConfig(monomials=[(0, 3, "1"), (0, 1, "-3"), (1, 0, "4"), (0, 0, "-2")])


def _report(coords):
    return LoopReport(word="e", period_matrix=[[1, 0], [0, 1]], log_variation=coords)


@pytest.fixture(scope="module")
def masser_run():
    config = RunConfig(cover=MASSER_COVER, section=MASSER_SECTION, generator_order=["a1", "a0", "d1"])
    pipeline = MonodromyPipelineService.from_config(config)
    bundle = pipeline.run("gamma", config.model_dump(mode="json"))
    return pipeline, bundle


def test_rank_check():
    """Test hạng của ma trận biến thiên"""
    full = MonodromyPipelineService.rank_check(_report((0, 2)), _report((4, 0)))
    assert full.rank == 2 and full.determinant == -8
    assert MonodromyPipelineService.rank_check(_report((1, 2)), _report((2, 4))).rank == 1
    assert MonodromyPipelineService.rank_check(_report((0, 0)), _report((0, 0))).rank == 0


def test_finalize_marks_audit_failures():
    bundle = ReportBundle(command="test")
    finalize(bundle, [("snap", 1e-9, 1e-6), ("ledger", 1e-3, 1e-8)])
    assert bundle.verdict == Verdict.AUDIT_FAILED
    assert bundle.tolerance_audit["snap"]["passed"]
    assert not bundle.tolerance_audit["ledger"]["passed"]


def test_run_stage_tags_errors():
    bundle = ReportBundle(command="test")

    def boom():
        raise NotFound("nothing", frontier=3)

    with pytest.raises(NotFound) as exc_info:
        run_stage(bundle, "alpha", boom, [])
    assert exc_info.value.stage == "alpha"
    failed = bundle.stage("alpha")
    assert isinstance(failed, StageReport)
    assert failed.error["details"]["frontier"] == 3


@pytest.mark.slow
def test_masser_verdict(masser_run):
    _, bundle = masser_run
    assert bundle.verdict == Verdict.OK, bundle.tolerance_audit
    assert [s.name for s in bundle.stages] == [
        "cover", "letter_table", "normalize", "alpha", "index", "gamma", "gamma_prime", "rank",
    ]
    assert all(entry["passed"] for entry in bundle.tolerance_audit.values())


@pytest.mark.slow
def test_masser_letter_table(masser_run):
    """Test bảng chữ: d1 đổi tờ, a0 và a1 đóng"""
    pipeline, _ = masser_run
    table = pipeline.letter_table()
    assert len(table) == 6
    for (gen, sheet), (end, _) in table.items():
        if str(gen) == "d1":
            assert end == 3 - sheet
        else:
            assert end == sheet


@pytest.mark.slow
def test_masser_normalization(masser_run):
    pipeline, bundle = masser_run
    payload = bundle.stage("normalize").payload
    assert payload["deltas"] == {"1": "e", "2": "d1"}
    assert payload["trace_at_basepoint_is_zero"]
    assert abs(complex(*payload["normalized_sum"])) < 1e-8
    assert pipeline.normalized is not None


@pytest.mark.slow
def test_masser_alpha_and_index(masser_run):
    """Test alpha = a1, chỉ số i = 2 và omega_2 = -omega_1"""
    _, bundle = masser_run
    alpha = bundle.stage("alpha").payload
    assert alpha["alpha"] == "a1"
    assert alpha["variation"]["nonzero"]
    index = bundle.stage("index").payload
    assert index["index"] == 2
    assert index["delta"] == "d1"
    first, second = index["omegas"]["1"], index["omegas"]["2"]
    assert first == alpha["variation"]["coords"]
    assert second == [-first[0], -first[1]]


@pytest.mark.slow
def test_masser_gamma(masser_run):
    """Test Gamma = a1 d1 A1 D1 khôi phục chu kỳ và có biến thiên 2 T^-1 omega"""
    _, bundle = masser_run
    gamma = bundle.stage("gamma").payload
    assert gamma["word"] == "a1 d1 A1 D1"
    assert gamma["period_matrix"] == [[1, 0], [0, 1]]
    assert gamma["lift_closed"]
    assert len(gamma["ledger"]) == 4
    assert all(step["error"] < 1e-8 for step in gamma["ledger"])

    omega = bundle.stage("index").payload["omegas"]["1"]
    expected = transport(Word.parse("a1")).inverse().apply((2 * omega[0], 2 * omega[1]))
    assert tuple(gamma["log_variation"]) == expected
    assert tuple(gamma["predicted_variation"]) == expected
    assert gamma["certificate"]["level"] == 1


@pytest.mark.slow
def test_masser_gamma_prime(masser_run):
    """Test Gamma' có biến thiên (T_zeta^-1 - I) v và ma trận hạng 2"""
    _, bundle = masser_run
    n1, n2 = bundle.stage("gamma").payload["log_variation"]
    prime = bundle.stage("gamma_prime").payload
    if n1 != 0:
        assert prime["zeta"] == "a1"
        expected = [0, -2 * n1]
    else:
        assert prime["zeta"] == "a0"
        expected = [-2 * n2, 0]
    assert prime["log_variation"] == expected
    assert prime["predicted_variation"] == expected
    assert prime["period_matrix"] == [[1, 0], [0, 1]]

    word = Word.parse(prime["word"])
    assert len(word) == 10
    cert = decompose_kernel(word)
    assert cert.level <= 2
    assert cert.relative_length == 3

    rank = bundle.stage("rank").payload
    assert rank["rank"] == 2
    assert rank["determinant"] == n1 * expected[1] - n2 * expected[0]
    assert rank["determinant"] != 0


@pytest.mark.slow
def test_masser_predictions_match_runs(masser_run):
    """Test mọi vòng đã chạy khớp với dự đoán từ bảng chữ"""
    pipeline, _ = masser_run
    for (word, sheet), loop in pipeline.runs.items():
        end, _, raw, t = pipeline.predict(word, sheet)
        assert end == sheet
        assert raw == loop.raw
        assert t == loop.transport


@pytest.mark.slow
def test_masser_doubled_gamma(masser_run):
    """Test biến thiên của Gamma^2 gấp đôi của Gamma"""
    pipeline, bundle = masser_run
    gamma = Word.parse(bundle.stage("gamma").payload["word"])
    single = bundle.stage("gamma").payload["log_variation"]
    doubled = pipeline.verify_gamma(gamma * gamma)
    assert list(doubled.log_variation) == [2 * single[0], 2 * single[1]]


@pytest.mark.slow
def test_masser_identity_gamma(masser_run):
    pipeline, _ = masser_run
    report = pipeline.verify_gamma(Word())
    assert report.log_variation == (0, 0)
    assert report.period_matrix == [[1, 0], [0, 1]]


@pytest.mark.slow
def test_masser_demo_is_deterministic(masser_run):
    _, bundle = masser_run
    demo = masser_demo()
    assert demo.verdict == Verdict.OK
    for name in ("alpha", "index", "gamma", "gamma_prime", "rank"):
        left = {k: v for k, v in demo.stage(name).payload.items() if k not in ("residuals", "ledger")}
        right = {k: v for k, v in bundle.stage(name).payload.items() if k not in ("residuals", "ledger")}
        assert left == right, name


@pytest.fixture(scope="module")
def quartic_run():
    return quartic_demo()


@pytest.mark.slow
def test_quartic_cover(quartic_run):
    """Test cover bậc 4: Galois, rank 2"""
    bundle = quartic_run
    assert bundle.verdict == Verdict.OK, bundle.tolerance_audit
    assert bundle.stage("cover").payload["degree"] == 4
    assert bundle.stage("rank").payload["rank"] == 2


@pytest.mark.slow
def test_torsion_section_has_no_alpha():
    """Test section xoắn (0, 0): mọi biến thiên bằng 0, tìm alpha thất bại"""
    config = RunConfig(cover=MASSER_COVER, section=SectionConfig(name="torsion_0", x="0", y="0"))
    bundle = MonodromyPipelineService.from_config(config).run()
    assert bundle.verdict == Verdict.ERROR
    failed = bundle.stage("alpha")
    assert failed.error["error"] == "NotFound"
    assert failed.error["details"]["inconsistency"] is True


def test_non_galois_cover_is_refused():
    """Test cover không Galois bị từ chối ở stage cover"""
    config = RunConfig(cover=TRINOMIAL, section=SectionConfig(name="zero"))
    bundle = MonodromyPipelineService.from_config(config).run()
    assert bundle.verdict == Verdict.ERROR
    failed = bundle.stage("cover")
    assert failed.error["error"] == "NotGalois"
    assert bundle.stage("alpha") is None


def _is_lattice(z, frame, tol=1e-6):
    beta = betti_coords(z, frame)
    return all(abs(b - round(b)) < tol for b in beta)


@pytest.mark.slow
def test_masser_inverse_alpha_variation(masser_run):
    """Test c(alpha^-1) = -T^-1 c(alpha) trên từng tờ, cả thô lẫn chuẩn hóa"""
    pipeline, bundle = masser_run
    alpha = Word.parse(bundle.stage("alpha").payload["alpha"])
    index = bundle.stage("index").payload["index"]
    omegas = bundle.stage("index").payload["omegas"]
    t_inv = transport(alpha).inverse()
    for sheet in (1, index):
        forward = pipeline.run_loop(alpha, sheet)
        back = pipeline.run_loop(alpha.inverse(), sheet)
        moved = t_inv.apply(forward.raw)
        assert back.raw == (-moved[0], -moved[1])
        expected_z = back.start.z - period_value(moved, pipeline.frame)
        assert abs(back.end.z - expected_z) < 1e-8
        omega = t_inv.apply(tuple(omegas[str(sheet)]))
        assert pipeline.normalized.variation(back.raw, back.transport) == (-omega[0], -omega[1])


@pytest.mark.slow
@pytest.mark.parametrize("a, b", [(1, 1), (1, -1), (-2, 1)])
def test_masser_variation_is_linear(masser_run, a, b):
    """Test var(Gamma^a Gamma'^b) = a var(Gamma) + b var(Gamma')"""
    pipeline, bundle = masser_run
    gamma = bundle.stage("gamma").payload
    prime = bundle.stage("gamma_prime").payload
    word = Word.parse(gamma["word"]) ** a * Word.parse(prime["word"]) ** b
    report = pipeline.verify_gamma(word)
    g, p = gamma["log_variation"], prime["log_variation"]
    assert tuple(report.log_variation) == (a * g[0] + b * p[0], a * g[1] + b * p[1])
    assert report.period_matrix == [[1, 0], [0, 1]]


@pytest.mark.slow
def test_masser_log_is_odd_across_sheets(masser_run):
    """Test tờ 2 mang -P: log trên hai tờ có tổng là một chu kỳ, cả sau khi đi vòng"""
    pipeline, bundle = masser_run
    first, second = pipeline.principal
    assert _is_lattice(first.z + second.z, pipeline.frame)
    alpha = Word.parse(bundle.stage("alpha").payload["alpha"])
    ends = [pipeline.run_loop(alpha, sheet).end for sheet in (1, 2)]
    assert _is_lattice(ends[0].z + ends[1].z, pipeline.frame)
    for lam in (0.3, 0.25 + 0.5j, -0.5 - 0.2j):
        frame = pipeline.periods.frame_at(lam)
        logs = [pipeline.elog.branch_at(fp, frame).z for fp in pipeline.cover.fiber(lam)]
        assert _is_lattice(logs[0] + logs[1], frame), lam


@pytest.mark.slow
def test_quartic_gamma_variations(quartic_run):
    """Test biến thiên của Gamma và Gamma' trên cover bậc 4 theo dạng đóng"""
    bundle = quartic_run
    alpha = Word.parse(bundle.stage("alpha").payload["alpha"])
    index_payload = bundle.stage("index").payload
    index = index_payload["index"]
    omegas = {int(k): tuple(v) for k, v in index_payload["omegas"].items()}
    assert sorted(omegas) == [1, 2, 3, 4]
    assert omegas[index] != omegas[1]
    assert all(omegas[j] == omegas[1] for j in range(2, index))

    gamma = bundle.stage("gamma").payload
    diff = (omegas[1][0] - omegas[index][0], omegas[1][1] - omegas[index][1])
    expected = transport(alpha).inverse().apply(diff)
    assert tuple(gamma["log_variation"]) == expected
    assert tuple(gamma["predicted_variation"]) == expected
    assert gamma["period_matrix"] == [[1, 0], [0, 1]]
    assert gamma["lift_closed"]

    prime = bundle.stage("gamma_prime").payload
    n1, n2 = expected
    zeta = Word.parse(prime["zeta"])
    assert zeta == Word.parse("a1" if n1 != 0 else "a0")
    moved = transport(zeta).inverse().apply(expected)
    assert tuple(prime["log_variation"]) == (moved[0] - n1, moved[1] - n2)
    assert bundle.stage("rank").payload["determinant"] == n1 * (moved[1] - n2) - n2 * (moved[0] - n1)
