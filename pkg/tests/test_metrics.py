"""Metrics: binarization, IoU, accuracy, evaluation reports, comparison tables."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeseg import (
    DimensionError,
    MetricsReport,
    ModelConfig,
    ModelOutput,
    ValidationError,
    accuracy,
    binarize,
    build_model,
    compare_runs,
    evaluate,
    format_table,
    iou,
    load_split,
)

# ---------------------------------------------------------------------------
# binarize
# ---------------------------------------------------------------------------


def test_binarize_checkerboard():
    s = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert np.array_equal(binarize(s, 0.5), np.array([[1, 0], [0, 1]], dtype=np.uint8))


def test_binarize_threshold_is_inclusive():
    s = np.full((2, 2), 0.5)
    assert binarize(s, 0.5).all()


def test_binarize_threshold_monotonic():
    rng = np.random.default_rng(0)
    s = rng.random((8, 8))
    low = binarize(s, 0.2)
    high = binarize(s, 0.8)
    assert np.all(high <= low)


def test_binarize_threshold_range():
    s = np.zeros((2, 2))
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValidationError):
            binarize(s, bad)


# ---------------------------------------------------------------------------
# iou
# ---------------------------------------------------------------------------


def _block(h, w, r0, c0, size):
    m = np.zeros((h, w), dtype=np.uint8)
    m[r0 : r0 + size, c0 : c0 + size] = 1
    return m


def test_iou_identity():
    m = _block(4, 4, 1, 1, 2)
    assert iou(m, m) == 1.0


def test_iou_disjoint():
    assert iou(_block(4, 4, 0, 0, 2), _block(4, 4, 2, 2, 2)) == 0.0


def test_iou_offset_blocks_exact_seventh():
    a = _block(3, 3, 0, 0, 2)
    b = _block(3, 3, 1, 1, 2)
    assert iou(a, b) == 1.0 / 7.0


def test_iou_empty_conventions():
    empty = np.zeros((3, 3), dtype=np.uint8)
    full = np.ones((3, 3), dtype=np.uint8)
    assert iou(empty, empty) == 1.0
    assert iou(empty, full) == 0.0
    assert iou(full, empty) == 0.0


def test_iou_shape_mismatch():
    with pytest.raises(DimensionError):
        iou(np.zeros((3, 3), dtype=np.uint8), np.zeros((3, 4), dtype=np.uint8))


@given(st.integers(0, 2**16 - 1))
@settings(max_examples=30, deadline=None)
def test_iou_symmetric_and_bounded(bits):
    flat = np.array([(bits >> i) & 1 for i in range(16)], dtype=np.uint8)
    a, b = flat[:8].reshape(2, 4), flat[8:].reshape(2, 4)
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------


def test_accuracy_hand_case():
    p = np.array([0.9, 0.4, 0.6, 0.2])
    y = np.array([1, 0, 0, 1])
    assert accuracy(p, y) == 0.5


def test_accuracy_extremes():
    y = np.array([1, 0, 1])
    assert accuracy(np.array([0.9, 0.1, 0.8]), y) == 1.0
    assert accuracy(np.array([0.1, 0.9, 0.2]), y) == 0.0


def test_accuracy_invariant_to_monotone_transform():
    rng = np.random.default_rng(3)
    p = rng.random(40)
    p = p[np.abs(p - 0.5) > 1e-3]
    y = (rng.random(p.size) < 0.5).astype(np.int64)
    t = p**3 / (p**3 + (1 - p) ** 3)  # strictly increasing, fixes 0.5
    assert accuracy(p, y) == accuracy(t, y)


def test_accuracy_empty_is_error():
    with pytest.raises(ValidationError):
        accuracy(np.array([]), np.array([]))


def test_accuracy_shape_mismatch():
    with pytest.raises(DimensionError):
        accuracy(np.array([0.5, 0.5]), np.array([1]))


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


class StubModel:
    """Duck-typed stand-in emitting fixed outputs."""

    def __init__(self, p_fn, s_value=1e-6):
        self.det_head = object()
        self.seg_decoder = object()
        self._p_fn = p_fn
        self._s = s_value

    def eval(self):
        return self

    def __call__(self, x):
        n, _, h, w = x.shape
        p = torch.tensor([self._p_fn(i) for i in range(n)], dtype=torch.float64)
        s = torch.full((n, h, w), self._s, dtype=torch.float64)
        return ModelOutput(p=p, S=s)

    def to_arrays(self, arrays):
        return arrays


def test_evaluate_stub_perfect_on_real(tiny_corpus):
    arrays = load_split(tiny_corpus, "test")
    labels = arrays.labels
    stub = StubModel(lambda i: 0.99 if labels[i] == 1 else 0.01)
    from forgeseg.metrics import evaluate_arrays

    report = evaluate_arrays(stub, arrays)
    assert report.acc_all == 1.0
    assert report.acc_real == 1.0
    assert report.acc_fake == 1.0
    # S ~ 0 everywhere: empty prediction agrees with real (empty) masks only
    assert report.iou_real == 1.0
    assert report.iou_fake == 0.0


def test_evaluate_stub_constant_half(tiny_corpus):
    arrays = load_split(tiny_corpus, "test")
    stub = StubModel(lambda i: 0.5)  # >= threshold, predicts fake everywhere
    from forgeseg.metrics import evaluate_arrays

    report = evaluate_arrays(stub, arrays)
    assert report.acc_fake == 1.0
    assert report.acc_real == 0.0
    n_fake = report.counts["fake"]
    assert report.acc_all == n_fake / report.counts["all"]


def test_evaluate_structure_and_weighting(tiny_corpus, tiny_model_config):
    model = build_model(tiny_model_config, rng_seed=3)
    report = evaluate(model, tiny_corpus, split="test")
    report.validate()
    counts = report.counts
    assert counts["all"] == counts["real"] + counts["fake"]
    assert set(report.tag_names()) == {r.source_tag for r in tiny_corpus.split_records("test")}
    weighted = (
        report.acc_real * counts["real"] + report.acc_fake * counts["fake"]
    ) / counts["all"]
    assert abs(report.acc_all - weighted) <= 1e-12
    tag_total = sum(counts[t] for t in report.tag_names())
    assert tag_total == counts["all"]


def test_evaluate_split_merge_identity(tiny_corpus, tiny_model_config):
    model = build_model(tiny_model_config, rng_seed=4)
    rep_val = evaluate(model, tiny_corpus, split="val")
    rep_test = evaluate(model, tiny_corpus, split="test")
    merged = tiny_corpus.with_splits(
        ["test" if r.split in ("val", "test") else "train" for r in tiny_corpus.records]
    )
    rep_merged = evaluate(model, merged, split="test")
    n_val, n_test = rep_val.counts["all"], rep_test.counts["all"]
    pooled_acc = (rep_val.acc_all * n_val + rep_test.acc_all * n_test) / (n_val + n_test)
    pooled_iou = (rep_val.iou_all * n_val + rep_test.iou_all * n_test) / (n_val + n_test)
    assert abs(rep_merged.acc_all - pooled_acc) <= 1e-9
    assert abs(rep_merged.iou_all - pooled_iou) <= 1e-9


def test_evaluate_unknown_split(tiny_corpus, tiny_model_config):
    model = build_model(tiny_model_config, rng_seed=5)
    with pytest.raises(ValidationError):
        evaluate(model, tiny_corpus, split="holdout")


def test_evaluate_threshold_validation(tiny_corpus, tiny_model_config):
    model = build_model(tiny_model_config, rng_seed=5)
    with pytest.raises(ValidationError):
        evaluate(model, tiny_corpus, split="test", threshold_det=1.0)


# ---------------------------------------------------------------------------
# reports and comparison tables
# ---------------------------------------------------------------------------


def _report(acc=0.9, iou_v=0.8, with_seg=True):
    return MetricsReport(
        counts={"all": 10, "real": 5, "fake": 5, "spliced-partial": 5},
        acc_all=acc,
        acc_real=acc,
        acc_fake=acc,
        acc_per_tag={"spliced-partial": acc},
        iou_all=iou_v if with_seg else None,
        iou_real=iou_v if with_seg else None,
        iou_fake=iou_v if with_seg else None,
        iou_per_tag={"spliced-partial": iou_v} if with_seg else {},
        threshold_det=0.5,
        threshold_seg=0.5,
    )


def test_report_save_load_round_trip(tmp_path):
    rep = _report()
    path = tmp_path / "report.json"
    rep.save(path)
    assert MetricsReport.load(path) == rep


def test_report_validate_rejects_out_of_range():
    with pytest.raises(ValidationError):
        _report(acc=1.5).validate()


def test_compare_runs_three_rows_with_missing_columns():
    table = compare_runs(
        [_report(0.9), _report(0.8, with_seg=False), _report(0.7)],
        labels=["joint", "no-seg", "no-det"],
    )
    text = table.to_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not set(ln.strip()) <= {"-", " "}]
    assert len(lines) == 4  # header + three rows
    assert "joint" in lines[1] and "no-seg" in lines[2] and "no-det" in lines[3]
    assert "--" in lines[2]  # missing IoU renders as placeholder
    assert "Acc-All" in lines[0] and "IoU-All" in lines[0]


def test_compare_runs_duplicate_report_identical_rows():
    rep = _report()
    table = compare_runs([rep, rep], labels=["a", "b"])
    rows = table.to_dict()["rows"]
    assert rows[0]["cells"] == rows[1]["cells"]


def test_compare_runs_errors():
    with pytest.raises(ValidationError):
        compare_runs([])
    with pytest.raises(ValidationError):
        compare_runs([_report()])
    with pytest.raises(ValidationError):
        compare_runs([_report(), _report()], labels=["only-one"])
    other = _report()
    other.counts = {"all": 4, "real": 2, "fake": 2, "copy-move": 2}
    other.acc_per_tag = {"copy-move": 0.5}
    other.iou_per_tag = {"copy-move": 0.5}
    with pytest.raises(ValidationError):
        compare_runs([_report(), other])


def test_format_table_alignment():
    text = format_table([_report(), _report(0.75, with_seg=False)], ["run-a", "run-b"])
    lines = [ln for ln in text.splitlines() if ln.strip() and not set(ln.strip()) <= {"-", " "}]
    assert all(len(ln.rstrip()) <= len(lines[0]) for ln in lines[1:])
    assert "run-a" in lines[1] and "run-b" in lines[2]


def test_comparison_table_save(tmp_path):
    table = compare_runs([_report(), _report(0.6)], labels=["x", "y"])
    out = tmp_path / "table.json"
    table.save(out)
    assert out.exists() and "rows" in out.read_text()
