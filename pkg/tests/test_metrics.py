from __future__ import annotations

import math

import pytest

from conftest import f1_files, snapshot_from_files
from oracle import brute_force_final_allow, brute_force_rule_boxes, random_snapshot
from sebox.boxes import decompose_snapshot
from sebox.errors import (
    FewerThanTwoRows,
    InvalidKeyword,
    NonPositiveValue,
    SegmentTooSmall,
)
from sebox.metrics import (
    AgePosition,
    AgeRecord,
    MetricsRow,
    boxes_per_rule_histogram,
    delta_series,
    fit_exponential,
    keyword_filter_metrics,
    metrics_csv_header,
    metrics_csv_row,
    parse_metrics_csv,
    rules_per_box_histogram,
    snapshot_metrics,
    type_age_cdf,
)
from sebox.model import RuleKind


def metrics_for(snapshot):
    return snapshot_metrics(snapshot, decompose_snapshot(snapshot, strict=True))


# --- snapshot metrics -----------------------------------------------------------


def test_snapshot_metrics_three_rules(f1_rules3):
    row = metrics_for(f1_rules3)
    assert row.num_allow_rules == 3
    assert row.num_neverallow_rules == 0
    assert row.num_boxes == 11
    assert row.num_types == 5
    assert row.num_classes == 2
    assert row.num_permissions == 7
    # per-rule box counts 2 + 3 + 6
    assert row.avg_boxes_per_rule == pytest.approx(11 / 3)
    assert row.avg_defined


def test_snapshot_metrics_empty(f1_empty):
    row = metrics_for(f1_empty)
    assert row.num_allow_rules == 0
    assert row.num_boxes == 0
    assert row.avg_boxes_per_rule == 0.0
    assert not row.avg_defined
    assert row.coverage_ratio == 0.0


def test_snapshot_metrics_subtraction_coverage(f1_subtraction):
    row = metrics_for(f1_subtraction)
    assert row.num_boxes == 1
    assert row.num_allow_rules == 1
    assert row.num_neverallow_rules == 1
    # allow and neverallow together name 2 of the 175 universe boxes
    assert row.coverage_ratio == pytest.approx(2 / 175)


# --- histograms -------------------------------------------------------------------


def test_bpr_histogram_three_rules(f1_rules3):
    hist = boxes_per_rule_histogram(decompose_snapshot(f1_rules3, strict=True))
    assert hist["2-9"] == 3
    assert hist["1"] == 0
    assert sum(hist.values()) == 3


def test_bpr_histogram_single_box_rule():
    snap = snapshot_from_files(f1_files("allow init zygote_tmpfs:dir search;\n"))
    hist = boxes_per_rule_histogram(decompose_snapshot(snap, strict=True))
    assert hist["1"] == 1
    assert sum(hist.values()) == 1


def test_bpr_histogram_zero_rules(f1_empty):
    hist = boxes_per_rule_histogram(decompose_snapshot(f1_empty, strict=True))
    assert all(v == 0 for v in hist.values())


def test_rpb_histogram_duplicate_rule():
    rules = "allow appdomain zygote_tmpfs:file read;\nallow appdomain zygote_tmpfs:file read;\n"
    snap = snapshot_from_files(f1_files(rules))
    hist = rules_per_box_histogram(decompose_snapshot(snap, strict=True))
    assert hist == {2: 2}


def test_rpb_histogram_disjoint_rules(f1_rules3):
    assert rules_per_box_histogram(decompose_snapshot(f1_rules3, strict=True)) == {}


def test_rpb_histogram_three_way_overlap():
    rules = (
        "allow init system_file:dir search;\n"
        "allow domain system_file:dir search;\n"
        "allow init file_type:dir search;\n"
    )
    snap = snapshot_from_files(f1_files(rules))
    hist = rules_per_box_histogram(decompose_snapshot(snap, strict=True))
    assert hist == {3: 1}


def test_histogram_conservation_random():
    for seed in range(40):
        snap = random_snapshot(seed)
        deco = decompose_snapshot(snap, strict=True)
        hist = boxes_per_rule_histogram(deco)
        n_allow = sum(1 for r in snap.rules if r.kind is RuleKind.ALLOW)
        assert sum(hist.values()) == n_allow
        rpb = rules_per_box_histogram(deco)
        assert sum(rpb.values()) <= len(deco.final_allow)
        row = snapshot_metrics(snap, deco)
        assert 0.0 <= row.coverage_ratio <= 1.0


# --- deltas -----------------------------------------------------------------------


def _row(rules: int, boxes: int, index: int = 0) -> MetricsRow:
    return MetricsRow(
        commit=f"c{index}", commit_index=index, num_allow_rules=rules, num_boxes=boxes
    )


def test_delta_positive_ratio():
    deltas, mean = delta_series([_row(3, 9, 0), _row(4, 15, 1)])
    assert deltas[0].delta_rules == 1
    assert deltas[0].delta_boxes == 6
    assert deltas[0].ratio == 6
    assert mean == 6


def test_delta_undefined_ratio():
    deltas, mean = delta_series([_row(3, 9, 0), _row(3, 12, 1)])
    assert deltas[0].ratio is None
    assert mean is None


def test_delta_negative_ratio():
    deltas, _ = delta_series([_row(3, 9, 0), _row(2, 12, 1)])
    assert deltas[0].ratio == -3


def test_delta_requires_two_rows():
    with pytest.raises(FewerThanTwoRows):
        delta_series([_row(3, 9)])


def test_delta_antisymmetry():
    rows = [_row(3, 9, 0), _row(4, 15, 1), _row(2, 30, 2), _row(2, 10, 3)]
    fwd, _ = delta_series(rows)
    rev, _ = delta_series(list(reversed(rows)))
    assert [(d.delta_rules, d.delta_boxes) for d in rev] == [
        (-d.delta_rules, -d.delta_boxes) for d in reversed(fwd)
    ]


def test_delta_include_neverallow_flag():
    a = MetricsRow(num_allow_rules=3, num_neverallow_rules=1, num_boxes=9)
    b = MetricsRow(num_allow_rules=3, num_neverallow_rules=3, num_boxes=12)
    deltas, _ = delta_series([a, b], include_neverallow=True)
    assert deltas[0].delta_rules == 2
    assert deltas[0].ratio == pytest.approx(1.5)


# --- type age ---------------------------------------------------------------------


class _Tokens:
    def __init__(self, subject=(), object=()):
        self.subject = frozenset(subject)
        self.object = frozenset(object)


def test_age_untouched_since_intro():
    history = {0: _Tokens(subject={"t"})}
    records, cdf = type_age_cdf(history, 99, {"t"}, AgePosition.SUBJECT)
    assert records == [AgeRecord("t", AgePosition.SUBJECT, 0, 99)]
    assert cdf == [(99, 1.0)]


def test_age_uses_latest_touch():
    history = {3: _Tokens(subject={"t"}), 40: _Tokens(subject={"t"})}
    records, _ = type_age_cdf(history, 50, {"t"}, AgePosition.SUBJECT)
    assert records[0].age == 10


def test_age_renamed_type():
    # commit 2 renames old -> new: old's tokens stop at 2, new appears at 2
    history = {
        0: _Tokens(subject={"old"}),
        2: _Tokens(subject={"old", "new"}),
    }
    records, _ = type_age_cdf(history, 5, {"new"}, AgePosition.SUBJECT)
    assert [r.type_name for r in records] == ["new"]
    assert records[0].age == 3


def test_age_position_split():
    history = {1: _Tokens(subject={"s"}, object={"o"})}
    subj, _ = type_age_cdf(history, 4, {"s", "o"}, AgePosition.SUBJECT)
    obj, _ = type_age_cdf(history, 4, {"s", "o"}, AgePosition.OBJECT)
    assert [r.type_name for r in subj] == ["s"]
    assert [r.type_name for r in obj] == ["o"]


def test_age_cdf_monotone_ends_at_one():
    history = {
        0: _Tokens(subject={"a", "b"}),
        5: _Tokens(subject={"b", "c"}),
        9: _Tokens(subject={"c", "d"}),
    }
    _, cdf = type_age_cdf(history, 10, {"a", "b", "c", "d"}, AgePosition.SUBJECT)
    fracs = [f for _, f in cdf]
    assert fracs == sorted(fracs)
    assert fracs[-1] == 1.0
    ages = [a for a, _ in cdf]
    assert ages == sorted(ages)


# --- exponential fit ---------------------------------------------------------------


def test_fit_noiseless_exact():
    points = [(i, 2.0 * math.exp(0.1 * i)) for i in range(51)]
    segments = fit_exponential(points)
    assert len(segments) == 1
    seg = segments[0]
    assert abs(seg.b - 0.1) < 1e-9
    assert abs(seg.ln_a - math.log(2)) < 1e-9
    assert seg.rms_residual < 1e-9
    assert seg.start_index == 0 and seg.end_index == 50


def test_fit_with_breakpoint():
    points = [(i, 2.0 * math.exp(0.1 * i)) for i in range(51)]
    segments = fit_exponential(points, breakpoints=[25])
    assert len(segments) == 2
    assert all(abs(s.b - 0.1) < 1e-9 for s in segments)
    assert segments[0].end_index == 24
    assert segments[1].start_index == 25


def test_fit_scale_invariance():
    points = [(i, 3.0 * math.exp(0.05 * i)) for i in range(30)]
    scaled = [(i, 7.5 * v) for i, v in points]
    base = fit_exponential(points)[0]
    shifted = fit_exponential(scaled)[0]
    assert abs(shifted.b - base.b) < 1e-9
    assert abs(shifted.ln_a - (base.ln_a + math.log(7.5))) < 1e-9


def test_fit_rejects_nonpositive():
    with pytest.raises(NonPositiveValue):
        fit_exponential([(0, 1.0), (1, 0.0), (2, 3.0)])


def test_fit_rejects_small_segment():
    with pytest.raises(SegmentTooSmall):
        fit_exponential([(0, 1.0), (1, 2.0)])
    with pytest.raises(SegmentTooSmall):
        fit_exponential([(i, float(i + 1)) for i in range(10)], breakpoints=[9])


def test_fit_rejects_bad_breakpoints():
    points = [(i, float(i + 1)) for i in range(10)]
    with pytest.raises(ValueError):
        fit_exponential(points, breakpoints=[5, 5])
    with pytest.raises(ValueError):
        fit_exponential(points, breakpoints=[0])
    with pytest.raises(ValueError):
        fit_exponential(points, breakpoints=[10])


# --- keyword filter ----------------------------------------------------------------


def test_keyword_filter_zygote(f1_rules3):
    deco = decompose_snapshot(f1_rules3, strict=True)
    boxes, rules = keyword_filter_metrics(deco, ["zygote"])
    # independent scan over the brute-force box dump: rule 1 contributes two
    # zygote_tmpfs boxes and the ~write rule three more (read/open/execute)
    oracle_boxes = {
        b for b in brute_force_final_allow(f1_rules3) if "zygote" in b.subject or "zygote" in b.object
    }
    oracle_rules = {
        r.rule_id
        for r in f1_rules3.rules
        if r.kind is RuleKind.ALLOW
        and brute_force_rule_boxes(r, f1_rules3) & oracle_boxes
    }
    assert boxes == len(oracle_boxes) == 5
    assert rules == len(oracle_rules) == 2


def test_keyword_filter_no_match(f1_rules3):
    deco = decompose_snapshot(f1_rules3, strict=True)
    assert keyword_filter_metrics(deco, ["nomatch"]) == (0, 0)


def test_keyword_filter_rejects_empty(f1_rules3):
    deco = decompose_snapshot(f1_rules3, strict=True)
    with pytest.raises(InvalidKeyword):
        keyword_filter_metrics(deco, [])
    with pytest.raises(InvalidKeyword):
        keyword_filter_metrics(deco, [""])


# --- CSV round trip ----------------------------------------------------------------


def test_metrics_csv_round_trip(f1_rules3):
    row = metrics_for(f1_rules3)
    row.commit = "a" * 40
    row.commit_index = 7
    row.author_timestamp = 1_500_000_000
    text = "\n".join(metrics_csv_header() + [metrics_csv_row(row)])
    [(parsed, status)] = parse_metrics_csv(text)
    assert status == "ok"
    assert parsed.commit == row.commit
    assert parsed.num_boxes == row.num_boxes
    assert parsed.bpr_histogram == row.bpr_histogram
    assert parsed.rpb_histogram == row.rpb_histogram
    assert parsed.avg_boxes_per_rule == pytest.approx(row.avg_boxes_per_rule, rel=1e-5)


def test_metrics_csv_failed_row():
    row = MetricsRow(commit="b" * 40, commit_index=3)
    text = "\n".join(metrics_csv_header() + [metrics_csv_row(row, status="failed")])
    [(parsed, status)] = parse_metrics_csv(text)
    assert status == "failed"
    assert parsed.commit == row.commit


def test_metrics_json_round_trip(f1_rules3):
    row = metrics_for(f1_rules3)
    row.commit = "c" * 40
    clone = MetricsRow.from_json_dict(row.to_json_dict())
    assert clone == row
