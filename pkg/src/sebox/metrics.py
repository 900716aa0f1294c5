"""Per-snapshot and cross-commit complexity metrics.

Covers the full report surface: rule/box/type counts, boxes-per-rule and
rules-per-box histograms, commit-to-commit deltas, type-age CDFs, segmented
exponential growth fits, keyword-filtered counts, and the neverallow
coverage ratio. Everything here is pure over immutable inputs; CSV encoding
is deterministic byte-for-byte.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .boxes import DecompositionResult
from .errors import (
    FewerThanTwoRows,
    InvalidKeyword,
    NonPositiveValue,
    SegmentTooSmall,
)
from .model import RuleKind
from .parser import PolicySnapshot

# boxes-per-rule bins: log-decade buckets plus exact 0/1. The 0 bin keeps
# the histogram total equal to the allow-rule count when a rule resolves to
# no boxes at all.
BPR_BINS = ("0", "1", "2-9", "10-99", "100-999", "1000-9999", "10000-99999", ">=100000")


def bpr_bin(count: int) -> str:
    if count <= 1:
        return str(count)
    for bound, label in (
        (10, "2-9"),
        (100, "10-99"),
        (1000, "100-999"),
        (10000, "1000-9999"),
        (100000, "10000-99999"),
    ):
        if count < bound:
            return label
    return ">=100000"


@dataclass
class MetricsRow:
    """One snapshot's metric vector; commit fields unset in --dir mode."""

    commit: str | None = None
    commit_index: int | None = None
    author_timestamp: int | None = None
    num_allow_rules: int = 0
    num_neverallow_rules: int = 0
    num_boxes: int = 0
    num_types: int = 0
    num_classes: int = 0
    num_permissions: int = 0
    avg_boxes_per_rule: float = 0.0
    avg_defined: bool = False
    coverage_ratio: float = 0.0
    bpr_histogram: dict[str, int] = field(default_factory=dict)
    rpb_histogram: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "commit": self.commit,
            "commit_index": self.commit_index,
            "author_timestamp": self.author_timestamp,
            "num_allow_rules": self.num_allow_rules,
            "num_neverallow_rules": self.num_neverallow_rules,
            "num_boxes": self.num_boxes,
            "num_types": self.num_types,
            "num_classes": self.num_classes,
            "num_permissions": self.num_permissions,
            "avg_boxes_per_rule": self.avg_boxes_per_rule,
            "avg_defined": self.avg_defined,
            "coverage_ratio": self.coverage_ratio,
            "bpr_histogram": dict(self.bpr_histogram),
            "rpb_histogram": {str(k): v for k, v in sorted(self.rpb_histogram.items())},
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "MetricsRow":
        row = cls(**{k: data[k] for k in data if k not in ("bpr_histogram", "rpb_histogram")})
        row.bpr_histogram = dict(data.get("bpr_histogram", {}))
        row.rpb_histogram = {int(k): v for k, v in data.get("rpb_histogram", {}).items()}
        return row


def format_rational(value: float) -> str:
    """Decimal with 6 significant digits, the CSV contract for rationals."""
    return f"{value:.6g}"


def snapshot_metrics(snapshot: PolicySnapshot, decomposition: DecompositionResult) -> MetricsRow:
    """Populate every count field from one snapshot's decomposition."""
    allow_rules = [r for r in snapshot.rules if r.kind is RuleKind.ALLOW]
    never_rules = [r for r in snapshot.rules if r.kind is RuleKind.NEVERALLOW]

    per_rule = decomposition.allow.rule_box_counts()
    total_allow_boxes = sum(per_rule.get(r.rule_id, 0) for r in allow_rules)

    num_types = len(snapshot.concrete_types)
    num_permissions = snapshot.catalog.total_permissions()
    universe = num_types * num_types * num_permissions
    named = len(decomposition.allow.boxes | decomposition.neverallow.boxes)

    avg_defined = bool(allow_rules)
    avg = total_allow_boxes / len(allow_rules) if allow_rules else 0.0

    return MetricsRow(
        num_allow_rules=len(allow_rules),
        num_neverallow_rules=len(never_rules),
        num_boxes=len(decomposition.final_allow),
        num_types=num_types,
        num_classes=len(snapshot.catalog),
        num_permissions=num_permissions,
        avg_boxes_per_rule=avg,
        avg_defined=avg_defined,
        coverage_ratio=named / universe if universe else 0.0,
        bpr_histogram=boxes_per_rule_histogram(decomposition),
        rpb_histogram=rules_per_box_histogram(decomposition),
    )


def boxes_per_rule_histogram(decomposition: DecompositionResult) -> dict[str, int]:
    """Allow rules bucketed by how many boxes each produced (pre-dedup)."""
    hist = {label: 0 for label in BPR_BINS}
    per_rule = decomposition.allow.rule_box_counts()
    for rid, rule in decomposition.rules_by_id.items():
        if rule.kind is not RuleKind.ALLOW:
            continue
        hist[bpr_bin(per_rule.get(rid, 0))] += 1
    return hist


def rules_per_box_histogram(decomposition: DecompositionResult) -> dict[int, int]:
    """final_allow boxes with >=2 contributing rules, bucketed by multiplicity.

    Single-rule boxes are the normal case and are deliberately not collected.
    """
    hist: dict[int, int] = {}
    for _, rids in decomposition.final_allow.origin_items():
        n = len(rids)
        if n >= 2:
            hist[n] = hist.get(n, 0) + 1
    return hist


# --- cross-commit series ------------------------------------------------------


@dataclass(frozen=True)
class DeltaRow:
    """Signed per-commit change; ratio is None when no rules changed."""

    commit: str | None
    commit_index: int | None
    delta_rules: int
    delta_boxes: int
    ratio: float | None


def delta_series(
    rows: Sequence[MetricsRow], include_neverallow: bool = False
) -> tuple[list[DeltaRow], float | None]:
    """Consecutive (delta_rules, delta_boxes, delta_boxes/delta_rules) rows.

    Negative ratios are legal (rules up while boxes down, or vice versa);
    the returned mean skips undefined entries.
    """
    if len(rows) < 2:
        raise FewerThanTwoRows(f"need at least 2 rows, got {len(rows)}")

    def rule_count(row: MetricsRow) -> int:
        n = row.num_allow_rules
        if include_neverallow:
            n += row.num_neverallow_rules
        return n

    deltas: list[DeltaRow] = []
    for prev, cur in zip(rows, rows[1:]):
        dr = rule_count(cur) - rule_count(prev)
        db = cur.num_boxes - prev.num_boxes
        deltas.append(
            DeltaRow(
                commit=cur.commit,
                commit_index=cur.commit_index,
                delta_rules=dr,
                delta_boxes=db,
                ratio=(db / dr) if dr != 0 else None,
            )
        )
    defined = [d.ratio for d in deltas if d.ratio is not None]
    mean = sum(defined) / len(defined) if defined else None
    return deltas, mean


# --- type age ------------------------------------------------------------------


class AgePosition(enum.Enum):
    SUBJECT = "subject"
    OBJECT = "object"


@dataclass(frozen=True)
class AgeRecord:
    type_name: str
    position: AgePosition
    last_changed_index: int
    age: int


def type_age_cdf(
    commit_history: Mapping[int, object],
    head_index: int,
    head_types: Iterable[str],
    position: AgePosition,
) -> tuple[list[AgeRecord], list[tuple[int, float]]]:
    """Ages of head-alive types, measured in commits since last textual touch.

    ``commit_history`` maps commit_index to an object with ``subject`` and
    ``object`` token sets (added/removed-line references from diffs). Types
    never referenced inside the walked range are omitted; declaration lines
    count toward both positions, so a full-history walk covers every type.
    """
    last_changed: dict[str, int] = {}
    for idx in sorted(commit_history):
        if idx > head_index:
            continue
        for token in getattr(commit_history[idx], position.value):
            last_changed[token] = idx

    records = [
        AgeRecord(t, position, last_changed[t], head_index - last_changed[t])
        for t in sorted(head_types)
        if t in last_changed
    ]
    ages = sorted(r.age for r in records)
    n = len(ages)
    cdf: list[tuple[int, float]] = []
    for i, age in enumerate(ages):
        if i + 1 < n and ages[i + 1] == age:
            continue
        cdf.append((age, (i + 1) / n))
    return records, cdf


# --- growth fits -----------------------------------------------------------------


@dataclass(frozen=True)
class FitSegment:
    """ln(value) = ln_a + b * index least-squares fit over one index range."""

    start_index: int
    end_index: int
    ln_a: float
    b: float
    rms_residual: float


def fit_exponential(
    points: Sequence[tuple[int, float]], breakpoints: Sequence[int] = ()
) -> list[FitSegment]:
    """Per-segment log-space least squares; breakpoints split the index axis.

    Segment k covers indices in [boundary_k, boundary_{k+1}); the last
    segment is closed on the right. Each segment needs >=3 points.
    """
    if not points:
        raise SegmentTooSmall("no points to fit")
    for idx, value in points:
        if value <= 0:
            raise NonPositiveValue(f"value at index {idx} is {value}; log fit needs > 0")
    xs = [idx for idx, _ in points]
    if sorted(xs) != xs:
        raise ValueError("points must be ordered by index")
    bps = list(breakpoints)
    if bps != sorted(set(bps)):
        raise ValueError("breakpoints must be strictly increasing")
    if bps and (bps[0] <= xs[0] or bps[-1] > xs[-1]):
        raise ValueError("breakpoints must be interior to the index range")

    boundaries = [xs[0]] + bps + [xs[-1] + 1]
    segments: list[FitSegment] = []
    for lo, hi in zip(boundaries, boundaries[1:]):
        seg = [(i, v) for i, v in points if lo <= i < hi]
        if len(seg) < 3:
            raise SegmentTooSmall(f"segment [{lo}, {hi}) has {len(seg)} points, needs >= 3")
        seg_x = np.array([i for i, _ in seg], dtype=float)
        seg_y = np.log(np.array([v for _, v in seg], dtype=float))
        b, ln_a = np.polyfit(seg_x, seg_y, 1)
        resid = seg_y - (ln_a + b * seg_x)
        segments.append(
            FitSegment(
                start_index=seg[0][0],
                end_index=seg[-1][0],
                ln_a=float(ln_a),
                b=float(b),
                rms_residual=float(math.sqrt(float(np.mean(resid * resid)))),
            )
        )
    return segments


# --- keyword filter ---------------------------------------------------------------


def keyword_filter_metrics(
    decomposition: DecompositionResult, keywords: Sequence[str]
) -> tuple[int, int]:
    """(box count, rule count) over final_allow boxes whose subject or object
    name contains any keyword."""
    if not keywords or any(k == "" for k in keywords):
        raise InvalidKeyword("keywords must be a non-empty list of non-empty substrings")
    matching_rules: set[int] = set()
    box_count = 0
    for box, rids in decomposition.final_allow.origin_items():
        if any(k in box.subject or k in box.object for k in keywords):
            box_count += 1
            matching_rules |= rids
    return box_count, len(matching_rules)


# --- CSV encoding ------------------------------------------------------------------

METRICS_SCHEMA = "# sebox metrics v1"
METRICS_COLUMNS = (
    "commit",
    "commit_index",
    "author_timestamp",
    "num_allow_rules",
    "num_neverallow_rules",
    "num_boxes",
    "num_types",
    "num_classes",
    "num_permissions",
    "avg_boxes_per_rule",
    "avg_defined",
    "coverage_ratio",
    *(f"bpr_{label.replace('-', '_').replace('>=', 'ge_')}" for label in BPR_BINS),
    "rpb",
    "status",
)

DELTA_SCHEMA = "# sebox deltas v1"
DELTA_COLUMNS = ("commit", "commit_index", "delta_rules", "delta_boxes", "ratio")

AGE_SCHEMA = "# sebox ages v1"
AGE_COLUMNS = ("type_name", "position", "last_changed_index", "age")

AGE_CDF_SCHEMA = "# sebox age-cdf v1"
AGE_CDF_COLUMNS = ("age", "cum_fraction")

FIT_SCHEMA = "# sebox fit v1"
FIT_COLUMNS = ("start_index", "end_index", "ln_a", "b", "rms_residual")

FILTER_SCHEMA = "# sebox filter v1"
FILTER_COLUMNS = ("commit", "commit_index", "filtered_boxes", "filtered_rules")

CONTRIB_SCHEMA = "# sebox contributors v1"


def _encode_rpb(hist: Mapping[int, int]) -> str:
    return ";".join(f"{k}={hist[k]}" for k in sorted(hist))


def _decode_rpb(cell: str) -> dict[int, int]:
    if not cell:
        return {}
    out: dict[int, int] = {}
    for pair in cell.split(";"):
        k, v = pair.split("=")
        out[int(k)] = int(v)
    return out


def metrics_csv_header() -> list[str]:
    return [METRICS_SCHEMA, ",".join(METRICS_COLUMNS)]


def metrics_csv_row(row: MetricsRow, status: str = "ok") -> str:
    cells = [
        row.commit or "",
        "" if row.commit_index is None else str(row.commit_index),
        "" if row.author_timestamp is None else str(row.author_timestamp),
    ]
    if status == "ok":
        cells += [
            str(row.num_allow_rules),
            str(row.num_neverallow_rules),
            str(row.num_boxes),
            str(row.num_types),
            str(row.num_classes),
            str(row.num_permissions),
            format_rational(row.avg_boxes_per_rule),
            "1" if row.avg_defined else "0",
            format_rational(row.coverage_ratio),
            *(str(row.bpr_histogram.get(label, 0)) for label in BPR_BINS),
            _encode_rpb(row.rpb_histogram),
        ]
    else:
        cells += [""] * (len(METRICS_COLUMNS) - 4)
    cells.append(status)
    return ",".join(cells)


def parse_metrics_csv(text: str) -> list[tuple[MetricsRow, str]]:
    """Inverse of metrics_csv_row; skips comment lines, returns (row, status)."""
    out: list[tuple[MetricsRow, str]] = []
    header_seen = False
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != ",".join(METRICS_COLUMNS):
                raise ValueError(f"unexpected metrics CSV header: {line!r}")
            header_seen = True
            continue
        cells = line.split(",")
        if len(cells) != len(METRICS_COLUMNS):
            raise ValueError(f"bad metrics CSV row: {line!r}")
        status = cells[-1]
        row = MetricsRow(
            commit=cells[0] or None,
            commit_index=int(cells[1]) if cells[1] else None,
            author_timestamp=int(cells[2]) if cells[2] else None,
        )
        if status == "ok":
            row.num_allow_rules = int(cells[3])
            row.num_neverallow_rules = int(cells[4])
            row.num_boxes = int(cells[5])
            row.num_types = int(cells[6])
            row.num_classes = int(cells[7])
            row.num_permissions = int(cells[8])
            row.avg_boxes_per_rule = float(cells[9])
            row.avg_defined = cells[10] == "1"
            row.coverage_ratio = float(cells[11])
            row.bpr_histogram = {
                label: int(cells[12 + i]) for i, label in enumerate(BPR_BINS)
            }
            row.rpb_histogram = _decode_rpb(cells[12 + len(BPR_BINS)])
        out.append((row, status))
    return out


def delta_csv_lines(deltas: Sequence[DeltaRow], mean: float | None) -> list[str]:
    lines = [DELTA_SCHEMA, ",".join(DELTA_COLUMNS)]
    for d in deltas:
        ratio = "" if d.ratio is None else format_rational(d.ratio)
        lines.append(
            ",".join(
                [
                    d.commit or "",
                    "" if d.commit_index is None else str(d.commit_index),
                    str(d.delta_rules),
                    str(d.delta_boxes),
                    ratio,
                ]
            )
        )
    lines.append(f"# mean_ratio {'undefined' if mean is None else format_rational(mean)}")
    return lines


def age_csv_lines(records: Sequence[AgeRecord]) -> list[str]:
    lines = [AGE_SCHEMA, ",".join(AGE_COLUMNS)]
    for r in records:
        lines.append(f"{r.type_name},{r.position.value},{r.last_changed_index},{r.age}")
    return lines


def age_cdf_csv_lines(points: Sequence[tuple[int, float]]) -> list[str]:
    lines = [AGE_CDF_SCHEMA, ",".join(AGE_CDF_COLUMNS)]
    for age, frac in points:
        lines.append(f"{age},{format_rational(frac)}")
    return lines


def fit_csv_lines(segments: Sequence[FitSegment]) -> list[str]:
    lines = [FIT_SCHEMA, ",".join(FIT_COLUMNS)]
    for s in segments:
        lines.append(
            f"{s.start_index},{s.end_index},{format_rational(s.ln_a)},"
            f"{format_rational(s.b)},{format_rational(s.rms_residual)}"
        )
    return lines
