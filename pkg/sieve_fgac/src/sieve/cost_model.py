"""
Selectivity estimation and the cost formulas that drive guard generation, guard
selection, execution-strategy choice and the inline-versus-Δ decision.

Cost units are abstract. Only their ratios matter, so calibration normalises every
constant against the per-policy evaluation cost ``c_e``.
"""

import math
import os
import time as _time
from bisect import bisect_left, bisect_right
from collections import Counter
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from sieve_fgac.src.sieve.errors import (
    CalibrationError,
    ContractViolation,
    IncomparableValuesError,
)
from sieve_fgac.src.sieve.policy import (
    ObjectCondition,
    Operator,
    Policy,
    Row,
    eval_object_conditions,
)
from sieve_fgac.src.sieve.values import Interval, Value, ValueTag, to_ordinal, value_tag

if TYPE_CHECKING:
    from sieve_fgac.src.sieve.engine import Engine

DEFAULT_BUCKETS = 64


class ExecMode(Enum):
    INLINE = "inline"
    DELTA = "delta"


class Strategy(Enum):
    INDEX_GUARDS = "IndexGuards"
    INDEX_QUERY = "IndexQuery"
    LINEAR_SCAN = "LinearScan"
    BASELINE_P = "Baseline_P"
    BASELINE_I = "Baseline_I"
    BASELINE_U = "Baseline_U"


@dataclass(frozen=True)
class CostConstants:
    """
    :var c_e: cost of evaluating one tuple against one policy
    :var c_r: cost of one random tuple read
    :var alpha: average number of policies checked per tuple; ``None`` falls back to
        ``min(partition_size, 4)``
    :var udf_inv: fixed cost of one Δ invocation
    :var udf_exec: Δ cost per candidate policy
    :var seq_ratio: how many sequential reads cost as much as one random read
    """

    c_e: float = 1.0
    c_r: float = 9.0
    alpha: Optional[float] = None
    udf_inv: float = 420.0
    udf_exec: float = 0.5
    seq_ratio: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None and f.name == "alpha":
                continue
            if value is None or value <= 0:
                raise ContractViolation(f"Cost constant {f.name} must be positive, got {value}")

    def alpha_for(self, partition_size: int) -> float:
        if self.alpha is not None:
            return self.alpha
        return float(min(partition_size, 4))

    @property
    def merge_threshold(self) -> float:
        return self.c_e / (self.c_r + self.c_e)

    def to_file(self, path: str) -> None:
        lines = [
            f"c_e={self.c_e!r}",
            f"c_r={self.c_r!r}",
        ]
        if self.alpha is not None:
            lines.append(f"alpha_default={self.alpha!r}")
        lines += [
            f"udf_inv={self.udf_inv!r}",
            f"udf_exec={self.udf_exec!r}",
            f"seq_ratio={self.seq_ratio!r}",
        ]
        with open(os.path.expanduser(path), "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: str) -> "CostConstants":
        known = {"c_e", "c_r", "alpha_default", "udf_inv", "udf_exec", "seq_ratio"}
        values = {}
        try:
            with open(os.path.expanduser(path)) as f:
                for number, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    key, sep, raw = line.partition("=")
                    key = key.strip()
                    if not sep or key not in known:
                        raise CalibrationError(f"{path}:{number}: unexpected entry '{line}'")
                    values["alpha" if key == "alpha_default" else key] = float(raw)
        except OSError as e:
            raise CalibrationError(f"Cannot read calibration file {path}: {e}") from e
        except ValueError as e:
            raise CalibrationError(f"{path}: {e}") from e
        try:
            return cls(**values)
        except ContractViolation as e:
            raise CalibrationError(str(e)) from e

    def to_dict(self) -> dict:
        return asdict(self)


class _NumericHistogram:
    """Equi-depth buckets over ordinal-mapped values."""

    def __init__(self, tag: ValueTag, ordinals: Sequence[float], buckets: int):
        self.tag = tag
        x = np.sort(np.asarray(ordinals, dtype=float))
        self.total = float(len(x))
        edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, buckets + 1)))
        self.degenerate = len(edges) < 2
        if self.degenerate:
            self.edges = np.array([edges[0], edges[0]])
            self.counts = np.array([self.total])
            self.distinct = np.array([1.0])
        else:
            self.edges = edges
            self.counts = np.histogram(x, bins=edges)[0].astype(float)
            self.distinct = np.histogram(np.unique(x), bins=edges)[0].astype(float)

    @property
    def buckets(self) -> int:
        return len(self.counts)

    def point(self, value: Value) -> float:
        v = to_ordinal(value)
        if self.degenerate:
            return self.total if v == self.edges[0] else 0.0
        if v < self.edges[0] or v > self.edges[-1]:
            return 0.0
        i = min(int(np.searchsorted(self.edges, v, side="right")) - 1, self.buckets - 1)
        if self.distinct[i] == 0:
            return 0.0
        return float(self.counts[i] / self.distinct[i])

    def interval(self, interval: Interval) -> float:
        a = -math.inf if interval.lo is None else to_ordinal(interval.lo)
        b = math.inf if interval.hi is None else to_ordinal(interval.hi)
        if self.tag.is_discrete:
            if interval.lo is not None:
                a += -0.5 if interval.lo_closed else 0.5
            if interval.hi is not None:
                b += 0.5 if interval.hi_closed else -0.5
        if a >= b:
            return 0.0
        if self.degenerate:
            return self.total if a <= self.edges[0] <= b else 0.0
        lower = np.maximum(self.edges[:-1], a)
        upper = np.minimum(self.edges[1:], b)
        widths = self.edges[1:] - self.edges[:-1]
        fractions = np.clip((upper - lower) / widths, 0.0, 1.0)
        return float((fractions * self.counts).sum())

    def summary(self) -> dict:
        return {
            "tag": self.tag.value,
            "buckets": self.buckets,
            "rows": int(self.total),
            "distinct": int(self.distinct.sum()),
        }


class _CategoricalHistogram:
    """Exact counts for text attributes."""

    def __init__(self, values: Iterable[str]):
        self.tag = ValueTag.TEXT
        self.counter = Counter(values)
        self.values = sorted(self.counter)
        self.prefix = [0]
        for v in self.values:
            self.prefix.append(self.prefix[-1] + self.counter[v])
        self.total = float(self.prefix[-1])

    def point(self, value: str) -> float:
        return float(self.counter.get(value, 0))

    def interval(self, interval: Interval) -> float:
        if interval.lo is None:
            start = 0
        elif interval.lo_closed:
            start = bisect_left(self.values, interval.lo)
        else:
            start = bisect_right(self.values, interval.lo)
        if interval.hi is None:
            end = len(self.values)
        elif interval.hi_closed:
            end = bisect_right(self.values, interval.hi)
        else:
            end = bisect_left(self.values, interval.hi)
        return float(max(0, self.prefix[end] - self.prefix[start])) if end > start else 0.0

    def summary(self) -> dict:
        return {
            "tag": self.tag.value,
            "buckets": len(self.values),
            "rows": int(self.total),
            "distinct": len(self.values),
        }


class SelectivityEstimator:
    """
    Per-attribute histograms over one relation. Attributes without a histogram are
    estimated at the full relation size.
    """

    def __init__(self, row_count: int, histograms: Optional[Mapping[str, object]] = None):
        self.row_count = float(row_count)
        self.histograms = dict(histograms or {})

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[Mapping[str, Value]],
        attributes: Iterable[str],
        buckets: int = DEFAULT_BUCKETS,
    ) -> "SelectivityEstimator":
        histograms = {}
        for attribute in attributes:
            values = [r[attribute] for r in rows if attribute in r]
            if not values:
                continue
            tag = value_tag(values[0])
            if tag is ValueTag.TEXT:
                histograms[attribute] = _CategoricalHistogram(values)
            else:
                histograms[attribute] = _NumericHistogram(
                    tag, [to_ordinal(v) for v in values], buckets
                )
        return cls(len(rows), histograms)

    def _histogram(self, attribute: str, sample: Value):
        histogram = self.histograms.get(attribute)
        if histogram is not None and value_tag(sample) is not histogram.tag:
            raise IncomparableValuesError(
                f"Attribute '{attribute}' holds {histogram.tag.value} values, got {sample!r}"
            )
        return histogram

    def estimate_interval(self, attribute: str, interval: Interval) -> float:
        if interval.is_empty:
            return 0.0
        sample = interval.lo if interval.lo is not None else interval.hi
        if sample is None:
            return self.row_count
        histogram = self._histogram(attribute, sample)
        if histogram is None:
            return self.row_count
        if interval.is_point:
            return self._clamp(histogram.point(interval.lo))
        return self._clamp(histogram.interval(interval))

    def estimate_cardinality(self, pred: ObjectCondition) -> float:
        if pred.is_derived or pred.attribute not in self.histograms:
            return self.row_count
        if pred.op in (Operator.IN, Operator.NOT_IN):
            histogram = self._histogram(pred.attribute, pred.value[0])
            matched = sum(histogram.point(v) for v in set(pred.value))
            if pred.op is Operator.IN:
                return self._clamp(matched)
            return self._clamp(self.row_count - matched)
        if pred.op is Operator.NE:
            histogram = self._histogram(pred.attribute, pred.value)
            return self._clamp(self.row_count - histogram.point(pred.value))
        return self.estimate_interval(pred.attribute, pred.interval())

    def _clamp(self, estimate: float) -> float:
        return min(max(estimate, 0.0), self.row_count)

    def summary(self) -> dict[str, dict]:
        return {attribute: h.summary() for attribute, h in sorted(self.histograms.items())}


def cost_eval_partition(partition_size: int, k: CostConstants) -> float:
    if partition_size < 0:
        raise ContractViolation("Partition size cannot be negative")
    return k.alpha_for(partition_size) * partition_size * k.c_e


def cost_guarded_expression(
    guard: ObjectCondition, partition_size: int, est: SelectivityEstimator, k: CostConstants
) -> float:
    return est.estimate_cardinality(guard) * (k.c_r + cost_eval_partition(partition_size, k))


def should_merge(
    x: ObjectCondition, y: ObjectCondition, est: SelectivityEstimator, k: CostConstants
) -> Optional[ObjectCondition]:
    """
    Returns the merged guard when merging x and y is cheaper than keeping both,
    otherwise None. Disjoint ranges never merge.
    """
    if x.attribute != y.attribute:
        raise ContractViolation(
            f"Cannot merge conditions on different attributes ({x.attribute}, {y.attribute})"
        )
    ix, iy = x.interval(), y.interval()
    if ix is None or iy is None:
        raise ContractViolation("Only point and range conditions can be merged")
    overlap = ix.intersection(iy)
    if overlap.is_empty:
        return None
    sel_overlap = est.estimate_interval(x.attribute, overlap)
    union = est.estimate_interval(x.attribute, ix) + est.estimate_interval(y.attribute, iy) - sel_overlap
    ratio = 1.0 if union <= 0 else sel_overlap / union
    if ratio > k.merge_threshold:
        return ObjectCondition.from_interval(x.attribute, ix.hull(iy))
    return None


def benefit_from_sel(sel: float, partition_size: int, row_count: float, k: CostConstants) -> float:
    return k.c_e * partition_size * (row_count - sel)


def utility_from_sel(sel: float, partition_size: int, row_count: float, k: CostConstants) -> float:
    read_cost = sel * k.c_r
    if read_cost <= 0:
        return math.inf
    return benefit_from_sel(sel, partition_size, row_count, k) / read_cost


def guard_benefit(
    guard: ObjectCondition, partition_size: int, est: SelectivityEstimator, k: CostConstants
) -> float:
    return benefit_from_sel(est.estimate_cardinality(guard), partition_size, est.row_count, k)


def guard_utility(
    guard: ObjectCondition, partition_size: int, est: SelectivityEstimator, k: CostConstants
) -> float:
    return utility_from_sel(est.estimate_cardinality(guard), partition_size, est.row_count, k)


class StrategyCosts(NamedTuple):
    linear_scan: float
    index_query: float
    index_guards: float

    @property
    def best(self) -> Strategy:
        # ties resolve in this order
        ranked = [
            (self.index_guards, 0, Strategy.INDEX_GUARDS),
            (self.index_query, 1, Strategy.INDEX_QUERY),
            (self.linear_scan, 2, Strategy.LINEAR_SCAN),
        ]
        return min(ranked)[2]

    def to_dict(self) -> dict:
        return {
            "linear_scan": self.linear_scan,
            "index_query": self.index_query,
            "index_guards": self.index_guards,
            "best": self.best.value,
        }


def strategy_costs(
    query_pred_sel: Optional[float],
    guards: Iterable[ObjectCondition],
    est: SelectivityEstimator,
    k: CostConstants,
) -> StrategyCosts:
    index_guards = sum(est.estimate_cardinality(g) * k.c_r for g in guards)
    index_query = math.inf if query_pred_sel is None else query_pred_sel * k.c_r
    linear_scan = est.row_count * k.c_r / k.seq_ratio
    return StrategyCosts(linear_scan, index_query, index_guards)


def choose_inline_or_delta(partition_size: int, k: CostConstants) -> ExecMode:
    delta_cost = k.udf_inv + k.udf_exec * partition_size
    if delta_cost < cost_eval_partition(partition_size, k):
        return ExecMode.DELTA
    return ExecMode.INLINE


def measure_alpha(policies: Sequence[Policy], rows: Iterable[Row]) -> float:
    """Average number of policies checked per row before the first match."""
    checked = []
    for row in rows:
        count = len(policies)
        for position, policy in enumerate(policies, start=1):
            if eval_object_conditions(policy.object_conditions, row):
                count = position
                break
        checked.append(count)
    if not checked:
        raise CalibrationError("Cannot measure alpha without sample rows")
    return float(np.mean(checked))


def _time_per_call(fn, repeat: int) -> float:
    start = _time.perf_counter()
    for _ in range(repeat):
        fn()
    return (_time.perf_counter() - start) / repeat


def calibrate(
    deterministic: bool = False,
    engine: Optional["Engine"] = None,
    relation: Optional[str] = None,
    policies: Optional[Sequence[Policy]] = None,
    sample_size: int = 200,
    seed: int = 0,
) -> CostConstants:
    """
    Derives cost constants.

    :param deterministic: return the fixed default constants (reproducible runs)
    :param engine: engine holding the sample relation; a synthetic one is built
        when omitted
    :param relation: relation to sample
    :param policies: sample policies; synthetic single-owner policies when omitted
    """
    if deterministic:
        return CostConstants()

    from sieve_fgac.src.sieve.engine import Engine
    from sieve_fgac.src.sieve.guard_generation import IndexCatalog

    rng = np.random.default_rng(seed)
    if engine is None or relation is None:
        relation = "calibration"
        engine = Engine(IndexCatalog({relation: ["value"]}))
        engine.load(
            relation,
            [
                {"id": i, "owner": int(rng.integers(0, 50)), "value": int(rng.integers(0, 10_000))}
                for i in range(5_000)
            ],
        )
    rel = engine.relation(relation)
    if not rel.rows:
        raise CalibrationError(f"Relation '{relation}' is empty")
    rows = [rel.rows[int(i)] for i in rng.integers(0, len(rel.rows), size=sample_size)]
    if not policies:
        policies = [
            Policy(
                id=i + 1,
                relation=relation,
                owner=row.owner,
                object_conditions=(ObjectCondition("owner", Operator.EQ, row.owner),),
                querier="calibration",
                purpose="calibration",
            )
            for i, row in enumerate(rows[:32])
        ]

    first = policies[0].object_conditions

    def evaluate_sample():
        for row in rows:
            eval_object_conditions(first, row)

    per_eval = _time_per_call(evaluate_sample, 5) / len(rows)

    index = rel.index("owner")
    lookups = [ObjectCondition("owner", Operator.EQ, row.owner) for row in rows]

    def random_reads():
        read = 0
        for owner in lookups:
            for position in index.lookup(owner):
                _ = rel.rows[position].attributes
                read += 1
        return read

    read_count = max(random_reads(), 1)
    per_random = _time_per_call(random_reads, 3) / read_count

    def sequential_reads():
        for row in rel.rows:
            _ = row.attributes

    per_sequential = _time_per_call(sequential_reads, 3) / len(rel.rows)

    def empty_invocation():
        for row in rows:
            [p for p in () if p.owner == row.owner]

    per_invocation = _time_per_call(empty_invocation, 5) / len(rows)

    def full_execution():
        for row in rows:
            [p for p in policies if p.owner == row.owner]

    per_execution = _time_per_call(full_execution, 5) / (len(rows) * len(policies))

    c_e = per_eval if per_eval > 0 else 1e-9
    try:
        return CostConstants(
            c_e=1.0,
            c_r=max(per_random / c_e, 1e-6),
            alpha=measure_alpha(policies, rows),
            udf_inv=max(per_invocation / c_e, 1e-6),
            udf_exec=max(per_execution / c_e, 1e-6),
            seq_ratio=max(per_random / per_sequential, 1.0) if per_sequential > 0 else 1.0,
        )
    except ContractViolation as e:
        raise CalibrationError(f"Calibration produced invalid constants: {e}") from e
