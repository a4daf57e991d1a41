"""Traffic-matrix series, network topologies, routing matrices and link loads.

Flows are ordered origin-major: for declared nodes (v0 .. v_{V-1}) the flow
from origin v_i to destination v_j sits at column i*V + j, i.e. a series row
is the row-major flattening of the V x V traffic matrix. Intra-node flows
(i == j) keep their columns so the flow count stays V^2; their routing
columns are all zero and downstream consumers treat them as unobservable.

All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import (
    MissingInputError,
    ParseError,
    RangeError,
    ShapeError,
    TopologyError,
    ValidationError,
)

SECONDS_PER_WEEK = 7 * 24 * 3600

ROUTING_POLICIES = ("deterministic", "ecmp")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Topology:
    """Directed network graph with a stable link ordering.

    ``links`` is a tuple of (src, dst, weight) triples; the position of a
    triple is its link index (0 .. m-1).
    """

    nodes: tuple[str, ...]
    links: tuple[tuple[str, str, float], ...]

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValidationError("topology declares no nodes")
        declared = set(self.nodes)
        if len(declared) != len(self.nodes):
            raise ValidationError("duplicate node ids in topology")
        seen_links: set[tuple[str, str]] = set()
        for src, dst, weight in self.links:
            if src == dst:
                raise ValidationError(f"self-loop link {src}->{dst} not allowed")
            if src not in declared or dst not in declared:
                raise ValidationError(f"link {src}->{dst} references an undeclared node")
            if not math.isfinite(weight) or weight <= 0:
                raise ValidationError(f"link {src}->{dst} has invalid weight {weight}")
            if (src, dst) in seen_links:
                raise ValidationError(f"duplicate link {src}->{dst}")
            seen_links.add((src, dst))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def num_flows(self) -> int:
        return len(self.nodes) ** 2

    def flow_pairs(self) -> list[tuple[str, str]]:
        """Origin-major list of all V^2 ordered node pairs."""
        return [(o, d) for o in self.nodes for d in self.nodes]

    def flow_index(self, origin: str, dest: str) -> int:
        i = self.nodes.index(origin)
        j = self.nodes.index(dest)
        return i * len(self.nodes) + j

    def link_index(self, src: str, dst: str) -> int:
        for idx, (s, d, _) in enumerate(self.links):
            if s == src and d == dst:
                return idx
        raise ValidationError(f"link {src}->{dst} not in topology")

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        for src, dst, weight in self.links:
            g.add_edge(src, dst, weight=weight)
        return g

    @classmethod
    def from_file(cls, path: str | Path) -> "Topology":
        """Parse a plain-text edge list: one ``src dst weight`` per line.

        Lines starting with ``#`` (and inline ``#`` comments) are ignored.
        Node order follows first appearance; links keep file order.
        """
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"topology file not found: {path}")
        nodes: list[str] = []
        links: list[tuple[str, str, float]] = []
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError(f"{path}:{lineno}: expected 'src dst [weight]', got {raw!r}")
            src, dst = parts[0], parts[1]
            try:
                weight = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
            for node in (src, dst):
                if node not in nodes:
                    nodes.append(node)
            links.append((src, dst, weight))
        return cls(nodes=tuple(nodes), links=tuple(links))


@dataclass(frozen=True)
class TrafficMatrixSeries:
    """Time-ordered sequence of flattened traffic matrices (T x n)."""

    values: np.ndarray
    interval: float = 300.0
    unit: str = "bytes"
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"series values must be 2-D (T x n), got shape {values.shape}")
        if values.size and not np.isfinite(values).all():
            raise ValidationError("series contains non-finite entries")
        if values.size and values.min() < 0:
            raise ValidationError("series contains negative entries")
        if self.interval <= 0:
            raise ValidationError(f"interval must be positive, got {self.interval}")
        ts = self.timestamps
        if ts is None:
            ts = np.arange(values.shape[0], dtype=np.float64) * self.interval
        else:
            ts = np.asarray(ts, dtype=np.float64)
            if ts.shape != (values.shape[0],):
                raise ShapeError("timestamps length must match number of rows")
            if ts.size > 1 and not (np.diff(ts) > 0).all():
                raise ValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "timestamps", _freeze(ts))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def num_timepoints(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RoutingMatrix:
    """m x n matrix mapping flows to links; entry (i, j) is the fraction of
    flow j carried on link i."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ShapeError(f"routing matrix must be 2-D, got shape {entries.shape}")
        if entries.size and (entries.min() < 0 or entries.max() > 1 + 1e-12):
            raise ValidationError("routing entries must lie in [0, 1]")
        object.__setattr__(self, "entries", _freeze(entries))

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def unobservable_flows(self) -> np.ndarray:
        """Boolean mask over flows whose routing column is all zero."""
        return ~(self.entries != 0).any(axis=0)


@dataclass(frozen=True)
class LinkLoadSeries:
    """Per-link aggregate traffic over time (T x m)."""

    values: np.ndarray
    interval: float = 300.0
    unit: str = "bytes"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"load values must be 2-D (T x m), got shape {values.shape}")
        if values.size and values.min() < -1e-9:
            raise ValidationError("link loads contain negative entries")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def num_timepoints(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SeriesLayout:
    """Format descriptor for TM series files.

    ``n`` declares the expected flow count (None accepts any width);
    ``header`` is "auto" (skip a first row with non-numeric cells),
    "present", or "absent".
    """

    n: int | None = None
    interval: float = 300.0
    unit: str = "bytes"
    header: str = "auto"


def _parse_numeric_rows(path: Path, header: str) -> list[tuple[int, list[float]]]:
    if not path.exists():
        raise MissingInputError(f"file not found: {path}")
    rows: list[tuple[int, list[float]]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if not rows and header in ("auto", "present"):
                continue  # header row
            raise ParseError(f"{path}:{lineno}: non-numeric cell in data row") from None
        rows.append((lineno, values))
    if header == "present" and rows and rows[0][0] == 1:
        rows = rows[1:]
    return rows


def load_tm_series(path: str | Path, layout: SeriesLayout = SeriesLayout()) -> TrafficMatrixSeries:
    """Load a TM series CSV: one TM per row, row-major flattening.

    Raises ParseError naming the offending row on a width mismatch and
    ValidationError on negative values.
    """
    path = Path(path)
    rows = _parse_numeric_rows(path, layout.header)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = layout.n if layout.n is not None else len(rows[0][1])
    out = np.empty((len(rows), width), dtype=np.float64)
    for i, (lineno, values) in enumerate(rows):
        if len(values) != width:
            raise ParseError(
                f"{path}:{lineno}: row has {len(values)} columns, expected {width}"
            )
        row = np.asarray(values)
        if (row < 0).any():
            col = int(np.argmax(row < 0))
            raise ValidationError(f"{path}:{lineno}: negative value in column {col}")
        out[i] = row
    return TrafficMatrixSeries(values=out, interval=layout.interval, unit=layout.unit)


def load_link_loads(path: str | Path, layout: SeriesLayout = SeriesLayout()) -> LinkLoadSeries:
    """Load a link-load series CSV (T x m), same conventions as TM series."""
    path = Path(path)
    rows = _parse_numeric_rows(path, layout.header)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = layout.n if layout.n is not None else len(rows[0][1])
    out = np.empty((len(rows), width), dtype=np.float64)
    for i, (lineno, values) in enumerate(rows):
        if len(values) != width:
            raise ParseError(
                f"{path}:{lineno}: row has {len(values)} columns, expected {width}"
            )
        out[i] = values
    return LinkLoadSeries(values=out, interval=layout.interval, unit=layout.unit)


def write_matrix_csv(path: str | Path, values: np.ndarray, header: list[str] | None = None) -> None:
    """Write a 2-D array as CSV with round-trip-exact float formatting."""
    values = np.asarray(values)
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in np.atleast_2d(values):
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix_csv(path: str | Path) -> np.ndarray:
    """Load a plain numeric CSV matrix (optional header auto-skipped)."""
    path = Path(path)
    rows = _parse_numeric_rows(path, "auto")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    out = np.empty((len(rows), width), dtype=np.float64)
    for i, (lineno, values) in enumerate(rows):
        if len(values) != width:
            raise ParseError(
                f"{path}:{lineno}: row has {len(values)} columns, expected {width}"
            )
        out[i] = values
    return out


def load_routing_matrix(path: str | Path) -> RoutingMatrix:
    return RoutingMatrix(entries=load_matrix_csv(path))


def split_train_test(
    series: TrafficMatrixSeries, train_weeks: int, test_weeks: int
) -> tuple[TrafficMatrixSeries, TrafficMatrixSeries]:
    """Contiguous, non-overlapping week split with train preceding test."""
    if train_weeks < 0 or test_weeks < 0:
        raise RangeError("week counts must be nonnegative")
    per_week = int(round(SECONDS_PER_WEEK / series.interval))
    if per_week < 1:
        raise RangeError(f"interval {series.interval}s exceeds one week")
    needed = (train_weeks + test_weeks) * per_week
    if series.num_timepoints < needed:
        raise RangeError(
            f"series has {series.num_timepoints} timepoints, "
            f"need {needed} for {train_weeks}+{test_weeks} weeks"
        )
    cut = train_weeks * per_week
    end = cut + test_weeks * per_week
    train = TrafficMatrixSeries(
        values=series.values[:cut],
        interval=series.interval,
        unit=series.unit,
        timestamps=series.timestamps[:cut],
    )
    test = TrafficMatrixSeries(
        values=series.values[cut:end],
        interval=series.interval,
        unit=series.unit,
        timestamps=series.timestamps[cut:end],
    )
    return train, test


def build_routing_matrix(topo: Topology, policy: str = "deterministic") -> RoutingMatrix:
    """Build the m x n routing matrix under the given policy.

    deterministic: each flow follows the single shortest path; ties broken
    by the lexicographically smallest node-id sequence.
    ecmp: each flow splits equally over all equal-cost shortest paths; the
    entry for a link is the fraction of the flow's paths traversing it.
    """
    if policy not in ROUTING_POLICIES:
        raise ValidationError(f"unknown routing policy {policy!r}; choose from {ROUTING_POLICIES}")
    g = topo.graph()
    m = topo.num_links
    n = topo.num_flows
    link_idx = {(s, d): i for i, (s, d, _) in enumerate(topo.links)}
    entries = np.zeros((m, n), dtype=np.float64)
    for col, (origin, dest) in enumerate(topo.flow_pairs()):
        if origin == dest:
            continue  # intra-node flow: all-zero column
        try:
            paths = sorted(nx.all_shortest_paths(g, origin, dest, weight="weight"))
        except nx.NetworkXNoPath:
            raise TopologyError(f"no route for flow {origin}->{dest}") from None
        if policy == "deterministic":
            paths = paths[:1]
        share = 1.0 / len(paths)
        for path in paths:
            for src, dst in zip(path, path[1:]):
                entries[link_idx[(src, dst)], col] += share
    return RoutingMatrix(entries=entries)


def compute_link_loads(a: RoutingMatrix, x: TrafficMatrixSeries) -> LinkLoadSeries:
    """Per-timepoint link loads: values(t) = A @ X(t)."""
    if a.n != x.n:
        raise ShapeError(f"routing matrix has {a.n} flows, series has {x.n}")
    loads = x.values @ a.entries.T
    return LinkLoadSeries(values=loads, interval=x.interval, unit=x.unit)
