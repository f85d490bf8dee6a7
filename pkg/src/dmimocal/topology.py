"""Measurement graph construction, distance-2 coloring, and the per-frame
broken-TDD measurement schedule.

AP ids are 1-based in edge tuples and master/responder lists (matching the
usual node numbering); array axes (incidence columns, coloring) are 0-based,
so AP l maps to index l - 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .config import SlotTiming, SystemConfig
from .errors import InvalidConfigError, ScheduleIncompleteError


@dataclass(frozen=True)
class ApGraph:
    n_nodes: int
    edges: tuple            # ((l1, l2), ...) with l1 < l2, lexicographically sorted
    incidence: np.ndarray   # (M, L): row m has -1 at l1-1, +1 at l2-1
    threshold: float        # weakest link strength admitted

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, l1: int, l2: int) -> int:
        key = (l1, l2) if l1 < l2 else (l2, l1)
        return self._index[key]

    def neighbors(self, node: int) -> tuple:
        return self._adj[node]

    def __post_init__(self):
        adj = {l: [] for l in range(1, self.n_nodes + 1)}
        index = {}
        for m, (a, b) in enumerate(self.edges):
            adj[a].append(b)
            adj[b].append(a)
            index[(a, b)] = m
        object.__setattr__(self, "_adj", {l: tuple(sorted(v)) for l, v in adj.items()})
        object.__setattr__(self, "_index", index)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb
            return True
        return False


def build_graph(strengths: np.ndarray, L: int, m_min: int) -> ApGraph:
    """Keep the strongest links: the largest threshold giving a connected graph
    with at least m_min edges.

    `strengths[i, j]` is the link strength between APs i+1 and j+1 (symmetric;
    the diagonal is ignored). Edges are admitted in descending strength until
    both conditions hold; every edge at least as strong as the last admitted
    one is included, so the result is exactly a threshold graph.
    """
    if L < 2:
        raise InvalidConfigError(f"need at least 2 APs to build a graph, got L={L}")
    cap = L * (L - 1) // 2
    if m_min > cap:
        raise InvalidConfigError(f"M_min={m_min} exceeds L(L-1)/2 = {cap}")
    m_min = max(m_min, 1)

    candidates = []
    for a in range(1, L + 1):
        for b in range(a + 1, L + 1):
            candidates.append((float(strengths[a - 1, b - 1]), a, b))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    uf = _UnionFind(L)
    components = L
    threshold = candidates[0][0]
    count = 0
    for s, a, b in candidates:
        if uf.union(a - 1, b - 1):
            components -= 1
        count += 1
        threshold = s
        if components == 1 and count >= m_min:
            break
    # Threshold semantics: admit every edge with strength >= threshold.
    edges = sorted((a, b) for s, a, b in candidates if s >= threshold)

    incidence = np.zeros((len(edges), L))
    for m, (a, b) in enumerate(edges):
        incidence[m, a - 1] = -1.0
        incidence[m, b - 1] = 1.0
    return ApGraph(L, tuple(edges), incidence, threshold)


def square_adjacency(graph: ApGraph) -> dict:
    """Nodes at graph distance <= 2 (the conflict sets for distance-2 coloring)."""
    adj2 = {}
    for v in range(1, graph.n_nodes + 1):
        near = set(graph.neighbors(v))
        for u in graph.neighbors(v):
            near.update(graph.neighbors(u))
        near.discard(v)
        adj2[v] = near
    return adj2


def distance2_coloring(graph: ApGraph) -> np.ndarray:
    """Greedy Welsh-Powell coloring of the square graph.

    Nodes are processed by descending square-graph degree (ties by ascending
    node id) and take the smallest color unused in their distance-2
    neighborhood. Returns 0-based colors, shape (L,).
    """
    adj2 = square_adjacency(graph)
    order = sorted(range(1, graph.n_nodes + 1), key=lambda v: (-len(adj2[v]), v))
    colors = np.full(graph.n_nodes, -1, dtype=int)
    for v in order:
        used = {colors[u - 1] for u in adj2[v] if colors[u - 1] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[v - 1] = c
    return colors


def coloring_is_valid(graph: ApGraph, colors: np.ndarray) -> bool:
    adj2 = square_adjacency(graph)
    return all(colors[v - 1] != colors[u - 1]
               for v in range(1, graph.n_nodes + 1) for u in adj2[v])


class DirectionalEvent(NamedTuple):
    """One calibration transmission: tx sends, rx measures, on edge `edge`."""
    tx: int
    rx: int
    edge: int


@dataclass(frozen=True)
class MeasurementSlotPlan:
    index: int                  # 1-based measurement slot number within the frame
    slot_in_frame: int          # 1-based slot position hosting it
    masters: tuple              # AP ids shifted in this slot
    responders: dict            # master -> first-group neighbor answering at i2
    fwd_events: tuple           # DirectionalEvents at i1 (master -> each neighbor)
    bwd_events: tuple           # DirectionalEvents at i2 (responder -> master)
    measured_edges: tuple       # ascending edge indices with a new measurement


@dataclass(frozen=True)
class Schedule:
    graph: ApGraph
    coloring: tuple
    n_c: int
    n_m: int
    F: int
    responder_group: tuple
    master_groups: tuple        # ordered as scheduled, one per measurement slot
    slots: tuple                # MeasurementSlotPlans, index 1..n_m
    timing: SlotTiming

    def slot_plan_at(self, slot_in_frame: int) -> Optional[MeasurementSlotPlan]:
        return self._by_slot.get(slot_in_frame)

    def __post_init__(self):
        object.__setattr__(self, "_by_slot", {p.slot_in_frame: p for p in self.slots})


def _measurement_slot_positions(F: int, n_m: int, placement: str) -> list:
    if placement == "head":
        return list(range(1, n_m + 1))
    # Even grid; the leftover unbroken slots land late in the frame.
    return [1 + ((j - 1) * F) // n_m for j in range(1, n_m + 1)]


def build_schedule(graph: ApGraph, coloring: np.ndarray,
                   cfg: SystemConfig) -> Schedule:
    """Per-frame measurement plan from a distance-2 coloring.

    The first greedy color class is the responder group. The remaining
    classes become master groups, one per measurement slot, ordered by
    descending class size then smallest member. In its slot every master
    transmits to all its neighbors at i1; each responder-group node adjacent
    to a master answers that master at i2 (distance-2 validity guarantees at
    most one master neighbor per node and at most one responder per master).
    """
    L = graph.n_nodes
    classes = {}
    for v in range(1, L + 1):
        classes.setdefault(int(coloring[v - 1]), []).append(v)
    n_c = len(classes)
    n_m = n_c - 1
    if cfg.n_m is not None and cfg.n_m != n_m:
        raise InvalidConfigError(f"config n_m={cfg.n_m} but the coloring needs n_m={n_m}")
    F = cfg.F if cfg.F is not None else n_m + cfg.extra_unbroken_slots
    if F < n_m:
        raise InvalidConfigError(f"frame length F={F} shorter than n_m={n_m}")

    first_color = min(classes)  # greedy always assigns color 0 first
    responder_group = tuple(sorted(classes[first_color]))
    other = [tuple(sorted(c)) for col, c in classes.items() if col != first_color]
    master_groups = tuple(sorted(other, key=lambda g: (-len(g), g[0])))

    positions = _measurement_slot_positions(F, n_m, cfg.measurement_slot_placement)
    responder_set = set(responder_group)
    slots = []
    for j, (masters, pos) in enumerate(zip(master_groups, positions), start=1):
        fwd = []
        bwd = []
        responders = {}
        for m in masters:
            for nbr in graph.neighbors(m):
                fwd.append(DirectionalEvent(m, nbr, graph.edge_index(m, nbr)))
            answering = [r for r in graph.neighbors(m) if r in responder_set]
            if len(answering) > 1:
                raise ScheduleIncompleteError(
                    f"master {m} has {len(answering)} responder-group neighbors; "
                    "the coloring is not distance-2 valid")
            if answering:
                responders[m] = answering[0]
                bwd.append(DirectionalEvent(answering[0], m, graph.edge_index(answering[0], m)))
        measured = tuple(sorted({e.edge for e in fwd} | {e.edge for e in bwd}))
        slots.append(MeasurementSlotPlan(j, pos, masters, responders,
                                         tuple(fwd), tuple(bwd), measured))

    _check_full_coverage(graph, slots)
    return Schedule(graph, tuple(int(c) for c in coloring), n_c, n_m, F,
                    responder_group, master_groups, tuple(slots),
                    SlotTiming.from_config(cfg))


def _check_full_coverage(graph: ApGraph, slots) -> None:
    covered = set()
    for plan in slots:
        for ev in plan.fwd_events + plan.bwd_events:
            covered.add((ev.tx, ev.rx))
    for (a, b) in graph.edges:
        if (a, b) not in covered or (b, a) not in covered:
            raise ScheduleIncompleteError(
                f"edge ({a},{b}) is not measured in both directions within a frame")


def measurement_matrix(schedule: Schedule, n: int) -> np.ndarray:
    """Row selector A_n over edges for measurement slot n (rows of I_M)."""
    if not 1 <= n <= schedule.n_m:
        raise InvalidConfigError(f"measurement slot {n} outside 1..{schedule.n_m}")
    edges = schedule.slots[n - 1].measured_edges
    A = np.zeros((len(edges), schedule.graph.n_edges))
    for row, e in enumerate(edges):
        A[row, e] = 1.0
    return A


def steady_state_timestamps(schedule: Schedule) -> dict:
    """Within-frame sample offsets of each edge's latest directional measurements.

    Returns {edge_index: (t_fwd, t_bwd, i_minus, i_plus)} where t_fwd is the
    offset of the latest l1 -> l2 transmission within a steady-state frame
    (offset (p-1)*tau_c + i1 or i2 for slot p; negative-free since all events
    repeat every frame). Offsets from earlier frames are this value minus a
    multiple of F*tau_c.
    """
    t = schedule.timing
    out = {}
    last = {}
    for plan in schedule.slots:
        base = (plan.slot_in_frame - 1) * t.tau_c
        for ev in plan.fwd_events:
            last[(ev.tx, ev.rx)] = base + t.i1
        for ev in plan.bwd_events:
            last[(ev.tx, ev.rx)] = base + t.i2
    for m, (a, b) in enumerate(schedule.graph.edges):
        t_fwd = last[(a, b)]
        t_bwd = last[(b, a)]
        out[m] = (t_fwd, t_bwd, min(t_fwd, t_bwd), max(t_fwd, t_bwd))
    return out


def schedule_to_text(schedule: Schedule) -> str:
    """Stable structured dump for debugging.

    Lines: `graph`, one `edge` per edge, `coloring`, `frame`, one
    `measurement_slot` per slot with masters/responders/edges, then one
    `timestamps` line per edge with steady-state offsets.
    """
    lines = [f"graph nodes={schedule.graph.n_nodes} edges={schedule.graph.n_edges} "
             f"threshold={schedule.graph.threshold:.6g}"]
    for m, (a, b) in enumerate(schedule.graph.edges):
        lines.append(f"edge index={m} l1={a} l2={b}")
    lines.append("coloring " + " ".join(f"ap{v + 1}={c}" for v, c in enumerate(schedule.coloring)))
    lines.append(f"frame F={schedule.F} n_c={schedule.n_c} n_m={schedule.n_m} "
                 f"responder_group={','.join(map(str, schedule.responder_group))}")
    for plan in schedule.slots:
        resp = ";".join(f"{m}<-{r}" for m, r in sorted(plan.responders.items()))
        lines.append(
            f"measurement_slot index={plan.index} slot_in_frame={plan.slot_in_frame} "
            f"masters={','.join(map(str, plan.masters))} responders={resp or '-'} "
            f"edges={','.join(map(str, plan.measured_edges))}")
    stamps = steady_state_timestamps(schedule)
    for m in range(schedule.graph.n_edges):
        t_fwd, t_bwd, i_minus, i_plus = stamps[m]
        lines.append(f"timestamps edge={m} fwd={t_fwd} bwd={t_bwd} "
                     f"i_minus={i_minus} i_plus={i_plus}")
    return "\n".join(lines) + "\n"
