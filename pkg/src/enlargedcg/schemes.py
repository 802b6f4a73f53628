"""Point-to-point exchange plans for the distributed sparse block multiply.

Four interchangeable ways to move the remote rows every rank needs:

* standard      -- every owner sends every consumer exactly what it asked for,
                   duplicating a row across consumers on the same node;
* two-step      -- owners send per-destination-node deduplicated payloads
                   straight to a paired rank there, which redistributes;
* three-step    -- per destination node, an on-node gather first combines all
                   owners' payloads into one buffer, so each (source node,
                   destination node) pair exchanges a single message;
* nodal-optimal -- per source node, sub-threshold payloads are conglomerated
                   and oversized payloads split across ranks, so no rank
                   injects a pathological number or size of messages.

Plans are pure data (phases of Message records); the virtual cluster executes
them, and the statistics extracted here feed the analytic time models.  All
builders are deterministic: same pattern in, byte-identical plan out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partition import CommPattern, Topology

__all__ = [
    "DEFAULT_THRESHOLD",
    "Message",
    "CommPlan",
    "CommStats",
    "plan_standard",
    "plan_two_step",
    "plan_three_step",
    "plan_nodal_optimal",
    "plan_by_name",
    "plan_stats",
    "SCHEMES",
]

DEFAULT_THRESHOLD = 8192  # bytes; a common eager-protocol cutoff


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    rows: tuple       # ascending global row indices
    n_bytes: int      # len(rows) * t * f
    on_node: bool


@dataclass
class CommPlan:
    scheme: str
    t: int
    f: int
    topo: Topology
    phases: list             # list of phases; each phase: list[Message]
    phase_labels: tuple      # parallel to phases, e.g. ("gather", "internode", "local")

    def all_messages(self):
        for phase in self.phases:
            yield from phase

    def internode_messages(self):
        return [m for m in self.all_messages() if not m.on_node]

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "t": self.t,
            "f": self.f,
            "phases": [
                {
                    "label": label,
                    "messages": [
                        {"src": m.src, "dst": m.dst, "rows": list(m.rows),
                         "bytes": m.n_bytes, "on_node": m.on_node}
                        for m in phase
                    ],
                }
                for label, phase in zip(self.phase_labels, self.phases)
            ],
        }


@dataclass(frozen=True)
class CommStats:
    """Message/byte maxima in the vocabulary of the time models.

    All byte fields and all *_to_node / n_opt counts consider inter-node
    messages only; m and total_messages count every message in the plan.
    """

    m: int                    # max messages sent by any rank (all localities)
    s_proc: int               # max inter-node bytes sent by any rank
    s_node: int               # max inter-node bytes injected by any node
    m_proc_to_node: int       # max distinct remote destination nodes per rank
    m_node_to_node: int       # max messages between any directed node pair
    s_node_to_node: int       # max bytes between any directed node pair
    n_opt: int                # max inter-node messages injected by any rank
    total_internode_bytes: int
    total_messages: int

    def unit_width(self, t: int) -> "CommStats":
        """Byte fields rescaled to block width 1 (models re-apply their own t).

        Payloads are whole t-wide rows, so every byte field divides exactly.
        """
        def div(x):
            if x % t:
                raise ValueError("byte statistic not divisible by block width")
            return x // t
        return CommStats(
            m=self.m, s_proc=div(self.s_proc), s_node=div(self.s_node),
            m_proc_to_node=self.m_proc_to_node,
            m_node_to_node=self.m_node_to_node,
            s_node_to_node=div(self.s_node_to_node),
            n_opt=self.n_opt,
            total_internode_bytes=div(self.total_internode_bytes),
            total_messages=self.total_messages,
        )

    def to_json_dict(self) -> dict:
        return {
            "m": self.m, "s_proc": self.s_proc, "s_node": self.s_node,
            "m_proc_to_node": self.m_proc_to_node,
            "m_node_to_node": self.m_node_to_node,
            "s_node_to_node": self.s_node_to_node,
            "n_opt": self.n_opt,
            "total_internode_bytes": self.total_internode_bytes,
            "total_messages": self.total_messages,
        }


def _message(topo: Topology, t: int, f: int, src: int, dst: int, rows) -> Message:
    rows = tuple(int(r) for r in rows)
    return Message(src=src, dst=dst, rows=rows, n_bytes=len(rows) * t * f,
                   on_node=topo.same_node(src, dst))


def _paired_rank(topo: Topology, node: int, local_index: int) -> int:
    """Rank on `node` with the given local index (wrapping on a short node)."""
    ranks = topo.ranks_on_node(node)
    return ranks[local_index % len(ranks)]


# ---------------------------------------------------------------------------
# standard: direct owner -> consumer messages
# ---------------------------------------------------------------------------

def plan_standard(pattern: CommPattern, t: int, f: int = 8) -> CommPlan:
    topo = pattern.topo
    msgs = [_message(topo, t, f, req.src, req.dst, req.rows)
            for reqs in pattern.requirements for req in reqs]
    return CommPlan(scheme="standard", t=t, f=f, topo=topo,
                    phases=[msgs], phase_labels=("exchange",))


# ---------------------------------------------------------------------------
# two-step: deduplicated direct sends to a paired remote rank, then local fan-out
# ---------------------------------------------------------------------------

def plan_two_step(pattern: CommPattern, topo: Topology, t: int, f: int = 8) -> CommPlan:
    inter = []
    local_acc = {}  # (holder, dst) -> list of rows

    for src in range(topo.p):
        by_node = {}
        for req in pattern.sends_of(src):
            dn = topo.node_of(req.dst)
            if dn != topo.node_of(src):
                by_node.setdefault(dn, set()).update(req.rows)
        for dn in sorted(by_node):
            relay = _paired_rank(topo, dn, topo.local_index(src))
            inter.append(_message(topo, t, f, src, relay, sorted(by_node[dn])))

    for req in pattern.all_requirements():
        if req.on_node:
            holder = req.src  # self-paired: the owner redistributes directly
        else:
            holder = _paired_rank(topo, topo.node_of(req.dst), topo.local_index(req.src))
        if holder != req.dst:
            local_acc.setdefault((holder, req.dst), []).extend(req.rows)

    local = [_message(topo, t, f, src, dst, sorted(rows))
             for (src, dst), rows in sorted(local_acc.items())]
    return CommPlan(scheme="two_step", t=t, f=f, topo=topo,
                    phases=[inter, local], phase_labels=("internode", "local"))


# ---------------------------------------------------------------------------
# three-step: on-node gather, single inter-node message per node pair, fan-out
# ---------------------------------------------------------------------------

def _node_pair_traffic(pattern: CommPattern, topo: Topology):
    """(src_node, dst_node) -> {owner rank -> rows set}, off-node pairs only."""
    traffic = {}
    for req in pattern.all_requirements():
        if req.on_node:
            continue
        key = (topo.node_of(req.src), topo.node_of(req.dst))
        traffic.setdefault(key, {}).setdefault(req.src, set()).update(req.rows)
    return traffic


def plan_three_step(pattern: CommPattern, topo: Topology, t: int, f: int = 8) -> CommPlan:
    traffic = _node_pair_traffic(pattern, topo)
    gather, inter = [], []
    local_acc = {}

    for (sn, dn) in sorted(traffic):
        per_owner = traffic[(sn, dn)]
        # the rank with local index (dn mod ppn) on each side owns this buffer
        g = _paired_rank(topo, sn, dn % topo.ppn)
        receiver = _paired_rank(topo, dn, dn % topo.ppn)
        union = sorted(set().union(*per_owner.values()))
        for owner in sorted(per_owner):
            if owner != g:
                gather.append(_message(topo, t, f, owner, g, sorted(per_owner[owner])))
        inter.append(_message(topo, t, f, g, receiver, union))
        for dst in topo.ranks_on_node(dn):
            rows = [r for req in pattern.requirements[dst]
                    if topo.node_of(req.src) == sn and not req.on_node
                    for r in req.rows]
            if rows and receiver != dst:
                local_acc.setdefault((receiver, dst), []).extend(rows)

    for req in pattern.all_requirements():
        if req.on_node and req.src != req.dst:
            local_acc.setdefault((req.src, req.dst), []).extend(req.rows)

    local = [_message(topo, t, f, src, dst, sorted(rows))
             for (src, dst), rows in sorted(local_acc.items())]
    return CommPlan(scheme="three_step", t=t, f=f, topo=topo,
                    phases=[gather, inter, local],
                    phase_labels=("gather", "internode", "local"))


# ---------------------------------------------------------------------------
# nodal-optimal: conglomerate small payloads, split big ones, balance senders
# ---------------------------------------------------------------------------

def plan_nodal_optimal(pattern: CommPattern, topo: Topology, t: int, f: int = 8,
                       threshold: int = DEFAULT_THRESHOLD) -> CommPlan:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    gather, inter = [], []
    local_acc = {}
    row_holder = {}  # (src_node, dst_node) -> {row -> receiving rank}

    for sn in range(topo.n_nodes):
        ranks_sn = list(topo.ranks_on_node(sn))
        # per-(owner, destination node) deduplicated payloads, two-step granularity
        pieces = {}  # dn -> list[(owner, rows tuple)]
        per_owner_fanout = dict.fromkeys(ranks_sn, 0)
        for owner in ranks_sn:
            by_node = {}
            for req in pattern.sends_of(owner):
                dn = topo.node_of(req.dst)
                if dn != sn:
                    by_node.setdefault(dn, set()).update(req.rows)
            per_owner_fanout[owner] = len(by_node)
            for dn in sorted(by_node):
                pieces.setdefault(dn, []).append(
                    (owner, tuple(sorted(by_node[dn]))))
        if not pieces:
            continue

        # budget keeps the per-node message total within Eq-13 territory:
        # ppn * max(m_proc->node, ppn) sends at most, spread by least-loaded
        cap = len(ranks_sn) * max(max(per_owner_fanout.values()), topo.ppn)
        buffers = []   # (dn, rows tuple, [(owner, owner rows)])
        oversized = []
        for dn in sorted(pieces):
            small = [(o, rows) for (o, rows) in pieces[dn]
                     if len(rows) * t * f <= threshold]
            if small:
                merged = sorted(set().union(*[set(rows) for _, rows in small]))
                buffers.append((dn, tuple(merged), small))
            oversized.extend((dn, rows, o) for (o, rows) in pieces[dn]
                             if len(rows) * t * f > threshold)
        budget = cap - (len(buffers) + len(oversized))

        oversized.sort(key=lambda e: (-len(e[1]), e[0], e[1][0]))
        for dn, rows, owner in oversized:
            n_bytes = len(rows) * t * f
            k = min(-(-n_bytes // threshold), len(ranks_sn), len(rows),
                    1 + max(budget, 0))
            budget -= k - 1
            for chunk in np.array_split(np.asarray(rows, dtype=np.int64), k):
                crows = tuple(int(r) for r in chunk)
                buffers.append((dn, crows, [(owner, crows)]))

        # descending payload size to the least-loaded rank, ties by rank index
        buffers.sort(key=lambda e: (-len(e[1]) * t * f, e[0], e[1][0]))
        load = dict.fromkeys(ranks_sn, 0)
        for dn, rows, contributors in buffers:
            sender = min(ranks_sn, key=lambda r: (load[r], r))
            load[sender] += 1
            receiver = _paired_rank(topo, dn, topo.local_index(sender))
            for owner, orows in contributors:
                if owner != sender:
                    gather.append(_message(topo, t, f, owner, sender, orows))
            inter.append(_message(topo, t, f, sender, receiver, rows))
            holder = row_holder.setdefault((sn, dn), {})
            holder.update((r, receiver) for r in rows)

    for req in pattern.all_requirements():
        if req.on_node:
            if req.src != req.dst:
                local_acc.setdefault((req.src, req.dst), []).extend(req.rows)
            continue
        holder = row_holder[(topo.node_of(req.src), topo.node_of(req.dst))]
        for row in req.rows:
            h = holder[row]
            if h != req.dst:
                local_acc.setdefault((h, req.dst), []).append(row)

    local = [_message(topo, t, f, src, dst, sorted(rows))
             for (src, dst), rows in sorted(local_acc.items())]
    return CommPlan(scheme="nodal_optimal", t=t, f=f, topo=topo,
                    phases=[gather, inter, local],
                    phase_labels=("gather", "internode", "local"))


SCHEMES = ("standard", "two_step", "three_step", "nodal_optimal")


def plan_by_name(scheme: str, pattern: CommPattern, topo: Topology, t: int,
                 f: int = 8, threshold: int = DEFAULT_THRESHOLD) -> CommPlan:
    if scheme == "standard":
        return plan_standard(pattern, t, f)
    if scheme == "two_step":
        return plan_two_step(pattern, topo, t, f)
    if scheme == "three_step":
        return plan_three_step(pattern, topo, t, f)
    if scheme == "nodal_optimal":
        return plan_nodal_optimal(pattern, topo, t, f, threshold)
    raise ValueError(f"unknown scheme {scheme!r} (choose from {', '.join(SCHEMES)})")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def plan_stats(plan: CommPlan, topo: Topology) -> CommStats:
    """Exact counts over the plan's message list; byte fields are inter-node only."""
    sent_all = dict.fromkeys(range(topo.p), 0)
    sent_inter = dict.fromkeys(range(topo.p), 0)
    bytes_rank = dict.fromkeys(range(topo.p), 0)
    bytes_node = dict.fromkeys(range(topo.n_nodes), 0)
    dst_nodes = {r: set() for r in range(topo.p)}
    pair_msgs = {}
    pair_bytes = {}
    total_bytes = 0
    total_messages = 0

    for msg in plan.all_messages():
        total_messages += 1
        sent_all[msg.src] += 1
        if msg.on_node:
            continue
        sent_inter[msg.src] += 1
        bytes_rank[msg.src] += msg.n_bytes
        bytes_node[topo.node_of(msg.src)] += msg.n_bytes
        dst_nodes[msg.src].add(topo.node_of(msg.dst))
        pair = (topo.node_of(msg.src), topo.node_of(msg.dst))
        pair_msgs[pair] = pair_msgs.get(pair, 0) + 1
        pair_bytes[pair] = pair_bytes.get(pair, 0) + msg.n_bytes
        total_bytes += msg.n_bytes

    return CommStats(
        m=max(sent_all.values(), default=0),
        s_proc=max(bytes_rank.values(), default=0),
        s_node=max(bytes_node.values(), default=0),
        m_proc_to_node=max((len(s) for s in dst_nodes.values()), default=0),
        m_node_to_node=max(pair_msgs.values(), default=0),
        s_node_to_node=max(pair_bytes.values(), default=0),
        n_opt=max(sent_inter.values(), default=0),
        total_internode_bytes=total_bytes,
        total_messages=total_messages,
    )
