"""Slotted-time simulator for aggregation over interference-limited links.

Rounds are routed by assigning each one to an aggregation tree; packets
then climb their tree under an aggregate-and-transmit discipline: a node
forwards a round only after it has folded in that round's packet from
every tree child.  Per node and tree there is a queue of rounds ready to
forward (useful) and an implicit set still waiting on children
(not-useful).

Scheduling picks one admissible schedule per slot:

* ``maxweight`` weighs each link by its best useful backlog across trees
  and transmits, per scheduled link, from that maximizing tree only;
* ``static_sss`` samples a fixed schedule distribution and serves
  scheduled links FIFO by round id across their trees.

Routing policies: ``greedy`` (all arrivals of a slot to the tree with the
smallest total useful backlog), ``fixed_split`` (independent random tree
per round with given weights, the static-packing construction), and
``single_tree``.
"""
from __future__ import annotations

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from heapq import heappop, heappush
from random import Random

from .errors import BadParams, MultiTreeConfig, OracleMismatch
from .flows import Schedule, ScheduleSet, SSSRule
from .fmux import FmuxFunction
from .graph import NetworkGraph

log = logging.getLogger(__name__)

ROUTINGS = ("greedy", "fixed_split", "single_tree")
SCHEDULINGS = ("maxweight", "static_sss")


# ---------------------------------------------------------------------------
# Arrivals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalProcess:
    """Synchronous per-slot round arrivals, i.i.d. across slots."""

    law: str = "poisson"
    lam: float = 1.0
    batch: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise BadParams("arrival rate must be nonnegative")
        if self.law == "bernoulli_batch" and not (0 <= self.lam <= self.batch):
            raise BadParams("bernoulli_batch requires lam <= batch")
        if self.law not in ("poisson", "bernoulli_batch", "deterministic"):
            raise BadParams(f"unknown arrival law {self.law!r}")

    @property
    def second_moment(self) -> float:
        if self.law == "poisson":
            return self.lam + self.lam ** 2
        if self.law == "bernoulli_batch":
            return self.batch * self.lam
        return float(math.ceil(self.lam)) ** 2  # deterministic upper bound


def _draw_poisson(rng: Random, lam: float) -> int:
    # Knuth's product method; lam stays small here.
    limit = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


# ---------------------------------------------------------------------------
# Tree plumbing
# ---------------------------------------------------------------------------

class TreeIndex:
    """Per-tree parent/children tables plus a link -> trees reverse index."""

    def __init__(self, g: NetworkGraph, trees):
        trees = list(trees)
        if not trees:
            raise BadParams("need at least one aggregation tree")
        for t in trees:
            t.validate(g)
        self.g = g
        self.trees = trees
        self.parent = []
        self.children_count = []
        self.is_leaf = []
        self.tree_links = []
        self.trees_on_link = {}
        for ti, tree in enumerate(trees):
            pm = tree.parent_map
            self.parent.append(pm)
            counts = [0] * g.n
            for i, p in pm.items():
                counts[p] += 1
            self.children_count.append(counts)
            self.is_leaf.append([counts[i] == 0 for i in range(g.n)])
            links = tree.tree_links
            self.tree_links.append(frozenset(links))
            for l in links:
                self.trees_on_link.setdefault(l, []).append(ti)

    def __len__(self):
        return len(self.trees)


def packetize_schedule_set(ss: ScheduleSet, log2_range: float) -> ScheduleSet:
    """Convert bits-per-slot schedule rates into whole packets per slot.

    Rates are divided by the per-packet bit size and floored; any flooring
    is logged since it shrinks the rate region.
    """
    if log2_range <= 0:
        raise BadParams("log2_range must be positive")
    schedules = []
    for s in ss.schedules:
        rates = {}
        for l, r in s.rates.items():
            packets = r / log2_range
            floored = math.floor(packets + 1e-12)
            if packets - floored > 1e-9:
                log.info("flooring rate on link %s: %.6g packets -> %d", l, packets, floored)
            rates[l] = float(floored)
        schedules.append(Schedule(s.links, rates))
    return ScheduleSet(tuple(schedules))


def _integral_rates(ss: ScheduleSet):
    for s in ss.schedules:
        for l, r in s.rates.items():
            if abs(r - round(r)) > 1e-9:
                raise BadParams(
                    f"schedule rate {r} on link {l} is not a whole number of packets; "
                    "run packetize_schedule_set first"
                )


# ---------------------------------------------------------------------------
# Policy pieces (usable standalone)
# ---------------------------------------------------------------------------

def greedy_tree_load(tree_totals, rng: Random) -> int:
    """Index of the tree with the smallest total useful backlog (ties uniform)."""
    best = min(tree_totals)
    ties = [ti for ti, w in enumerate(tree_totals) if w == best]
    return ties[0] if len(ties) == 1 else rng.choice(ties)


def maxweight_schedule(schedule_set: ScheduleSet, tree_index: TreeIndex,
                       useful_counts, rng: Random):
    """Pick the admissible schedule maximizing sum of P_ij * c_ij.

    P_ij is the largest per-tree useful backlog at i over trees containing
    (i,j); returns (schedule index, {link: maximizing tree}).  Ties, both in
    the per-link tree and in the schedule, are broken uniformly at random.
    """
    weight = {}
    best_tree = {}
    for link, taus in tree_index.trees_on_link.items():
        i = link[0]
        best = 0
        ties = None
        for ti in taus:
            q = useful_counts[ti][i]
            if q > best:
                best = q
                ties = [ti]
            elif q == best and q > 0:
                ties.append(ti)
        if best > 0:
            weight[link] = best
            best_tree[link] = ties[0] if len(ties) == 1 else rng.choice(ties)
    best_total = None
    best_scheds = []
    for k, sched in enumerate(schedule_set.schedules):
        total = 0.0
        for l in sched.links:
            w = weight.get(l)
            if w:
                total += w * sched.rates[l]
        if best_total is None or total > best_total + 1e-12:
            best_total = total
            best_scheds = [k]
        elif abs(total - best_total) <= 1e-12:
            best_scheds.append(k)
    chosen = best_scheds[0] if len(best_scheds) == 1 else rng.choice(best_scheds)
    return chosen, best_tree


def single_tree_backpressure(schedule_set: ScheduleSet, tree_index: TreeIndex,
                             useful_counts, rng: Random):
    """MaxWeight specialized to a single aggregation tree (the baseline)."""
    if len(tree_index) != 1:
        raise MultiTreeConfig(
            f"single-tree backpressure requires one tree, got {len(tree_index)}"
        )
    return maxweight_schedule(schedule_set, tree_index, useful_counts, rng)


def static_sss_policy(schedule_set: ScheduleSet, sss_rule: SSSRule,
                      tree_weights, rng: Random):
    """Per-slot draws for the static randomized policy.

    Returns (draw_schedule, assign_round): the first samples a schedule
    index from the service-split weights each slot, the second assigns an
    arriving round a tree index with probability proportional to the
    packing weights.
    """
    sched_cum = _cumulative(
        [sss_rule.weights.get(k, 0.0) for k in range(len(schedule_set))]
    )
    tree_cum = _cumulative(list(tree_weights))

    def draw_schedule():
        return _draw_categorical(rng, sched_cum)

    def assign_round():
        return _draw_categorical(rng, tree_cum)

    return draw_schedule, assign_round


def lyapunov_value(useful_counts) -> float:
    """Sum of squared useful-queue lengths: the drift diagnostic."""
    return float(sum(q * q for row in useful_counts for q in row))


def _cumulative(weights):
    total = float(sum(weights))
    if total <= 0:
        raise BadParams("weights must have positive total")
    acc = 0.0
    cum = []
    for w in weights:
        if w < 0:
            raise BadParams("weights must be nonnegative")
        acc += w / total
        cum.append(acc)
    cum[-1] = 1.0
    return cum


def _draw_categorical(rng: Random, cum) -> int:
    return bisect_right(cum, rng.random())


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------

class _WRound:
    __slots__ = ("rid", "tree", "t_arrive", "payloads", "pending", "sensed", "crossed")

    def __init__(self, rid, tree, t_arrive, payloads, pending, sensed):
        self.rid = rid
        self.tree = tree
        self.t_arrive = t_arrive
        self.payloads = payloads
        self.pending = pending
        self.sensed = sensed
        self.crossed = None


@dataclass
class WirelessMetrics:
    lam: float
    seed: int
    horizon: int
    tree_count: int
    slots: list = field(default_factory=list)
    total_useful: list = field(default_factory=list)
    total_nonuseful: list = field(default_factory=list)
    lyapunov: list = field(default_factory=list)
    completed_series: list = field(default_factory=list)
    mean_latency_series: list = field(default_factory=list)
    per_tree_assigned: list = field(default_factory=list)  # cumulative, per sample
    schedule_counts: dict = field(default_factory=dict)
    completed: int = 0
    latency_sum: float = 0.0
    max_backlog: int = 0
    final_backlog: int = 0
    assigned_totals: list = field(default_factory=list)

    @property
    def mean_latency(self):
        return self.latency_sum / self.completed if self.completed else 0.0

    @property
    def backlog_series(self):
        return [u + nu for u, nu in zip(self.total_useful, self.total_nonuseful)]

    def csv_rows(self):
        for k in range(len(self.slots)):
            yield (
                self.slots[k],
                self.total_useful[k],
                self.total_nonuseful[k],
                self.lyapunov[k],
                self.completed_series[k],
                self.mean_latency_series[k],
                *self.per_tree_assigned[k],
            )


class WirelessSimulator:
    """One policy on one topology; call run(horizon) for the metrics."""

    def __init__(self, g: NetworkGraph, schedule_set: ScheduleSet, trees,
                 func: FmuxFunction, arrivals: ArrivalProcess, seed: int,
                 routing: str = "greedy", scheduling: str = "maxweight",
                 split_weights=None, sss_rule: SSSRule = None,
                 debug: bool = False):
        if routing not in ROUTINGS:
            raise BadParams(f"unknown routing {routing!r}")
        if scheduling not in SCHEDULINGS:
            raise BadParams(f"unknown scheduling {scheduling!r}")
        schedule_set.validate_links(g)
        _integral_rates(schedule_set)
        if func.k and func.k > len(g.sensors):
            raise BadParams(
                f"order statistic k={func.k} needs at least k sensors, "
                f"graph has {len(g.sensors)}"
            )
        self.g = g
        self.schedule_set = schedule_set
        self.tix = trees if isinstance(trees, TreeIndex) else TreeIndex(g, trees)
        if routing == "single_tree" and len(self.tix) != 1:
            raise MultiTreeConfig(f"single_tree requires exactly one tree, got {len(self.tix)}")
        self.func = func
        self.arrivals = arrivals
        self.routing = routing
        self.scheduling = scheduling
        self.rng = Random(seed)
        self.seed = seed
        self.debug = debug

        if routing == "fixed_split":
            if split_weights is None or len(split_weights) != len(self.tix):
                raise BadParams("fixed_split routing needs one weight per tree")
            self._split_cum = _cumulative(split_weights)
        else:
            self._split_cum = None
        if scheduling == "static_sss":
            if sss_rule is None:
                raise BadParams("static_sss scheduling needs an SSSRule")
            weights = [sss_rule.weights.get(k, 0.0) for k in range(len(schedule_set))]
            self._sss_cum = _cumulative(weights)
        else:
            self._sss_cum = None

        n = g.n
        ntrees = len(self.tix)
        self.useful = [[[] for _ in range(n)] for _ in range(ntrees)]  # heaps of rids
        self.useful_counts = [[0] * n for _ in range(ntrees)]
        self.tree_totals = [0] * ntrees
        self.rounds = {}
        self.assigned = [0] * ntrees
        self.u_total = 0
        self.nu_total = 0
        self.slot = 0
        self._next_rid = 0
        self._arr_carry = 0.0
        self.metrics = WirelessMetrics(
            lam=arrivals.lam, seed=seed, horizon=0, tree_count=ntrees
        )

    # -- arrivals and placement ---------------------------------------------

    def _draw_arrivals(self) -> int:
        a = self.arrivals
        if a.lam == 0:
            return 0
        if a.law == "poisson":
            return _draw_poisson(self.rng, a.lam)
        if a.law == "bernoulli_batch":
            return a.batch if self.rng.random() < a.lam / a.batch else 0
        carry = self._arr_carry + a.lam
        count = int(carry)
        self._arr_carry = carry - count
        return count

    def _place_round(self, tree_idx: int) -> int:
        g, f = self.g, self.func
        rid = self._next_rid
        self._next_rid += 1
        sensed = {i: self.rng.randrange(f.alphabet_size) for i in g.sensors}
        payloads = {i: f.lift(x) for i, x in sensed.items()}
        payloads[g.aggregator] = f.empty_payload
        pending = {}
        counts = self.tix.children_count[tree_idx]
        leaf = self.tix.is_leaf[tree_idx]
        for i in range(g.n):
            if i == g.aggregator:
                pending[i] = counts[i]
            elif leaf[i]:
                heappush(self.useful[tree_idx][i], rid)
                self.useful_counts[tree_idx][i] += 1
                self.tree_totals[tree_idx] += 1
                self.u_total += 1
            else:
                pending[i] = counts[i]
                self.nu_total += 1
        r = _WRound(rid, tree_idx, self.slot, payloads, pending, sensed)
        if self.debug:
            r.crossed = set()
        self.rounds[rid] = r
        self.assigned[tree_idx] += 1
        return rid

    # -- per-slot dynamics ----------------------------------------------------

    def _transmit(self, tree_idx, link, count, deliveries):
        """Move up to `count` rounds across `link` from the tree's useful queue."""
        i, j = link
        heap = self.useful[tree_idx][i]
        moved = min(count, len(heap))
        for _ in range(moved):
            rid = heappop(heap)
            r = self.rounds[rid]
            if self.debug:
                if r.pending.get(i, 0) != 0:
                    raise AssertionError(
                        f"round {rid} left node {i} before aggregating its children"
                    )
                if link in r.crossed:
                    raise AssertionError(f"round {rid} crossed {link} twice")
                r.crossed.add(link)
            payload = r.payloads.pop(i)
            r.payloads[j] = self.func.combine(r.payloads[j], payload)
            r.pending[j] -= 1
            deliveries.add((rid, j))
        if moved:
            self.useful_counts[tree_idx][i] -= moved
            self.tree_totals[tree_idx] -= moved
            self.u_total -= moved
        return moved

    def _finish_round(self, r):
        f = self.func
        got = f.finalize(r.payloads[self.g.aggregator])
        expected = f.direct([r.sensed[i] for i in self.g.sensors])
        if got != expected:
            raise OracleMismatch(r.rid, got, expected)
        if self.debug and r.crossed != set(self.tix.tree_links[r.tree]):
            raise AssertionError(
                f"round {r.rid} crossed {sorted(r.crossed)} instead of its tree links"
            )
        del self.rounds[r.rid]
        m = self.metrics
        m.completed += 1
        m.latency_sum += self.slot - r.t_arrive + 1

    def step(self):
        rng = self.rng
        # 1+2: arrivals and their routing decision (queues as of slot start).
        n_arr = self._draw_arrivals()
        if n_arr:
            if self.routing == "greedy":
                tree = greedy_tree_load(self.tree_totals, rng)
                for _ in range(n_arr):
                    self._place_round(tree)
            elif self.routing == "single_tree":
                for _ in range(n_arr):
                    self._place_round(0)
            else:
                for _ in range(n_arr):
                    self._place_round(_draw_categorical(rng, self._split_cum))

        # 3: schedule selection.
        if self.scheduling == "maxweight":
            sched_idx, best_tree = maxweight_schedule(
                self.schedule_set, self.tix, self.useful_counts, rng
            )
        else:
            sched_idx = _draw_categorical(rng, self._sss_cum)
            best_tree = None
        sched = self.schedule_set.schedules[sched_idx]
        m = self.metrics
        m.schedule_counts[sched_idx] = m.schedule_counts.get(sched_idx, 0) + 1

        # 4: transmissions.
        deliveries = set()
        for link in sched.links:
            cap = int(sched.rates[link])
            if cap <= 0:
                continue
            if best_tree is not None:
                tree = best_tree.get(link)
                if tree is not None:
                    self._transmit(tree, link, cap, deliveries)
            else:
                self._serve_fifo(link, cap, deliveries)

        # 5: internal transfers and completions.
        for rid, j in sorted(deliveries):
            r = self.rounds[rid]
            if r.pending.get(j, -1) == 0:
                del r.pending[j]
                if j == self.g.aggregator:
                    self._finish_round(r)
                else:
                    heappush(self.useful[r.tree][j], rid)
                    self.useful_counts[r.tree][j] += 1
                    self.tree_totals[r.tree] += 1
                    self.u_total += 1
                    self.nu_total -= 1

        self.slot += 1

    def _serve_fifo(self, link, cap, deliveries):
        """Static scheduling: serve the link's trees in global round-id order."""
        i, _j = link
        taus = self.tix.trees_on_link.get(link)
        if not taus:
            return
        live = [t for t in taus if self.useful[t][i]]
        sent = 0
        while sent < cap and live:
            best = min(live, key=lambda t: self.useful[t][i][0])
            self._transmit(best, link, 1, deliveries)
            sent += 1
            live = [t for t in live if self.useful[t][i]]

    # -- driver ---------------------------------------------------------------

    def run(self, horizon: int, sample_every: int = None) -> WirelessMetrics:
        if horizon <= 0:
            raise BadParams("horizon must be positive")
        if sample_every is None:
            sample_every = max(1, horizon // 2000)
        m = self.metrics
        m.horizon = horizon
        for _ in range(horizon):
            self.step()
            if self.slot % sample_every == 0:
                self._sample(m)
            backlog = self.u_total + self.nu_total
            if backlog > m.max_backlog:
                m.max_backlog = backlog
        m.final_backlog = self.u_total + self.nu_total
        m.assigned_totals = list(self.assigned)
        return m

    def _sample(self, m):
        m.slots.append(self.slot)
        m.total_useful.append(self.u_total)
        m.total_nonuseful.append(self.nu_total)
        m.lyapunov.append(lyapunov_value(self.useful_counts))
        m.completed_series.append(m.completed)
        m.mean_latency_series.append(m.mean_latency)
        m.per_tree_assigned.append(tuple(self.assigned))


def run(g: NetworkGraph, schedule_set: ScheduleSet, trees, func: FmuxFunction,
        lam: float, seed: int, horizon: int, routing: str = "greedy",
        scheduling: str = "maxweight", split_weights=None, sss_rule: SSSRule = None,
        arrival_law: str = "poisson", sample_every: int = None,
        debug: bool = False) -> WirelessMetrics:
    """One simulation run; see WirelessSimulator."""
    sim = WirelessSimulator(
        g, schedule_set, trees, func,
        ArrivalProcess(arrival_law, lam), seed,
        routing=routing, scheduling=scheduling,
        split_weights=split_weights, sss_rule=sss_rule, debug=debug,
    )
    return sim.run(horizon, sample_every=sample_every)
