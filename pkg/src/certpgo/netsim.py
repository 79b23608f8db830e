"""Deterministic peer-to-peer emulation of the block solver.

Each robot is an :class:`Agent` owning its own block of the lifted state.
Agents exchange only separator poses (poses incident to inter-robot edges)
through :class:`Message` values carried by a discrete-tick scheduler with
seeded latency and drops. Lost messages are recovered by acknowledgement
and timeout-driven retransmission; every channel is FIFO.

In ``synchronous_rounds`` mode a token visits the robots in round-robin
order and its holder updates only once its cache holds every neighbor's
latest separators, so the run is exactly block Gauss-Seidel regardless of
latency or loss. ``asynchronous`` mode lets agents update on whatever they
have cached (best effort).
"""

from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CertPGOError
from .graph import MultiRobotGraph, require_valid
from .quadratic import ConnectionLaplacian, LiftedState, assemble, block_submatrices, node_columns, project_tangent
from .solver import BlockData, SolverOptions, SolveTrace, Termination, block_step, initialize

log = logging.getLogger(__name__)

TIMEOUT_TICKS = 3
BYTES_PER_ENTRY = 8


class SeparatorLeak(CertPGOError, AssertionError):
    """A message or read touched state outside the allowed separator set."""


class Mode(str, enum.Enum):
    SYNCHRONOUS = "synchronous_rounds"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class NetworkProfile:
    latency: int | tuple[int, int] = 0
    drop_prob: float = 0.0
    mode: Mode = Mode.SYNCHRONOUS

    def __post_init__(self):
        lo, hi = self.latency_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad latency {self.latency!r}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def latency_range(self) -> tuple[int, int]:
        if isinstance(self.latency, tuple | list):
            return int(self.latency[0]), int(self.latency[1])
        return int(self.latency), int(self.latency)

    @classmethod
    def parse(cls, text: str) -> "NetworkProfile":
        """``"latency=1-5,drop=0.3,mode=asynchronous"``; every key optional."""
        kw = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, val = item.partition("=")
            key = key.strip()
            if key == "latency":
                lo, _, hi = val.partition("-")
                kw["latency"] = (int(lo), int(hi)) if hi else int(lo)
            elif key in ("drop", "drop_prob"):
                kw["drop_prob"] = float(val)
            elif key == "mode":
                kw["mode"] = Mode(val.strip())
            else:
                raise ValueError(f"unknown profile key {key!r}")
        return cls(**kw)


@dataclass(frozen=True)
class Message:
    """Separator poses of ``from_robot`` that ``to_robot`` needs."""

    from_robot: int
    to_robot: int
    sweep_number: int
    nodes: tuple  # global pose indices, all separators of this channel
    payload: np.ndarray  # r x (d+1)*len(nodes), columns [Y_i | p_i] per node
    sequence: int

    @property
    def entries(self) -> int:
        return int(self.payload.size)

    @property
    def size_bytes(self) -> int:
        return self.entries * BYTES_PER_ENTRY


@dataclass(frozen=True)
class Control:
    """Token or acknowledgement; carries no pose data."""

    kind: str  # "token" or "ack"
    from_robot: int
    to_robot: int
    sequence: int
    content: object = None


@dataclass
class Token:
    versions: tuple  # update count of every robot when the token was passed
    round: int = 0
    cost: float = 0.0  # summed cost shares over the current round
    max_grad: float = 0.0
    quiet_rounds: int = 0
    done: bool = False


class Agent:
    """One robot: owns its block, its block data and a cache of neighbor separators."""

    def __init__(self, robot: int, d: int, offset: int, x: np.ndarray, blk: BlockData, couplings: dict):
        self.robot = robot
        self.d = d
        self.offset = offset
        self._x = x.copy()
        self.blk = blk
        self.updates = 0
        # neighbor -> (own local columns, neighbor node ids, coupling matrix)
        self._links = {}
        self.send_nodes = {}
        for nbr, c in couplings.items():
            own_cols = node_columns(np.asarray(c.own_nodes) - offset, d)
            self._links[nbr] = (own_cols, tuple(int(v) for v in c.neighbor_nodes), c.matrix.tocsr())
            self.send_nodes[nbr] = tuple(int(v) for v in c.own_nodes)
        self._cache: dict[int, np.ndarray] = {}
        self.cache_version = {nbr: -1 for nbr in self._links}
        self.reads: set[int] = set()  # global node ids of foreign state ever read
        self.fresh = True

    @property
    def neighbors(self):
        return sorted(self._links)

    @property
    def state(self) -> np.ndarray:
        return self._x

    def set_state(self, x: np.ndarray):
        self._x = x.copy()

    def outgoing(self, nbr: int) -> tuple[tuple, np.ndarray]:
        nodes = self.send_nodes[nbr]
        cols = node_columns(np.asarray(nodes) - self.offset, self.d)
        return nodes, self._x[:, cols].copy()

    def receive(self, msg: Message):
        if msg.to_robot != self.robot or msg.from_robot not in self._links:
            raise SeparatorLeak(f"robot {self.robot} got a message on channel {msg.from_robot}->{msg.to_robot}")
        if msg.sweep_number <= self.cache_version[msg.from_robot]:
            return
        self._cache[msg.from_robot] = msg.payload
        self.cache_version[msg.from_robot] = msg.sweep_number
        self.fresh = True

    def ready(self, versions) -> bool:
        return all(self.cache_version[n] >= versions[n] for n in self._links)

    def external(self) -> np.ndarray:
        ext = np.zeros_like(self._x)
        for nbr, (own_cols, their_nodes, mat) in self._links.items():
            sep = self._cache.get(nbr)
            if sep is None:
                continue
            self.reads.update(their_nodes)
            ext[:, own_cols] += np.asarray((mat @ sep.T).T)
        return ext

    def local_status(self):
        """(gradient norm, cost share) of the own block against the cache."""
        ext = self.external()
        xl = self.blk.times_lbb(self._x)
        grad = project_tangent(self._x, 2.0 * (xl + ext), self.d)
        share = float(np.sum(self._x * xl) + np.sum(self._x * ext))
        return float(np.linalg.norm(grad)), share, ext

    def update(self, options: SolverOptions, tol: float, ext: np.ndarray | None = None, relax: bool = True):
        ext = self.external() if ext is None else ext
        res = block_step(self.blk, self._x, ext, options.inner_steps, options.inner_solver, tol, relax=relax)
        if res.decrease > 0:
            self._x = res.x
        self.updates += 1
        self.fresh = False
        return res


@dataclass
class LogEntry:
    tick: int
    from_robot: int
    to_robot: int
    sweep: int
    size: int
    retransmission: bool = False


@dataclass
class Traffic:
    messages: int = 0
    bytes: int = 0
    control_messages: int = 0
    retransmissions: int = 0
    dropped: int = 0
    per_robot_sent: list = field(default_factory=list)
    per_robot_received: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "messages": self.messages,
            "bytes": self.bytes,
            "control_messages": self.control_messages,
            "retransmissions": self.retransmissions,
            "dropped": self.dropped,
            "per_robot_sent": list(self.per_robot_sent),
            "per_robot_received": list(self.per_robot_received),
        }

    def write_log(self, path):
        with open(path, "w") as fh:
            for e in self.log:
                fh.write(f"{e.tick} {e.from_robot} {e.to_robot} {e.sweep} {e.size}\n")


class _Network:
    """Per-channel FIFO delivery with seeded latency, drops and retransmission."""

    def __init__(self, profile: NetworkProfile, rng: np.random.Generator, num_robots: int):
        self.profile = profile
        self.rng = rng
        self.queue = []  # (deliver_tick, order, item)
        self.order = 0
        self.last_delivery = {}
        self.seq = {}
        self.pending = {}  # (src, dst, seq) -> [item, deadline]
        self.seen = {}  # (src, dst) -> delivered sequence numbers
        self.traffic = Traffic(per_robot_sent=[0] * num_robots, per_robot_received=[0] * num_robots)
        lo, hi = profile.latency_range
        self.timeout = 2 * hi + TIMEOUT_TICKS

    def _latency(self) -> int:
        lo, hi = self.profile.latency_range
        return lo if lo == hi else int(self.rng.integers(lo, hi + 1))

    def _transmit(self, item, tick: int, retransmission: bool = False):
        chan = (item.from_robot, item.to_robot)
        t = self.traffic
        if isinstance(item, Message):
            t.messages += 1
            t.bytes += item.size_bytes
            t.per_robot_sent[item.from_robot] += 1
            t.retransmissions += int(retransmission)
            t.log.append(LogEntry(tick, item.from_robot, item.to_robot, item.sweep_number, item.size_bytes,
                                  retransmission))
        else:
            t.control_messages += 1
        lost = self.profile.drop_prob > 0 and self.rng.random() < self.profile.drop_prob
        lat = self._latency()
        if lost:
            t.dropped += 1
            return
        when = max(tick + lat, self.last_delivery.get(chan, 0))
        self.last_delivery[chan] = when
        heapq.heappush(self.queue, (when, self.order, item))
        self.order += 1

    def send(self, item, tick: int):
        chan = (item.from_robot, item.to_robot)
        self.seq[chan] = self.seq.get(chan, 0) + 1
        if isinstance(item, Message):
            item = Message(item.from_robot, item.to_robot, item.sweep_number, item.nodes, item.payload, self.seq[chan])
        else:
            item = Control(item.kind, item.from_robot, item.to_robot, self.seq[chan], item.content)
        if not (isinstance(item, Control) and item.kind == "ack"):
            self.pending[(chan[0], chan[1], item.sequence)] = [item, tick + self.timeout]
        self._transmit(item, tick)

    def deliver(self, tick: int):
        """Items arriving at ``tick`` (duplicates filtered); acks are consumed here."""
        out = []
        while self.queue and self.queue[0][0] <= tick:
            _, _, item = heapq.heappop(self.queue)
            chan = (item.from_robot, item.to_robot)
            if isinstance(item, Control) and item.kind == "ack":
                self.pending.pop((item.to_robot, item.from_robot, item.content), None)
                continue
            # acknowledge every copy so a lost ack is eventually repaired
            self._transmit(Control("ack", item.to_robot, item.from_robot, 0, item.sequence), tick)
            seen = self.seen.setdefault(chan, set())
            if item.sequence in seen:
                continue
            seen.add(item.sequence)
            if isinstance(item, Message):
                self.traffic.per_robot_received[item.to_robot] += 1
            out.append(item)
        return out

    def retransmit(self, tick: int):
        for key in sorted(self.pending):
            entry = self.pending[key]
            if entry[1] <= tick:
                entry[1] = tick + self.timeout
                self._transmit(entry[0], tick, retransmission=True)

    @property
    def idle(self) -> bool:
        return not self.queue and not self.pending


@dataclass
class DecentralizedRun:
    state: LiftedState
    trace: SolveTrace
    traffic: Traffic
    agents: list
    ticks: int

    def __iter__(self):
        yield self.state
        yield self.trace
        yield self.traffic


def _build_agents(L: ConnectionLaplacian, state: LiftedState) -> list[Agent]:
    agents = []
    for robot in range(L.num_robots):
        l_bb, couplings = block_submatrices(L, robot)
        cols = L.robot_columns(robot)
        agents.append(Agent(robot, L.d, int(L.robot_offsets[robot]), state.X[:, cols],
                            BlockData(l_bb, L.d, robot), couplings))
    # setup: every agent starts from the shared initial guess, so caches are
    # seeded with the neighbors' initial separators (version 0) without traffic
    for a in agents:
        for nbr in a.neighbors:
            nodes, payload = agents[nbr].outgoing(a.robot)
            a.receive(Message(nbr, a.robot, 0, nodes, payload, 0))
    return agents


def run_decentralized(graph: MultiRobotGraph, options: SolverOptions | None = None,
                      profile: NetworkProfile | None = None, seed: int = 0, init="spanning_tree",
                      L: ConnectionLaplacian | None = None, max_ticks: int | None = None) -> DecentralizedRun:
    """Run the block solver as message-passing agents.

    Termination: the token's holder at the start of a round declares
    convergence after two consecutive full rounds in which every agent's
    local gradient norm (measured when it held the token) was at most
    ``tol / sqrt(R)``, so the full gradient is at most ``tol``. The run also
    stops after ``options.max_sweeps`` rounds. Unpack as ``(state, trace, traffic)``.
    """
    options = options or SolverOptions()
    profile = profile or NetworkProfile()
    require_valid(graph)
    L = L if L is not None else assemble(graph)
    if isinstance(init, LiftedState):
        state = init.copy()
    else:
        state = initialize(graph, init, options.ranks(graph.d)[0], options.seed)
    nrob = L.num_robots
    agents = _build_agents(L, state)
    rng = np.random.default_rng(seed)
    net = _Network(profile, rng, nrob)
    sync = profile.mode is Mode.SYNCHRONOUS
    trace = SolveTrace()
    trace.termination = Termination.MAX_SWEEPS

    def gather() -> LiftedState:
        return LiftedState(np.hstack([a.state for a in agents]), L.d)

    def observe():
        from .quadratic import cost, riemannian_gradient  # observer only, never used by agents
        st = gather()
        trace.record(cost(L, st), float(np.linalg.norm(riemannian_gradient(L, st))), st.r)

    def broadcast(agent: Agent, tick: int):
        for nbr in agent.neighbors:
            nodes, payload = agent.outgoing(nbr)
            _check_separators(graph, L, agent.robot, nbr, nodes)
            net.send(Message(agent.robot, nbr, agent.updates, nodes, payload, 0), tick)

    def pass_token(holder: int, token: Token, tick: int):
        nxt = (holder + 1) % nrob
        if nxt == holder:
            held[holder] = token
        else:
            net.send(Control("token", holder, nxt, 0, replace(token)), tick)

    observe()
    held: dict[int, Token] = {0: Token(versions=tuple(a.updates for a in agents))}
    tol = options.tolerance(trace.costs[-1])
    max_ticks = max_ticks or 10_000_000
    tick = 0
    done = False
    while tick < max_ticks and not done:
        for item in net.deliver(tick):
            if isinstance(item, Message):
                agents[item.to_robot].receive(item)
            else:
                held[item.to_robot] = item.content
        if not sync:
            for a in agents:
                if a.fresh and a.robot not in held:
                    gnorm, _, ext = a.local_status()
                    if gnorm > tol / np.sqrt(nrob):
                        a.update(options, 0.1 * tol / np.sqrt(nrob), ext, relax=False)
                        broadcast(a, tick)
                    a.fresh = False
        for robot in sorted(held):
            token = held[robot]
            a = agents[robot]
            if sync and not a.ready(token.versions):
                continue
            del held[robot]
            if robot == 0 and a.updates > 0:
                # a full round has completed
                observe()
                tol = options.tolerance(max(token.cost, 0.0)) if options.grad_tol is None else options.grad_tol
                quiet = token.max_grad <= tol / np.sqrt(nrob)
                token.quiet_rounds = token.quiet_rounds + 1 if quiet else 0
                token.round += 1
                if token.quiet_rounds >= 2:
                    trace.termination = Termination.CONVERGED
                    done = True
                    break
                if token.round >= options.max_sweeps:
                    done = True
                    break
                token.cost, token.max_grad = 0.0, 0.0
            gnorm, share, ext = a.local_status()
            token.cost += share
            token.max_grad = max(token.max_grad, gnorm)
            a.update(options, 0.1 * tol / np.sqrt(nrob), ext if sync else None, relax=sync)
            trace.block_updates += 1
            broadcast(a, tick)
            versions = list(token.versions)
            versions[robot] = a.updates
            token.versions = tuple(versions)
            pass_token(robot, token, tick)
        net.retransmit(tick)
        tick += 1
    if not done:
        log.warning("run_decentralized: tick budget exhausted")
    if not done:
        observe()
    _check_reads(graph, L, agents)
    return DecentralizedRun(gather(), trace, net.traffic, agents, tick)


def _separators(L: ConnectionLaplacian, a: int, b: int) -> set[int]:
    rs, rd = L.robot_of(L.src), L.robot_of(L.dst)
    sel = ((rs == a) & (rd == b)) | ((rs == b) & (rd == a))
    return set(L.src[sel].tolist()) | set(L.dst[sel].tolist())


def _check_separators(graph, L, src: int, dst: int, nodes):
    allowed = _separators(L, src, dst)
    lo, hi = L.robot_offsets[src], L.robot_offsets[src + 1]
    bad = [v for v in nodes if v not in allowed or not lo <= v < hi]
    if bad:
        raise SeparatorLeak(f"message {src}->{dst} would carry non-separator poses {bad[:5]}")


def _check_reads(graph, L, agents):
    for a in agents:
        allowed = set()
        for nbr in a.neighbors:
            lo, hi = L.robot_offsets[nbr], L.robot_offsets[nbr + 1]
            allowed |= {v for v in _separators(L, a.robot, nbr) if lo <= v < hi}
        if not a.reads <= allowed:
            raise SeparatorLeak(f"agent {a.robot} read foreign non-separator state")


def traffic_report(run) -> dict:
    """Message and byte counts of a finished run (``DecentralizedRun`` or ``Traffic``)."""
    traffic = run.traffic if isinstance(run, DecentralizedRun) else run
    return traffic.as_dict()
