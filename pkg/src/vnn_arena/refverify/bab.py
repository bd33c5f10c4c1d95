"""Complete-at-desk-scale verification by input-splitting branch and bound."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from ..netio.graph import NetworkGraph, evaluate_batch
from ..speclang import AdversarialQuery, Disjunct
from ..witness import Witness, validate
from .attack import AttackConfig, attack_disjunct, run_attack
from .ibp import ibp_batch, refuted_mask


@dataclass
class BabConfig:
    max_depth: int = 20
    max_subproblems: int = 10_000
    split_rule: str = "widest"
    batch_size: int = 32
    leaf_attack_steps: int = 10
    leaf_attack_restarts: int = 2

    def __post_init__(self):
        if self.max_depth < 0 or self.max_subproblems < 1 or self.batch_size < 1:
            raise ValueError("branch-and-bound budgets must be positive")
        if self.split_rule != "widest":
            raise ValueError(f"unknown split rule {self.split_rule!r}")


@dataclass
class VerifierConfig:
    attack: AttackConfig = field(default_factory=AttackConfig)
    bab: BabConfig = field(default_factory=BabConfig)
    time_budget: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if not self.time_budget > 0:
            raise ValueError("time budget must be positive")


class Status(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class VerifyStats:
    subproblems: int = 0
    attack_iterations: int = 0
    elapsed: float = 0.0
    reason: str = ""


@dataclass
class VerifyOutcome:
    status: Status
    witness: Witness | None = None
    stats: VerifyStats = field(default_factory=VerifyStats)


class _Budget(Exception):
    pass


def split_box(lo: np.ndarray, hi: np.ndarray) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Halve the widest dimension (lowest index on ties); children share the midpoint face."""
    dim = int(np.argmax(hi - lo))
    mid = 0.5 * (lo[dim] + hi[dim])
    left_hi = hi.copy()
    left_hi[dim] = mid
    right_lo = lo.copy()
    right_lo[dim] = mid
    return (lo, left_hi), (right_lo, hi)


class _Search:
    def __init__(self, net: NetworkGraph, query: AdversarialQuery, config: VerifierConfig):
        self.net = net
        self.query = query
        self.cfg = config
        self.stats = VerifyStats()
        self.t0 = time.perf_counter()
        self.leaf_cfg = AttackConfig(steps=config.bab.leaf_attack_steps,
                                     restarts=config.bab.leaf_attack_restarts,
                                     step_fraction=config.attack.step_fraction,
                                     decay=config.attack.decay, decay_every=config.attack.decay_every)

    def _tick(self, n: int = 0) -> None:
        self.stats.subproblems += n
        if time.perf_counter() - self.t0 > self.cfg.time_budget:
            self.stats.reason = "time budget exhausted"
            raise _Budget
        if self.stats.subproblems > self.cfg.bab.max_subproblems:
            self.stats.reason = "subproblem budget exhausted"
            raise _Budget

    def _check_points(self, X: np.ndarray, A: np.ndarray, c: np.ndarray) -> Witness | None:
        Y = evaluate_batch(self.net, X)
        S = Y @ A.T - c if A.shape[0] else np.zeros((len(X), 0))
        hits = np.nonzero(S.min(axis=1) >= 0.0)[0] if S.shape[1] else range(len(X))
        for r in hits:
            w = Witness(tuple(X[r]))
            if validate(w, self.query, self.net).valid:
                return w
        return None

    def disjunct(self, k: int, d: Disjunct) -> tuple[str, Witness | None]:
        """Returns ``("unsat"|"sat"|"unknown", witness)``."""
        A, c = d.constraint_matrix(self.query.num_outputs)
        lo, hi = d.box.arrays()
        rng = np.random.default_rng([self.cfg.seed, 1000 + k])
        self._tick(1)
        L, U = ibp_batch(self.net, lo[None], hi[None])
        if refuted_mask(L, U, A, c)[0]:
            return "unsat", None
        w = self._check_points(0.5 * (lo + hi)[None], A, c)
        if w is not None:
            return "sat", w
        stack = [(lo, hi, 0)]
        exhausted_leaf = False
        bs = self.cfg.bab.batch_size
        while stack:
            batch, stack = stack[-bs:], stack[:-bs]
            children = []
            for blo, bhi, depth in batch:
                if depth >= self.cfg.bab.max_depth:
                    w, it = attack_disjunct(self.net, self.query, d, self.leaf_cfg, rng, blo, bhi)
                    self.stats.attack_iterations += it
                    if w is not None:
                        return "sat", w
                    exhausted_leaf = True
                    continue
                for clo, chi in split_box(blo, bhi):
                    children.append((clo, chi, depth + 1))
            if not children:
                continue
            self._tick(len(children))
            CL = np.stack([ch[0] for ch in children])
            CU = np.stack([ch[1] for ch in children])
            L, U = ibp_batch(self.net, CL, CU)
            open_ = ~refuted_mask(L, U, A, c)
            if not open_.any():
                continue
            w = self._check_points(0.5 * (CL[open_] + CU[open_]), A, c)
            if w is not None:
                return "sat", w
            # deeper boxes go on top so the search stays depth-first
            stack.extend(ch for ch, keep in zip(children, open_) if keep)
        return ("unknown", None) if exhausted_leaf else ("unsat", None)


def verify(net: NetworkGraph, query: AdversarialQuery, config: VerifierConfig | None = None) -> VerifyOutcome:
    """Attack first, then per-disjunct IBP with input-splitting branch and bound.

    ``Unsat`` only when every disjunct is refuted; budget or depth exhaustion
    yields ``Unknown``.
    """
    cfg = config or VerifierConfig()
    query.check_network(net.d_in, net.d_out)
    search = _Search(net, query, cfg)
    st = search.stats

    def done(status, witness=None):
        st.elapsed = time.perf_counter() - search.t0
        return VerifyOutcome(status, witness, st)

    if cfg.attack.enabled:
        w, it = run_attack(net, query, cfg.attack, cfg.seed)
        st.attack_iterations += it
        if w is not None:
            return done(Status.SAT, w)
    undecided = False
    for k, d in enumerate(query.disjuncts):
        if d.is_vacuous:
            st.subproblems += 1
            continue
        try:
            result, w = search.disjunct(k, d)
        except _Budget:
            return done(Status.UNKNOWN)
        if result == "sat":
            return done(Status.SAT, w)
        if result == "unknown":
            undecided = True
    if undecided:
        st.reason = st.reason or "depth limit reached without refutation"
        return done(Status.UNKNOWN)
    return done(Status.UNSAT)
