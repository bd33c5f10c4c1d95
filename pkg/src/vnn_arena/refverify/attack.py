"""Projected sign-gradient falsifier over the disjuncts of a query.

The loss for each restart is the most violated constraint of the disjunct;
each step ascends that constraint's slack and projects back into the box.
Candidates are accepted only after :func:`vnn_arena.witness.validate` agrees
at default tolerances, so a returned witness is always a genuine one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netio.graph import NetworkGraph, evaluate_batch, vjp_batch
from ..speclang import AdversarialQuery, Disjunct
from ..witness import Witness, validate


@dataclass
class AttackConfig:
    enabled: bool = True
    steps: int = 30
    restarts: int = 5
    step_fraction: float = 0.25
    decay: float = 0.8
    decay_every: int = 10

    def __post_init__(self):
        if self.steps < 0 or self.restarts < 1 or self.decay_every < 1:
            raise ValueError("attack budgets must be positive")
        if not (self.step_fraction > 0 and 0 < self.decay <= 1):
            raise ValueError("attack step rule out of range")


def _try_rows(net, query, X, S) -> Witness | None:
    for r in np.nonzero(S.min(axis=1) >= 0.0)[0] if S.shape[1] else range(len(X)):
        w = Witness(tuple(X[r]))
        if validate(w, query, net).valid:
            return w
    return None


def attack_disjunct(net: NetworkGraph, query: AdversarialQuery, d: Disjunct, cfg: AttackConfig,
                    rng: np.random.Generator, lo: np.ndarray | None = None,
                    hi: np.ndarray | None = None) -> tuple[Witness | None, int]:
    """PGD inside ``[lo, hi]`` (defaults to the disjunct's box). Returns ``(witness, iterations)``."""
    if lo is None:
        lo, hi = d.box.arrays()
    A, c = d.constraint_matrix(query.num_outputs)
    X = rng.uniform(lo, hi, size=(cfg.restarts, lo.shape[0]))
    step = cfg.step_fraction * (hi - lo)
    iters = 0
    for t in range(cfg.steps + 1):
        Y = evaluate_batch(net, X)
        S = Y @ A.T - c if A.shape[0] else np.zeros((len(X), 0))
        w = _try_rows(net, query, X, S)
        if w is not None:
            return w, iters
        if t == cfg.steps or A.shape[0] == 0:
            break
        worst = np.argmin(S, axis=1)
        G = vjp_batch(net, X, A[worst])
        X = np.clip(X + step * np.sign(G), lo, hi)
        iters += 1
        if (t + 1) % cfg.decay_every == 0:
            step = step * cfg.decay
    return None, iters


def run_attack(net: NetworkGraph, query: AdversarialQuery, cfg: AttackConfig,
               seed: int = 0) -> tuple[Witness | None, int]:
    total = 0
    for k, d in enumerate(query.disjuncts):
        if d.is_vacuous:
            continue
        rng = np.random.default_rng([seed, k])
        w, it = attack_disjunct(net, query, d, cfg, rng)
        total += it
        if w is not None:
            return w, total
    return None, total


def pgd_attack(net: NetworkGraph, query: AdversarialQuery, config=None, seed: int | None = None) -> Witness | None:
    """Best-effort falsification; ``None`` proves nothing.

    ``config`` may be an :class:`AttackConfig` or a full ``VerifierConfig``
    (whose attack settings and seed are used).
    """
    query.check_network(net.d_in, net.d_out)
    cfg = config if config is not None else AttackConfig()
    if hasattr(cfg, "attack"):
        seed = cfg.seed if seed is None else seed
        cfg = cfg.attack
    w, _ = run_attack(net, query, cfg, 0 if seed is None else seed)
    return w
