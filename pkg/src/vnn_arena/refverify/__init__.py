"""Reference verifier and falsifier: IBP, input-splitting branch and bound, PGD."""

from .attack import AttackConfig, pgd_attack
from .bab import BabConfig, Status, VerifierConfig, VerifyOutcome, VerifyStats, split_box, verify
from .ibp import IntervalVector, decide_disjunct_unsat, ibp_batch, ibp_bounds

__all__ = [
    "AttackConfig",
    "BabConfig",
    "IntervalVector",
    "Status",
    "VerifierConfig",
    "VerifyOutcome",
    "VerifyStats",
    "decide_disjunct_unsat",
    "ibp_batch",
    "ibp_bounds",
    "pgd_attack",
    "split_box",
    "verify",
]
