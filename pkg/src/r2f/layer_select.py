"""Critical-layer search: which layers to triplicate under a compute budget."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import ConfigError
from .faults import FaultConfig
from .tmr import TmrPolicy, Variant

BRUTE_FORCE_LIMIT = 10**5


def _costs(model_or_costs):
    costs = getattr(model_or_costs, "mac_counts", model_or_costs)
    return [int(c) for c in costs]


def overhead(model_or_costs, S):
    """Op-count-weighted fraction of the network inside ``S`` (exact rational)."""
    costs = _costs(model_or_costs)
    bad = [i for i in S if not 0 <= i < len(costs)]
    if bad:
        raise ConfigError(f"layer indices {bad} outside [0, {len(costs)})")
    total = sum(costs)
    if total == 0:
        return Fraction(0)
    return Fraction(sum(costs[i] for i in set(S)), total)


@dataclass
class ProtectionPlan:
    S: tuple
    r: float
    accuracy: float | None = None
    evaluations: int = 0
    history: list = field(default_factory=list)

    @property
    def s(self):
        return len(self.S)

    @property
    def extra_compute_pct(self):
        return 200.0 * self.r

    def policy(self):
        return TmrPolicy(Variant.LAYER_WISE, frozenset(self.S)) if self.S else TmrPolicy(Variant.NONE)

    def to_text(self):
        return f"S={','.join(str(i) for i in self.S)};r={self.r:.6g}"

    @classmethod
    def from_text(cls, line):
        try:
            parts = dict(p.split("=", 1) for p in line.strip().split(";"))
            S = tuple(int(v) for v in parts["S"].split(",") if v)
            return cls(S, float(parts["r"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed plan line {line!r}") from exc


def greedy_select(costs, accuracy_fn, r_max, max_layers=None):
    """Grow ``S`` one layer per round by the best accuracy of ``S + {i}``.

    Each round scores every unprotected layer (ties go to the lower index)
    and keeps the winner; when the winner pushes the overhead past
    ``r_max`` it is removed again and the search stops. ``max_layers``
    additionally caps the number of completed rounds.
    """
    if not 0 < r_max <= 1:
        raise ConfigError(f"r_max must lie in (0, 1], got {r_max}")
    costs = _costs(costs)
    limit = Fraction(r_max).limit_denominator(10**12) if isinstance(r_max, float) else Fraction(r_max)
    L = len(costs)
    S, evals, history, best_acc = [], 0, [], None
    while len(S) < L and (max_layers is None or len(S) < max_layers):
        best, best_i = -math.inf, None
        for i in range(L):
            if i in S:
                continue
            acc = accuracy_fn(tuple(sorted(S + [i])))
            evals += 1
            if acc > best:
                best, best_i = acc, i
        S.append(best_i)
        if overhead(costs, S) > limit:
            S.remove(best_i)
            history.append((best_i, best, False))
            break
        best_acc = best
        history.append((best_i, best, True))
    S = tuple(sorted(S))
    return ProtectionPlan(S, float(overhead(costs, S)), best_acc, evals, history)


def expected_evaluations(L, s_final, rejected):
    """Candidate evaluations greedy_select performs for a given outcome."""
    n = sum(L - j for j in range(s_final))
    return n + (L - s_final if rejected else 0)


def brute_force_select(costs, accuracy_fn, s):
    """Exhaustive best size-``s`` subset; returns ``(plan, scores)``.

    ``scores`` maps every subset to its accuracy. Guarded to instances with at
    most 1e5 subsets.
    """
    costs = _costs(costs)
    L = len(costs)
    n = math.comb(L, s)
    if n > BRUTE_FORCE_LIMIT:
        raise ConfigError(f"C({L},{s}) = {n} subsets exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    scores = {S: accuracy_fn(S) for S in combinations(range(L), s)}
    best = max(scores, key=lambda S: (scores[S], [-i for i in S]))
    return ProtectionPlan(best, float(overhead(costs, best)), scores[best], n), scores


def tmr_accuracy_fn(model, dataset, cfg: FaultConfig, n_eval=200, stream=0):
    """Accuracy of LW-TMR on subset ``S``; every call reuses the same fault
    streams (common random numbers) so candidates differ only by ``S``."""
    from .runtime.evaluate import evaluate

    def acc(S):
        policy = TmrPolicy(Variant.LAYER_WISE, frozenset(S)) if S else TmrPolicy(Variant.NONE)
        return evaluate(model, dataset, cfg, policy, n=n_eval, stream=stream)["top1"]

    return acc


def select_layers(model, dataset, cfg: FaultConfig, r_max, n_eval=200, max_layers=None, stream=0):
    return greedy_select(model.mac_counts, tmr_accuracy_fn(model, dataset, cfg, n_eval, stream),
                         r_max, max_layers)
