"""Exact information measures on enumerable discrete chains.

Everything here works on explicit joint probability tables, so all
quantities are exact up to float rounding. Units are nats throughout;
convert to bits only when reporting.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

ATOL = 1e-12


def _xlogx(p):
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


class JointPmf:
    """A dense joint pmf over named discrete variables."""

    def __init__(self, names, table):
        table = np.asarray(table, dtype=np.float64)
        if len(names) != table.ndim:
            raise ValueError("one name per table axis required")
        if np.any(table < -ATOL):
            raise ValueError("negative probability in joint table")
        if abs(table.sum() - 1.0) > 1e-9:
            raise ValueError(f"joint table mass {table.sum()} != 1")
        self.names = tuple(names)
        self.table = np.clip(table, 0.0, None)

    def axes(self, variables):
        if isinstance(variables, str):
            variables = (variables,)
        return tuple(self.names.index(v) for v in variables)

    def cardinality(self, variable):
        return self.table.shape[self.names.index(variable)]

    def marginal(self, variables):
        """Marginal table over `variables`, axes in the order given."""
        if isinstance(variables, str):
            variables = (variables,)
        keep = self.axes(variables)
        drop = tuple(i for i in range(self.table.ndim) if i not in keep)
        m = self.table.sum(axis=drop) if drop else self.table
        order = tuple(sorted(range(len(keep)), key=lambda i: keep[i]))
        inverse = tuple(order.index(i) for i in range(len(keep)))
        return np.transpose(m, inverse)

    def conditional(self, target, given):
        """p(target | given) as an array indexed by (*given, target)."""
        if isinstance(given, str):
            given = (given,)
        joint = self.marginal(tuple(given) + (target,))
        denom = joint.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(denom > 0, joint / np.where(denom > 0, denom, 1.0), 0.0)
        return cond


def entropy(pmf, variables):
    """Joint entropy H(variables) in nats, with 0 ln 0 := 0."""
    return float(-_xlogx(pmf.marginal(variables)).sum())


def kl(p, q):
    """KL(p || q) in nats; +inf when absolute continuity fails."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float((p[mask] * (np.log(p[mask]) - np.log(q[mask]))).sum())


def mutual_information(pmf, a, b):
    """I(a; b) = H(a) + H(b) - H(a, b) in nats."""
    if isinstance(a, str):
        a = (a,)
    if isinstance(b, str):
        b = (b,)
    return entropy(pmf, a) + entropy(pmf, b) - entropy(pmf, tuple(a) + tuple(b))


def amortized_cross_entropy(pmf, decoder, target="z", observed="y"):
    """E_{target,observed}[-ln q(target | observed)] in nats.

    Returns +inf when the decoder assigns zero mass to a pair that occurs
    with positive probability.
    """
    joint = pmf.marginal((observed, target))  # indexed (y, z)
    q = np.asarray(decoder, dtype=np.float64)
    mask = joint > 0
    if np.any(q[mask] == 0):
        return math.inf
    ce = -(joint[mask] * np.log(q[mask])).sum()
    return float(ce)


def milbo(pmf, decoder, target="z", observed="y"):
    """Mutual information lower bound H(target) - cross entropy.

    The bound is tight exactly when the decoder equals the true posterior;
    a decoder with a zero on a supported pair gives -inf.
    """
    ce = amortized_cross_entropy(pmf, decoder, target, observed)
    if ce == math.inf:
        return -math.inf
    return entropy(pmf, target) - ce


@dataclass(frozen=True)
class Decomposition:
    entropy_target: float
    mutual_information: float
    expected_kl: float
    cross_entropy: float

    @property
    def residual(self):
        return abs(self.cross_entropy
                   - (self.entropy_target - self.mutual_information
                      + self.expected_kl))


def decomposition_check(pmf, decoder, target="z", observed="y"):
    """Split the amortized cross entropy into H - I + E[KL]."""
    h = entropy(pmf, target)
    mi = mutual_information(pmf, target, observed)
    posterior = pmf.conditional(target, observed)  # (y, z)
    p_obs = pmf.marginal(observed)
    q = np.asarray(decoder, dtype=np.float64)
    ekl = 0.0
    for yi in range(posterior.shape[0]):
        if p_obs[yi] == 0:
            continue
        d = kl(posterior[yi], q[yi])
        if d == math.inf:
            ekl = math.inf
            break
        ekl += p_obs[yi] * d
    ce = amortized_cross_entropy(pmf, decoder, target, observed)
    return Decomposition(h, mi, ekl, ce)


def compression_bound_check(pmf, components, source="s", code="x"):
    """The chain I(source; code) <= H(code) <= sum_j H(code_j).

    `components` are the cardinalities of the code components; their product
    must equal the cardinality of the code variable (mixed-radix decoding,
    most significant component first). Returns (I, H, sum_H_components).
    """
    card = pmf.cardinality(code)
    prod = int(np.prod(components))
    if prod != card:
        raise ValueError(f"component cardinalities {components} do not "
                         f"factor |{code}| = {card}")
    mi = mutual_information(pmf, source, code)
    h = entropy(pmf, code)
    marg = pmf.marginal(code)
    total = 0.0
    radix = card
    for c in components:
        radix //= c
        comp = np.zeros(c)
        for value in range(card):
            comp[(value // radix) % c] += marg[value]
        total += float(-_xlogx(comp).sum())
    return mi, h, total


def jscc_objective(pmf, source="s", observed="y"):
    """The classic design objective I(source; observed)."""
    return mutual_information(pmf, source, observed)


def ib_lagrangian(pmf, lagrange, target="z", source="s", code="x", observed="y"):
    """I(target; observed) - lagrange * I(source; code)."""
    return (mutual_information(pmf, target, observed)
            - lagrange * mutual_information(pmf, source, code))


@dataclass(frozen=True)
class IbSweepPoint:
    cardinality: int
    bound_nats: float       # entropy-sum cap for this output dimension
    best_information: float
    encoder: tuple          # deterministic map source -> code
    exhausted: bool         # True when the search space was fully enumerated


def ib_sweep(prior_z, p_s_given_z, channel_for_cardinality, cardinalities,
             budget=200000):
    """Best relevant information per output cardinality, deterministic encoders.

    For each output cardinality c the channel factory supplies p(y|x) on a
    c-symbol input alphabet. Encoders are deterministic maps s -> x; the
    search is exhaustive while c^|S| stays within `budget`, otherwise greedy
    coordinate ascent from the identity-like map (flagged via `exhausted`).
    """
    from .semantics import ToyChainSpec, enumerate_joint

    prior_z = np.asarray(prior_z, dtype=np.float64)
    p_s_given_z = np.asarray(p_s_given_z, dtype=np.float64)
    n_s = p_s_given_z.shape[1]
    points = []
    for c in cardinalities:
        p_y_given_x = np.asarray(channel_for_cardinality(c), dtype=np.float64)

        def info(mapping):
            enc = np.zeros((n_s, c))
            enc[np.arange(n_s), mapping] = 1.0
            spec = ToyChainSpec(prior_z, p_s_given_z, enc, p_y_given_x)
            return mutual_information(enumerate_joint(spec), "z", "y")

        exhausted = c ** n_s <= budget
        if exhausted:
            best_map, best = None, -math.inf
            for mapping in itertools.product(range(c), repeat=n_s):
                value = info(mapping)
                if value > best + 1e-15:
                    best, best_map = value, mapping
        else:
            mapping = [s % c for s in range(n_s)]
            best = info(mapping)
            improved = True
            while improved:
                improved = False
                for s in range(n_s):
                    current = mapping[s]
                    for x in range(c):
                        if x == current:
                            continue
                        mapping[s] = x
                        value = info(mapping)
                        if value > best + 1e-12:
                            best, current, improved = value, x, True
                        else:
                            mapping[s] = current
                    mapping[s] = current
            best_map = tuple(mapping)
        points.append(IbSweepPoint(c, math.log(c), best, tuple(best_map),
                                   exhausted))
    return points


def nats_to_bits(x):
    return x / math.log(2.0)
