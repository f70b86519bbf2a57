"""Convergence conditions, global minima, loss-reduction decompositions and
the pointwise / integrated checks of the linear-rate bounds.

Every Kronecker-structured quadratic form is evaluated through matrix
contractions::

    ||vec M||^2_{F_(l)}      = ||Bbar^(1:l) M^T||_F^2
    J_(i,l) vec M            = vec[(W_(l) Bbar^(i+1:l))^T M (Bbar^(1:i-1))^T]

so nothing of size (m_x m_y)^2 is ever formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (ComparisonUndefinedError, ReportError,
                     UnsupportedArchitectureError)
from .gradients import (LossKind, ResidualGrad, analytic_gradients, evaluate)
from .graph import propagated_features, stacked_features
from .linalg import (as_matrix, frob_sq, least_squares_residual, row_space_basis,
                     smallest_gram_eigenvalue, smallest_singular_value)
from .model import (Architecture, GnnParams, end_to_end, forward, layer_products,
                    prefix_products)

logger = logging.getLogger(__name__)

# pointwise differential checks: lhs <= rhs + PW_TOL * (1 + |rhs|)
PW_TOL = 1e-8
# premise tolerance for monotone chains of global minima
PREMISE_TOL = 1e-9
# multiplicative slack on integrated bounds (absorbs Euler discretisation)
BOUND_SLACK = 1.05
# absolute floor on integrated bounds, at the level of float round-off
BOUND_ATOL = 1e-12


class GraphProblem:
    """Data of one regression/classification instance: ``X``, ``S``, ``idx``, ``Y``.

    Propagated features, their smallest singular values and the global minima
    are computed once and cached.
    """

    def __init__(self, X, S, idx, Y=None):
        self.X = as_matrix(X, "X")
        self.S = as_matrix(S, "S")
        self.idx = np.asarray(idx, dtype=np.int64)
        self.Y = None if Y is None else as_matrix(Y, "Y")
        self._cache = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def features(self, l):
        return self._memo(("feat", l), lambda: propagated_features(self.X, self.S, l, self.idx))

    def stacked(self, H):
        return self._memo(("stack", H), lambda: stacked_features(self.X, self.S, H, self.idx))

    def sigma_sq(self, l):
        return self._memo(("sig", l), lambda: smallest_singular_value(self.features(l)) ** 2)

    def sigma_sq_stacked(self, H):
        return self._memo(("sigG", H), lambda: smallest_singular_value(self.stacked(H)) ** 2)

    def _need_y(self):
        if self.Y is None:
            raise ValueError("global minima need targets Y")

    def global_min(self, l):
        self._need_y()
        return self._memo(("Lstar", l), lambda: least_squares_residual(self.features(l), self.Y)[0])

    def global_min_multiscale(self, H):
        self._need_y()
        return self._memo(("LstarG", H), lambda: least_squares_residual(self.stacked(H), self.Y)[0])


def global_minimum(X, S, idx, Y, depth: int, multiscale: bool = False) -> float:
    """``L*_depth`` (single scale) or ``L*_{1:depth}`` (all scales jointly).

    Assumes hidden widths leave the end-to-end map unconstrained; otherwise the
    value is a lower bound on the rank-constrained optimum.
    """
    p = GraphProblem(X, S, idx, Y)
    return p.global_min_multiscale(depth) if multiscale else p.global_min(depth)


def warn_if_width_constrained(params: GnnParams):
    m_x, m_y = params.dims[0], params.m_y
    if min(params.dims[1:], default=m_x) < min(m_x, m_y):
        logger.warning("hidden widths %s below min(m_x, m_y)=%d: global minimum is only a lower bound",
                       list(params.dims[1:]), min(m_x, m_y))


@dataclass
class ConditionReport:
    arch: str
    depths: list
    sigma_sq_linear: list
    sigma_sq_multiscale: list
    global_min_linear: Optional[list] = None
    global_min_multiscale: Optional[list] = None

    def to_dict(self):
        return {
            "arch": self.arch,
            "depths": list(self.depths),
            "sigma_sq_linear": list(self.sigma_sq_linear),
            "sigma_sq_multiscale": list(self.sigma_sq_multiscale),
            "global_min_linear": self.global_min_linear,
            "global_min_multiscale": self.global_min_multiscale,
        }

    def graph_condition_holds(self, depth=None, tol=0.0) -> bool:
        """Positivity of the relevant sigma^2 at ``depth`` (default: deepest)."""
        i = -1 if depth is None else self.depths.index(depth)
        series = self.sigma_sq_multiscale if self.arch == "multiscale" else self.sigma_sq_linear
        return series[i] > tol


def condition_report(X, S, idx, H_max: int, arch="linear", Y=None) -> ConditionReport:
    """sigma^2_min of the single-scale and stacked features for every depth <= H_max,
    plus the matching global minima when ``Y`` is given."""
    if H_max < 0:
        raise ValueError("H_max must be nonnegative")
    p = GraphProblem(X, S, idx, Y)
    depths = list(range(H_max + 1))
    rep = ConditionReport(
        arch="multiscale" if Architecture(arch).multiscale else "linear",
        depths=depths,
        sigma_sq_linear=[p.sigma_sq(l) for l in depths],
        sigma_sq_multiscale=[p.sigma_sq_stacked(l) for l in depths],
    )
    if Y is not None:
        rep.global_min_linear = [p.global_min(l) for l in depths]
        rep.global_min_multiscale = [p.global_min_multiscale(l) for l in depths]
    return rep


# ---------------------------------------------------------------------------
# loss-reduction decomposition

@dataclass
class DecompositionTerms:
    """Terms of the exact loss-reduction formula at one parameter state.

    ``first_terms[j]`` belongs to scale ``scales[j]``; ``second_terms[i-1]`` to
    layer ``i``. ``a``/``b`` (multiscale only) are the skip-connection and
    last-layer parts of each layer term, stored as ``m_i x m_{i-1}`` matrices.
    """

    scales: list
    first_terms: list
    second_terms: list
    dLdt_analytic: float
    a: Optional[list] = None
    b: Optional[list] = None
    condition_value: Optional[float] = None

    @property
    def sum_first(self):
        return float(sum(self.first_terms))

    @property
    def sum_second(self):
        return float(sum(self.second_terms))

    def to_dict(self, include_vectors=True):
        d = {
            "scales": list(self.scales),
            "first_terms": list(self.first_terms),
            "second_terms": list(self.second_terms),
            "dLdt_analytic": self.dLdt_analytic,
            "condition_value": self.condition_value,
        }
        if include_vectors and self.a is not None:
            d["a"] = [m.tolist() for m in self.a]
            d["b"] = [m.tolist() for m in self.b]
        return d


def _require_linear(params: GnnParams):
    if params.arch.relu:
        raise UnsupportedArchitectureError(
            f"{params.arch.value}: decomposition is defined for linear architectures only")


def _residual_features(params, X, S, idx, V):
    """``{l: V (X S^l)_I^T}`` for every scale carrying an output head."""
    scales = range(params.H + 1) if params.arch.multiscale else [params.H]
    return {l: V @ propagated_features(X, S, l, idx).T for l in scales}


def _j_apply(params, pre, i, l, M):
    left = params.out_weight(l) @ layer_products(params, i + 1, l)
    return left.T @ M @ pre[i - 1].T


def loss_reduction_decomposition(params: GnnParams, X, S, idx, rg: ResidualGrad) -> DecompositionTerms:
    """Split ``dL/dt`` under gradient flow into F-norm terms and J terms."""
    _require_linear(params)
    X = as_matrix(X, "X")
    S = as_matrix(S, "S")
    idx = np.asarray(idx, dtype=np.int64)
    V = as_matrix(rg.V, "V")
    H = params.H
    pre = prefix_products(params)
    Ms = _residual_features(params, X, S, idx, V)
    scales = sorted(Ms)
    first = [frob_sq(pre[l] @ Ms[l].T) for l in scales]
    second, a_list, b_list = [], [], []
    for i in range(1, H + 1):
        parts = {l: _j_apply(params, pre, i, l, Ms[l]) for l in scales if l >= i}
        total = sum(parts.values())
        second.append(frob_sq(total))
        if params.arch.multiscale:
            a = sum((parts[l] for l in parts if l < H), np.zeros(params.B[i - 1].shape))
            a_list.append(a)
            b_list.append(parts[H])
    dLdt = -(sum(first) + sum(second))
    out = DecompositionTerms(scales, first, second, float(dLdt))
    if params.arch.multiscale:
        out.a, out.b = a_list, b_list
        out.condition_value = float(sum(frob_sq(a) + 2.0 * float(np.sum(a * b))
                                        for a, b in zip(a_list, b_list)))
    return out


# ---------------------------------------------------------------------------
# convergence-bound cases

@dataclass(frozen=True)
class BoundCase:
    """Which linear-rate bound to check.

    ``kind`` is one of ``thm6`` (plain linear GNN), ``thm1_i`` (multiscale,
    stacked features), ``thm1_ii`` (multiscale vs. single scale ``H'``) and
    ``thm1_iii`` (multiscale, monotone chain of minima over ``l..l'``).
    """

    kind: str
    args: tuple = ()

    @classmethod
    def parse(cls, text) -> "BoundCase":
        if isinstance(text, BoundCase):
            return text
        s = str(text).strip().lower().replace("_", "")
        name, _, rest = s.partition(":")
        nums = tuple(int(x) for x in rest.split(",") if x.strip()) if rest else ()
        if name == "thm6" and not nums:
            return cls("thm6")
        if name == "thm1i" and not nums:
            return cls("thm1_i")
        if name == "thm1ii" and len(nums) == 1:
            return cls("thm1_ii", nums)
        if name == "thm1iii" and len(nums) == 2 and nums[0] < nums[1]:
            return cls("thm1_iii", nums)
        raise ValueError(f"unrecognised bound case {text!r} "
                         "(expected thm6 | thm1i | thm1ii:H' | thm1iii:l,l' with l < l')")

    def __str__(self):
        return self.kind + (":" + ",".join(map(str, self.args)) if self.args else "")

    @property
    def multiscale(self):
        return self.kind != "thm6"


def _check_case_arch(params: GnnParams, case: BoundCase):
    _require_linear(params)
    if case.multiscale != params.arch.multiscale:
        want = "multiscale" if case.multiscale else "plain linear"
        raise UnsupportedArchitectureError(f"case {case} needs a {want} model, got {params.arch.value}")
    H = params.H
    if any(a > H for a in case.args):
        raise ValueError(f"case {case} refers to depths beyond H={H}")


def gram_lambdas(params: GnnParams) -> list:
    """``lambda_min((Bbar^(1:l))^T Bbar^(1:l))`` for ``l = 0..H`` (``l = 0`` gives 1)."""
    return [smallest_gram_eigenvalue(p) for p in prefix_products(params)]


def monotone_premise(problem: GraphProblem, l: int, l2: int, tol: float = PREMISE_TOL):
    """Return ``(holds, l'')`` for the chain ``L*_l, ..., L*_l'``.

    Nonincreasing chains select ``l'' = l``, nondecreasing ones ``l'' = l'``;
    a constant chain counts as nonincreasing.
    """
    chain = [problem.global_min(k) for k in range(l, l2 + 1)]
    diffs = np.diff(chain)
    if np.all(diffs <= tol):
        return True, l
    if np.all(diffs >= -tol):
        return True, l2
    return False, None


def _rate_and_target(case: BoundCase, problem: GraphProblem, lambdas, H):
    """(rate, L*) such that dL/dt <= -4 * rate * (L - L*) under ``case``.

    ``lambdas`` are the per-layer Gram eigenvalues (pointwise) or their running
    minima (integrated). Returns ``(None, None)`` when a premise fails.
    """
    if case.kind == "thm6":
        return lambdas[H] * problem.sigma_sq(H), problem.global_min(H)
    if case.kind == "thm1_i":
        return min(lambdas[: H + 1]) * problem.sigma_sq_stacked(H), problem.global_min_multiscale(H)
    if case.kind == "thm1_ii":
        (h,) = case.args
        return lambdas[h] * problem.sigma_sq(h), problem.global_min(h)
    l, l2 = case.args
    ok, target = monotone_premise(problem, l, l2)
    if not ok:
        return None, None
    rate = sum(lambdas[k] * problem.sigma_sq(k) for k in range(l, l2 + 1))
    return rate, problem.global_min(target)


@dataclass
class InequalityReport:
    case: str
    lhs: float
    rhs: Optional[float]
    satisfied: Optional[bool]
    premise_holds: bool = True
    loss: float = float("nan")
    global_min: Optional[float] = None
    rate: Optional[float] = None

    def to_dict(self):
        return dict(self.__dict__)


def _problem(X, S, idx, Y, problem):
    if problem is not None:
        return problem
    if Y is None:
        raise ValueError("targets Y are required")
    return GraphProblem(X, S, idx, Y)


def _require_squared(kind):
    if LossKind(kind) is not LossKind.SQUARED:
        raise UnsupportedArchitectureError("convergence bounds are stated for the squared loss only")


def differential_inequality_check(params: GnnParams, X, S, idx, Y, case, kind="squared", *,
                                  problem: Optional[GraphProblem] = None) -> InequalityReport:
    """Evaluate both sides of ``dL/dt <= -4 * rate * (L - L*)`` at ``params``.

    Squared loss only. A failed monotonicity premise (``thm1_iii``) yields a
    report with ``premise_holds=False`` and ``satisfied=None``. Passing a
    prebuilt ``problem`` reuses its cached singular values and minima.
    """
    case = BoundCase.parse(case)
    _require_squared(kind)
    _check_case_arch(params, case)
    problem = _problem(X, S, idx, Y, problem)
    rg = evaluate(params, problem.X, problem.S, problem.idx, problem.Y, LossKind.SQUARED)
    terms = loss_reduction_decomposition(params, problem.X, problem.S, problem.idx, rg)
    rate, target = _rate_and_target(case, problem, gram_lambdas(params), params.H)
    if rate is None:
        return InequalityReport(str(case), terms.dLdt_analytic, None, None,
                                premise_holds=False, loss=rg.loss)
    rhs = -4.0 * rate * (rg.loss - target)
    ok = terms.dLdt_analytic <= rhs + PW_TOL * (1.0 + abs(rhs))
    return InequalityReport(str(case), terms.dLdt_analytic, rhs, bool(ok),
                            loss=rg.loss, global_min=target, rate=rate)


@dataclass
class BoundRow:
    step: int
    t: float
    loss: float
    lhs: float
    rhs: float
    satisfied: bool


def _snapshots(traj):
    cps = list(traj.checkpoints)
    if not cps:
        raise ReportError("empty trajectory")
    if any(cp.params is None for cp in cps):
        raise ReportError("trajectory has no parameter snapshots; train with snapshot_params=True")
    return cps


def convergence_bound_trace(traj, X, S, idx, Y, case, slack: float = BOUND_SLACK, *,
                            problem: Optional[GraphProblem] = None) -> list:
    """Compare ``L(t) - L*`` with ``(L0 - L*) exp(-4 rate_T t)`` at each checkpoint.

    ``rate_T`` uses, per layer, the running minimum of the Gram eigenvalue over
    the snapshots recorded up to ``t`` (a discretised infimum). A row is
    satisfied when ``lhs <= slack * rhs + BOUND_ATOL * (1 + L0)``.
    """
    case = BoundCase.parse(case)
    cps = _snapshots(traj)
    _check_case_arch(cps[0].params, case)
    problem = _problem(X, S, idx, Y, problem)
    H = cps[0].params.H
    if case.kind == "thm1_iii":
        ok, _ = monotone_premise(problem, *case.args)
        if not ok:
            raise ReportError(f"premise of {case} does not hold on this data")
    running = None
    rows = []
    L0 = None
    for cp in cps:
        lam = np.array(gram_lambdas(cp.params))
        running = lam if running is None else np.minimum(running, lam)
        rate, target = _rate_and_target(case, problem, list(running), H)
        loss = evaluate(cp.params, problem.X, problem.S, problem.idx, problem.Y, LossKind.SQUARED).loss
        if L0 is None:
            L0 = loss
        lhs = loss - target
        rhs = (L0 - target) * math.exp(-4.0 * rate * cp.t)
        ok = lhs <= slack * rhs + BOUND_ATOL * (1.0 + abs(L0))
        rows.append(BoundRow(cp.step, cp.t, loss, lhs, rhs, bool(ok)))
    return rows


# ---------------------------------------------------------------------------
# skip connections

@dataclass
class SkipReport:
    dLdt_multi: float
    dLdt_nonmulti: float
    first_terms_below_H: float
    a: list
    b: list
    condition_value: float
    inequality_holds: bool

    @property
    def implication_holds(self) -> bool:
        return self.condition_value < 0 or self.inequality_holds

    def to_dict(self):
        return {
            "dLdt_multi": self.dLdt_multi,
            "dLdt_nonmulti": self.dLdt_nonmulti,
            "first_terms_below_H": self.first_terms_below_H,
            "condition_value": self.condition_value,
            "inequality_holds": self.inequality_holds,
            "implication_holds": self.implication_holds,
            "a": [m.tolist() for m in self.a],
            "b": [m.tolist() for m in self.b],
        }


def plain_counterpart(params: GnnParams) -> GnnParams:
    """The non-multiscale model sharing ``B`` with ``W = W_(H)``."""
    arch = Architecture.build(multiscale=False, relu=params.arch.relu)
    return GnnParams(arch, params.B, (params.W[-1],))


def project_skip_heads(params: GnnParams, X, S, idx) -> GnnParams:
    """Project ``W_(0..H-1)`` so the skip heads contribute nothing on the
    training columns. The result emits the same outputs as its plain
    counterpart while keeping generic (nonzero) skip weights when
    ``sum_{l<H} m_l > n_bar``."""
    if not params.arch.multiscale or params.arch.relu:
        raise UnsupportedArchitectureError("needs a multiscale linear model")
    from .model import hidden_states
    states, _ = hidden_states(params, X, S)
    idx = np.asarray(idx, dtype=np.int64)
    H = params.H
    F = np.vstack([states[l][:, idx] for l in range(H)])
    Wskip = np.hstack(params.W[:H])
    # remove the part of each row lying in the column space of F
    Q = row_space_basis(F.T)
    Wskip = Wskip - (Wskip @ Q) @ Q.T
    splits = np.cumsum([params.dims[l] for l in range(H)])[:-1]
    heads = np.hsplit(Wskip, splits) if H > 1 else [Wskip]
    return params.replace(W=tuple(heads) + (params.W[-1],))


def skip_acceleration_check(params_multi: GnnParams, X, S, idx, Y, kind="squared",
                            atol: float = 1e-8) -> SkipReport:
    """Compare loss reduction of a multiscale model and its plain counterpart.

    Both models must emit the same outputs on the training nodes so that they
    share ``V``; otherwise :class:`ComparisonUndefinedError` is raised.
    """
    if not params_multi.arch.multiscale or params_multi.arch.relu:
        raise UnsupportedArchitectureError("skip comparison needs a multiscale linear model")
    plain = plain_counterpart(params_multi)
    out_m = forward(params_multi, X, S, idx)
    out_p = forward(plain, X, S, idx)
    scale = 1.0 + max(float(np.max(np.abs(out_m))), float(np.max(np.abs(out_p))))
    if np.max(np.abs(out_m - out_p)) > 1e-9 * scale:
        raise ComparisonUndefinedError(
            "multiscale and plain models produce different outputs; the comparison needs shared V "
            "(zero the skip heads or use project_skip_heads)")
    rg = evaluate(params_multi, X, S, idx, Y, kind)
    dm = loss_reduction_decomposition(params_multi, X, S, idx, rg)
    dp = loss_reduction_decomposition(plain, X, S, idx, rg)
    below = float(sum(v for l, v in zip(dm.scales, dm.first_terms) if l < params_multi.H))
    bound = dp.dLdt_analytic - below
    holds = dm.dLdt_analytic <= bound + atol * max(1.0, abs(bound))
    return SkipReport(dm.dLdt_analytic, dp.dLdt_analytic, below, dm.a, dm.b,
                      dm.condition_value, bool(holds))


# ---------------------------------------------------------------------------
# margins and lambda_T

@dataclass
class MarginReport:
    layer: int
    gamma_empirical: float
    lambda_T: float
    lambda_path: list
    satisfied: bool

    def to_dict(self):
        return dict(self.__dict__)


def margin_trace(traj, layer: int, tol: float = 1e-12) -> MarginReport:
    """Empirical singular margin over visited states with ``L <= L0`` and the
    resulting ``lambda_T``; checks ``lambda_T >= gamma^2``."""
    cps = _snapshots(traj)
    L0 = cps[0].loss
    gammas, lams = [], []
    for cp in cps:
        Bbar = layer_products(cp.params, 1, layer)
        lams.append(smallest_gram_eigenvalue(Bbar))
        if cp.loss <= L0:
            gammas.append(smallest_singular_value(Bbar))
    path = list(np.minimum.accumulate(lams))
    gamma = min(gammas)
    lam_T = float(path[-1])
    return MarginReport(layer, float(gamma), lam_T, [float(v) for v in path],
                        bool(lam_T >= gamma ** 2 - tol * max(1.0, gamma ** 2)))


# ---------------------------------------------------------------------------
# induced dynamics of the end-to-end matrices

def predicted_end_to_end_velocity(params: GnnParams, X, S, idx, rg: ResidualGrad) -> list:
    """``dZ_(l)/dt`` under gradient flow, from the closed-form induced dynamics::

        dZ_l/dt = -grad_l Bbar_l^T Bbar_l
                  - sum_{i<=l} sum_{k>=i} P_(i,l) P_(i,k)^T grad_k Q_i

    with ``grad_l = V (X S^l)_I^T``, ``P_(i,l) = W_(l) Bbar^(i+1:l)`` and
    ``Q_i = Bbar^(1:i-1)^T Bbar^(1:i-1)``.
    """
    _require_linear(params)
    V = as_matrix(rg.V, "V")
    pre = prefix_products(params)
    G = _residual_features(params, X, S, np.asarray(idx, dtype=np.int64), V)
    scales = sorted(G)
    out = []
    for l in scales:
        dZ = -G[l] @ pre[l].T @ pre[l]
        for i in range(1, l + 1):
            Pil = params.out_weight(l) @ layer_products(params, i + 1, l)
            Qi = pre[i - 1].T @ pre[i - 1]
            for k in scales:
                if k < i:
                    continue
                Pik = params.out_weight(k) @ layer_products(params, i + 1, k)
                dZ = dZ - Pil @ Pik.T @ G[k] @ Qi
        out.append(dZ)
    return out


@dataclass
class DynamicsReport:
    predicted: list
    measured: list
    max_deviation: float
    max_scaled_deviation: float

    def to_dict(self):
        return {
            "max_deviation": self.max_deviation,
            "max_scaled_deviation": self.max_scaled_deviation,
            "predicted": [m.tolist() for m in self.predicted],
            "measured": [m.tolist() for m in self.measured],
        }


def end_to_end_dynamics_check(params: GnnParams, X, S, idx, Y, step: float = 1e-6,
                              kind="squared") -> DynamicsReport:
    """Compare predicted ``dZ/dt`` with ``(Z(theta - step grad) - Z(theta)) / step``.

    ``max_scaled_deviation`` is the largest ``|pred - meas| / (1 + |pred|)``.
    """
    _require_linear(params)
    rg = evaluate(params, X, S, idx, Y, kind)
    pred = predicted_end_to_end_velocity(params, X, S, idx, rg)
    grads = analytic_gradients(params, X, S, idx, rg)
    moved = params.unflatten(params.flatten() - step * grads.flatten())
    meas = [(z1 - z0) / step for z0, z1 in zip(end_to_end(params), end_to_end(moved))]
    dev = max(float(np.max(np.abs(p - m))) for p, m in zip(pred, meas))
    scaled = max(float(np.max(np.abs(p - m) / (1.0 + np.abs(p)))) for p, m in zip(pred, meas))
    return DynamicsReport(pred, meas, dev, scaled)


# ---------------------------------------------------------------------------

@dataclass
class SignalTermRow:
    step: int
    t: float
    sum_first_terms: float
    sum_second_terms: float


def signal_term_report(traj) -> list:
    """First-term vs. second-term magnitudes along a trajectory."""
    rows = []
    for cp in traj.checkpoints:
        if cp.decomposition is None:
            raise ReportError(f"checkpoint at step {cp.step} has no recorded decomposition")
        rows.append(SignalTermRow(cp.step, cp.t, cp.decomposition.sum_first,
                                  cp.decomposition.sum_second))
    return rows
