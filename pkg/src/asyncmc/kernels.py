"""MCMC step functions over finite and Gaussian targets.

Two kernel families are implemented: random-proposal Metropolis-Hastings and
single-site Gibbs (random-scan or systematic-scan).  Every step works in log
space, returns the log unnormalized target density at its result, and draws
from an explicitly seeded ``numpy.random.Generator`` in a fixed order:

* ``mh_step``: the proposal's draws first, then exactly one uniform for the
  accept decision (drawn even when the ratio exceeds 1).
* finite Gibbs site draw: one uniform, inverted through the conditional CDF.
* Gaussian Gibbs site draw: one standard normal.
* ``gibbs_single_site`` kernel step: one integer draw for the site, then the
  site draw.

For finite targets a kernel can also be rendered to an exact
:class:`~asyncmc.measures.StochasticMatrix`, which is what ties the sampling
view to the measure-level machinery.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ParameterError,
    ProposalInconsistencyError,
    UnsupportedTargetError,
    ValidationError,
)
from .measures import FiniteDistribution, StateSpace, StochasticMatrix

NEG_INF = float("-inf")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianTarget:
    """Multivariate Gaussian described by its mean and precision matrix."""

    mean: tuple
    precision: tuple

    def __post_init__(self):
        mean = tuple(float(x) for x in self.mean)
        prec = tuple(tuple(float(x) for x in row) for row in self.precision)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        p = np.asarray(prec)
        if p.shape != (len(mean), len(mean)):
            raise ValidationError("precision shape does not match mean dimension")
        if np.abs(p - p.T).max() > 1e-10:
            raise ValidationError("precision matrix is not symmetric")
        try:
            np.linalg.cholesky(p)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("precision matrix is not positive definite") from exc

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(np.asarray(self.precision))

    def log_unnorm(self, x: Sequence[float]) -> float:
        # -(1/2) (x - mean)' P (x - mean), unrolled to avoid array churn in
        # the samplers' hot loops.
        d = [x[i] - self.mean[i] for i in range(len(self.mean))]
        quad = 0.0
        for i, row in enumerate(self.precision):
            di = d[i]
            for j, pij in enumerate(row):
                quad += di * pij * d[j]
        return -0.5 * quad

    def conditional(self, site: int, x: Sequence[float]) -> tuple[float, float]:
        """Mean and variance of coordinate ``site`` given the others."""
        row = self.precision[site]
        var = 1.0 / row[site]
        shift = 0.0
        for j, pij in enumerate(row):
            if j != site:
                shift += pij * (x[j] - self.mean[j])
        return self.mean[site] - var * shift, var

    @classmethod
    def bivariate_correlated(cls, rho: float) -> "GaussianTarget":
        """Standard bivariate Gaussian with correlation ``rho``."""
        if not -1.0 < rho < 1.0:
            raise ValidationError("correlation must lie strictly inside (-1, 1)")
        s = 1.0 / (1.0 - rho * rho)
        return cls(mean=(0.0, 0.0), precision=((s, -rho * s), (-rho * s, s)))


@dataclass(frozen=True)
class TargetDensity:
    """An unnormalized target: a log density plus a support descriptor.

    ``support`` is a :class:`StateSpace` for finite targets and ``None`` for
    targets on R^dim.  ``site_domains`` (finite multi-site targets) and
    ``gaussian`` (continuous targets) carry the structure the Gibbs
    conditionals need; either may be absent for targets that only ever see
    Metropolis-Hastings steps.
    """

    dim: int
    log_unnorm: Callable
    support: StateSpace | None = None
    site_domains: tuple | None = None
    gaussian: GaussianTarget | None = None

    @property
    def is_finite(self) -> bool:
        return self.support is not None


def finite_target(weights: Sequence[float], labels: Sequence | None = None) -> TargetDensity:
    """Target over an enumerated space with explicitly tabled weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValidationError("weights must be non-negative, finite, with positive mass")
    if labels is None:
        labels = tuple(range(len(w)))
    space = StateSpace(tuple(labels))
    if space.size != len(w):
        raise ValidationError("labels and weights differ in length")
    logw = {lab: (math.log(x) if x > 0 else NEG_INF) for lab, x in zip(space.labels, w)}

    def log_unnorm(x):
        return logw.get(x, NEG_INF)

    return TargetDensity(
        dim=1, log_unnorm=log_unnorm, support=space, site_domains=(tuple(space.labels),)
    )


def product_finite_target(
    site_domains: Sequence[Sequence], log_weight: Callable
) -> TargetDensity:
    """Multi-site finite target; states are tuples, one entry per site."""
    domains = tuple(tuple(d) for d in site_domains)
    labels = tuple(itertools.product(*domains))
    space = StateSpace(labels)
    table = {lab: float(log_weight(lab)) for lab in labels}
    if all(v == NEG_INF for v in table.values()):
        raise ValidationError("target has empty support")

    def log_unnorm(x):
        return table.get(tuple(x), NEG_INF)

    return TargetDensity(
        dim=len(domains), log_unnorm=log_unnorm, support=space, site_domains=domains
    )


def gaussian_target(mean: Sequence[float], precision: Sequence[Sequence[float]]) -> TargetDensity:
    gt = GaussianTarget(tuple(mean), tuple(tuple(row) for row in precision))
    return TargetDensity(dim=gt.dim, log_unnorm=gt.log_unnorm, gaussian=gt)


def target_distribution(target: TargetDensity) -> FiniteDistribution:
    """Normalized exp(log density) of a finite target, as an exact vector."""
    if not target.is_finite:
        raise UnsupportedTargetError("only finite targets have an enumerable distribution")
    weights = np.array([math.exp(target.log_unnorm(lab)) for lab in target.support.labels])
    return FiniteDistribution.from_weights(target.support, weights)


# ---------------------------------------------------------------------------
# Proposal families.  Each carries an id (used for server-side registration),
# a symmetry flag, sample/logpdf, and, when the family is enumerable over a
# finite space, a support_logpdfs method used for matrix rendering.
# ---------------------------------------------------------------------------


class UniformIndependenceProposal:
    """Propose a state uniformly from a finite space, ignoring the current one."""

    symmetric = True

    def __init__(self, space: StateSpace, proposal_id: str = "uniform_independence"):
        self.space = space
        self.proposal_id = proposal_id
        self._log_q = -math.log(space.size)

    def sample(self, x, rng: np.random.Generator):
        return self.space.labels[int(rng.integers(self.space.size))], {}

    def logpdf(self, y, x, params=None) -> float:
        return self._log_q if y in self.space._index else NEG_INF

    def support_logpdfs(self, x) -> np.ndarray:
        return np.full(self.space.size, self._log_q)


class TableIndependenceProposal:
    """Propose from a fixed categorical table over a finite space."""

    symmetric = False

    def __init__(self, space: StateSpace, weights: Sequence[float], proposal_id: str = "table_independence"):
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("proposal weights must be non-negative with positive mass")
        self.space = space
        self.proposal_id = proposal_id
        self._probs = w / w.sum()
        self._cum = np.cumsum(self._probs)
        self._logs = np.where(self._probs > 0, np.log(np.maximum(self._probs, 1e-300)), NEG_INF)

    def sample(self, x, rng: np.random.Generator):
        idx = int(np.searchsorted(self._cum, rng.random(), side="right"))
        return self.space.labels[min(idx, self.space.size - 1)], {}

    def logpdf(self, y, x, params=None) -> float:
        try:
            return float(self._logs[self.space.index(y)])
        except ValidationError:
            return NEG_INF

    def support_logpdfs(self, x) -> np.ndarray:
        return self._logs.copy()


class IdentityProposal:
    """Propose the current state itself (degenerate, for identity tests)."""

    symmetric = True
    proposal_id = "identity"

    def sample(self, x, rng: np.random.Generator):
        return x, {}

    def logpdf(self, y, x, params=None) -> float:
        return 0.0 if y == x else NEG_INF

    def support_logpdfs(self, x):
        return None  # state-dependent delta; rendering handles it specially


class GaussianRandomWalkProposal:
    """Symmetric random walk y = x + scale * N(0, I)."""

    symmetric = True

    def __init__(self, scale: float, proposal_id: str = "gaussian_random_walk"):
        if scale <= 0:
            raise ValidationError("random walk scale must be positive")
        self.scale = float(scale)
        self.proposal_id = proposal_id

    def sample(self, x, rng: np.random.Generator):
        return tuple(xi + self.scale * rng.standard_normal() for xi in x), {}

    def logpdf(self, y, x, params=None) -> float:
        lp = 0.0
        for yi, xi in zip(y, x):
            z = (yi - xi) / self.scale
            lp += -0.5 * z * z - math.log(self.scale) - _LOG_SQRT_2PI
        return lp


class GaussianIndependenceProposal:
    """Propose from a fixed spherical Gaussian, ignoring the current state."""

    symmetric = False

    def __init__(self, center: Sequence[float], scale: float, proposal_id: str = "gaussian_independence"):
        if scale <= 0:
            raise ValidationError("independence proposal scale must be positive")
        self.center = tuple(float(c) for c in center)
        self.scale = float(scale)
        self.proposal_id = proposal_id

    def sample(self, x, rng: np.random.Generator):
        return tuple(c + self.scale * rng.standard_normal() for c in self.center), {}

    def logpdf(self, y, x, params=None) -> float:
        lp = 0.0
        for yi, c in zip(y, self.center):
            z = (yi - c) / self.scale
            lp += -0.5 * z * z - math.log(self.scale) - _LOG_SQRT_2PI
        return lp


class GibbsSiteProposal:
    """Exact full-conditional draw at one uniformly chosen site.

    The density is evaluated coordinate-wise: ``logpdf(y, x, {"site": i})``
    is the conditional density of ``y[i]`` given ``x`` at the other sites.
    Off-site coordinates of ``y`` do not enter; callers own the convention
    that a site proposal only ever moves one coordinate.
    """

    symmetric = False

    def __init__(self, target: TargetDensity, proposal_id: str = "gibbs_site"):
        if target.site_domains is None and target.gaussian is None:
            raise UnsupportedTargetError("target has no usable full conditionals")
        self.target = target
        self.proposal_id = proposal_id

    def sample(self, x, rng: np.random.Generator):
        site = int(rng.integers(self.target.dim))
        return gibbs_site_draw(self.target, x, site, rng), {"site": site}

    def logpdf(self, y, x, params) -> float:
        site = params["site"]
        t = self.target
        if t.gaussian is not None:
            mean, var = t.gaussian.conditional(site, x)
            z = (y[site] - mean) / math.sqrt(var)
            return -0.5 * z * z - 0.5 * math.log(var) - _LOG_SQRT_2PI
        values, probs = _finite_conditional(t, x, site)
        yi = y[site] if t.dim > 1 else y
        for v, p in zip(values, probs):
            if v == yi:
                return math.log(p) if p > 0 else NEG_INF
        return NEG_INF


def _finite_conditional(target: TargetDensity, x, site: int):
    values = target.site_domains[site]
    logs = np.array([target.log_unnorm(_with_site(target, x, site, v)) for v in values])
    top = logs.max()
    if top == NEG_INF:
        raise UnsupportedTargetError("conditional has empty support at this state")
    w = np.exp(logs - top)
    return values, w / w.sum()


def _with_site(target: TargetDensity, x, site: int, value):
    if target.dim == 1:
        return value
    out = list(x)
    out[site] = value
    return tuple(out)


def gibbs_site_draw(target: TargetDensity, x, site: int, rng: np.random.Generator):
    """Draw coordinate ``site`` from its full conditional, others unchanged."""
    if site < 0 or site >= target.dim:
        raise ParameterError(f"site {site} out of range for dim {target.dim}")
    if target.gaussian is not None:
        mean, var = target.gaussian.conditional(site, x)
        value = mean + math.sqrt(var) * rng.standard_normal()
        out = list(x)
        out[site] = value
        return tuple(out)
    if target.site_domains is not None:
        values, probs = _finite_conditional(target, x, site)
        u = rng.random()
        acc = 0.0
        for v, p in zip(values, probs):
            acc += p
            if u < acc:
                return _with_site(target, x, site, v)
        return _with_site(target, x, site, values[-1])
    raise UnsupportedTargetError("target has no usable full conditionals")


# ---------------------------------------------------------------------------
# Kernel specifications and steps
# ---------------------------------------------------------------------------

KERNEL_KINDS = ("metropolis_hastings", "gibbs_single_site", "systematic_gibbs")


@dataclass(frozen=True)
class KernelSpec:
    """What one worker step does: kind, target, and optional proposal/order."""

    kind: str
    target: TargetDensity
    proposal: object | None = None
    site_order: tuple | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "metropolis_hastings" and self.proposal is None:
            raise ValidationError("metropolis_hastings requires a proposal")
        if self.kind in ("gibbs_single_site", "systematic_gibbs"):
            t = self.target
            if t.site_domains is None and t.gaussian is None:
                raise ValidationError("gibbs kinds need finite site domains or a Gaussian target")
        if self.site_order is not None:
            order = tuple(int(s) for s in self.site_order)
            if sorted(order) != list(range(self.target.dim)):
                raise ValidationError("site_order must be a permutation of the sites")
            object.__setattr__(self, "site_order", order)

    def describe(self) -> str:
        prop = getattr(self.proposal, "proposal_id", None)
        return f"{self.kind}" + (f"[{prop}]" if prop else "")


@dataclass(frozen=True)
class StepResult:
    state: object
    log_pi: float
    accepted: bool


def mh_step(spec: KernelSpec, x, rng: np.random.Generator) -> StepResult:
    """One Metropolis-Hastings transition from ``x``.

    The accept decision consumes exactly one uniform, drawn after the
    proposal's own draws; rejection returns ``x`` unchanged.
    """
    target, proposal = spec.target, spec.proposal
    lp_x = target.log_unnorm(x)
    if lp_x == NEG_INF:
        raise ValidationError("current state lies outside the target support")
    y, params = proposal.sample(x, rng)
    log_fwd = proposal.logpdf(y, x, params)
    if log_fwd == NEG_INF:
        raise ProposalInconsistencyError(
            "proposal produced a state with zero density under its own logpdf"
        )
    lp_y = target.log_unnorm(y)
    if proposal.symmetric:
        log_ratio = lp_y - lp_x
    else:
        log_ratio = (lp_y + proposal.logpdf(x, y, params)) - (lp_x + log_fwd)
    u = rng.random()
    accepted = log_ratio >= 0.0 or u < math.exp(log_ratio)
    if accepted:
        return StepResult(y, lp_y, True)
    return StepResult(x, lp_x, False)


def gibbs_site_step(spec: KernelSpec, x, site: int, rng: np.random.Generator) -> StepResult:
    new = gibbs_site_draw(spec.target, x, site, rng)
    return StepResult(new, spec.target.log_unnorm(new), True)


def kernel_step(spec: KernelSpec, x, rng: np.random.Generator) -> StepResult:
    """Dispatch one full kernel application according to the spec's kind."""
    if spec.kind == "metropolis_hastings":
        return mh_step(spec, x, rng)
    if spec.kind == "gibbs_single_site":
        site = int(rng.integers(spec.target.dim))
        return gibbs_site_step(spec, x, site, rng)
    order = spec.site_order or tuple(range(spec.target.dim))
    state = x
    for site in order:
        state = gibbs_site_draw(spec.target, state, site, rng)
    return StepResult(state, spec.target.log_unnorm(state), True)


def default_init(target: TargetDensity):
    """Deterministic starting state: first label, or the Gaussian mean."""
    if target.is_finite:
        return target.support.labels[0]
    if target.gaussian is not None:
        return tuple(target.gaussian.mean)
    raise UnsupportedTargetError("no default initial state for this target")


# ---------------------------------------------------------------------------
# Exact matrix rendering for finite targets
# ---------------------------------------------------------------------------

RENDER_CAP = 4096


def _site_matrix(target: TargetDensity, site: int) -> np.ndarray:
    space = target.support
    n = space.size
    rows = np.zeros((n, n))
    for i, lab in enumerate(space.labels):
        values, probs = _finite_conditional(target, lab, site)
        for v, p in zip(values, probs):
            rows[i, space.index(_with_site(target, lab, site, v))] += p
    return rows


def render_matrix(spec: KernelSpec, cap: int = RENDER_CAP) -> StochasticMatrix:
    """Render a finite-target kernel as an exact transition matrix."""
    target = spec.target
    if not target.is_finite:
        raise UnsupportedTargetError("only finite-support kernels can be rendered")
    space = target.support
    n = space.size
    if n > cap:
        raise ParameterError(f"state space size {n} exceeds render cap {cap}")

    if spec.kind == "gibbs_single_site":
        rows = sum(_site_matrix(target, s) for s in range(target.dim)) / target.dim
        return StochasticMatrix(space, rows)
    if spec.kind == "systematic_gibbs":
        order = spec.site_order or tuple(range(target.dim))
        rows = np.eye(n)
        for site in order:
            rows = rows @ _site_matrix(target, site)
        return StochasticMatrix(space, rows)

    proposal = spec.proposal
    if isinstance(proposal, IdentityProposal):
        return StochasticMatrix(space, np.eye(n))
    if not hasattr(proposal, "support_logpdfs"):
        raise UnsupportedTargetError(
            f"proposal {getattr(proposal, 'proposal_id', proposal)!r} is not enumerable"
        )
    lp = np.array([target.log_unnorm(lab) for lab in space.labels])
    if np.any(lp == NEG_INF):
        raise UnsupportedTargetError("rendering requires strictly positive target weights")
    lq = np.vstack([proposal.support_logpdfs(lab) for lab in space.labels])  # lq[i, j] = log f(j|i)
    log_ratio = (lp[None, :] + lq.T) - (lp[:, None] + lq)
    accept = np.exp(np.minimum(0.0, log_ratio))
    moves = np.exp(lq) * accept
    rows = moves.copy()
    stay = 1.0 - moves.sum(axis=1) + np.diag(moves)
    np.fill_diagonal(rows, np.maximum(stay, 0.0))
    return StochasticMatrix(space, rows)


def worker_streams(seed: int, n_workers: int, extra: int = 0) -> list[np.random.Generator]:
    """Independent per-worker generators derived from one root seed.

    Index ``i < n_workers`` is worker ``i``'s private stream; any ``extra``
    trailing streams are for infrastructure (delay models, recorders).
    """
    children = np.random.SeedSequence(seed).spawn(n_workers + extra)
    return [np.random.default_rng(c) for c in children]
