"""Per-example clipping, Gaussian sanitization and RDP accounting.

The accountant tracks the Poisson-subsampled Gaussian mechanism at integer
Renyi orders, composes additively over steps and converts to (eps, delta)-DP
with the classical bound ``eps_rdp + log(1/delta) / (alpha - 1)``.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ORDERS = tuple(range(2, 65)) + (128, 256)
SIGMA_BOUNDS = (1e-2, 1e3)
CALIBRATION_TOL = 1e-3
CALIBRATION_MAX_ITER = 60


class PrivacyError(ValueError):
    pass


class UnboundedPrivacyLoss(PrivacyError):
    """Zero noise on data that is actually sampled: the RDP cost is infinite."""


class InfeasibleBudget(PrivacyError):
    """The target epsilon cannot be met inside the sigma search range."""


class BudgetExhausted(PrivacyError):
    pass


# ---------------------------------------------------------------------------
# clipping and noise


def global_norm(grads):
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_per_example(grads, clip):
    """Scale one example's gradient list by ``min(1, clip / ||g||)``.

    The norm is taken over all layers concatenated. A zero gradient is returned
    as is.
    """
    if clip <= 0:
        raise ValueError("clip bound must be positive")
    norm = global_norm(grads)
    if norm <= clip:
        return [g.copy() for g in grads]
    scale = clip / norm
    return [g * np.asarray(scale, dtype=g.dtype) for g in grads]


def clip_factors(stacked, clip):
    """Per-example clip multipliers for gradients stacked on a leading axis."""
    n = stacked[0].shape[0]
    sq = np.zeros(n, dtype=np.float64)
    for g in stacked:
        flat = g.reshape(n, -1)
        sq += np.einsum("ij,ij->i", flat, flat, dtype=np.float64)
    norms = np.sqrt(sq)
    factors = np.ones(n)
    big = norms > clip
    factors[big] = clip / norms[big]
    return factors, norms


def clipped_sum(stacked, clip):
    """Sum over examples of clipped gradients (the pre-noise query)."""
    factors, _ = clip_factors(stacked, clip)
    out = []
    for g in stacked:
        out.append(np.tensordot(factors.astype(g.dtype), g, axes=(0, 0)))
    return out


def sanitize_mean(per_example, clip, sigma, nominal_batch, rng, accountant=None, shapes=None):
    """Noisy average ``(sum_i clip(g_i) + N(0, sigma^2 C^2 I)) / B``.

    ``per_example`` is a list of arrays with a leading example axis, which may
    have length zero under Poisson sampling; then ``shapes`` (or the trailing
    dims of ``per_example``) fix the output layout. Exactly one normal draw is
    made per output coordinate, in parameter order. If an accountant is given
    it records one step.
    """
    if nominal_batch < 1:
        raise ValueError("nominal batch size must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if shapes is None:
        shapes = [g.shape[1:] for g in per_example]
    n = per_example[0].shape[0] if per_example else 0
    if n:
        total = clipped_sum(per_example, clip)
    else:
        dtype = per_example[0].dtype if per_example else np.float32
        total = [np.zeros(s, dtype=dtype) for s in shapes]
    out = noisy_average(total, clip, sigma, nominal_batch, rng)
    if accountant is not None:
        accountant.record(1)
    return out


def noisy_average(total, clip, sigma, nominal_batch, rng):
    """Add N(0, sigma^2 C^2) to every coordinate of a clipped sum, divide by B."""
    out = []
    for t in total:
        noise = rng.standard_normal(t.shape, dtype=np.float64) * (sigma * clip)
        out.append(((t + noise.astype(t.dtype)) / nominal_batch).astype(t.dtype))
    return out


def classical_gaussian_sigma(delta, sensitivity, epsilon):
    """Noise std of the classical Gaussian mechanism bound."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if epsilon <= 0 or sensitivity <= 0:
        raise ValueError("epsilon and sensitivity must be positive")
    return math.sqrt(2 * math.log(1.25 / delta)) * sensitivity / epsilon


# ---------------------------------------------------------------------------
# RDP of the sampled Gaussian mechanism


def _as_int_orders(orders):
    a = np.atleast_1d(np.asarray(orders, dtype=np.float64))
    if np.any(a <= 1) or np.any(a != np.round(a)):
        raise ValueError("only integer orders > 1 are supported")
    return a.astype(np.int64)


def _log_a_int(q, sigma, alpha):
    i = np.arange(alpha + 1, dtype=np.float64)
    log_binom = gammaln(alpha + 1) - gammaln(i + 1) - gammaln(alpha - i + 1)
    terms = log_binom + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2 * sigma**2)
    return float(logsumexp(terms))


def sgm_rdp(q, sigma, orders):
    """Per-step RDP of the Poisson-sampled Gaussian mechanism.

    For integer ``alpha`` this sums the binomial expansion of
    ``E[((1 - q) + q * exp((2z - 1) / (2 sigma^2)))^alpha]`` with z ~ N(0, sigma^2).
    Returns a float for scalar ``orders`` and an array otherwise.
    """
    scalar = np.ndim(orders) == 0
    alphas = _as_int_orders(orders)
    if not 0 <= q <= 1:
        raise ValueError("sampling rate must lie in [0, 1]")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if q == 0:
        out = np.zeros(len(alphas))
    elif sigma == 0:
        raise UnboundedPrivacyLoss("sigma = 0 with q > 0 gives unbounded privacy loss")
    elif q == 1:
        out = alphas / (2 * sigma**2)
    else:
        out = np.array([_log_a_int(q, sigma, int(a)) / (a - 1) for a in alphas])
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


@dataclass
class AccountantState:
    orders: tuple = DEFAULT_ORDERS
    rdp: np.ndarray = None
    steps: int = 0

    def __post_init__(self):
        self.orders = tuple(int(a) for a in _as_int_orders(self.orders))
        if list(self.orders) != sorted(set(self.orders)):
            raise ValueError("orders must be strictly ascending")
        if self.rdp is None:
            self.rdp = np.zeros(len(self.orders))
        self.rdp = np.asarray(self.rdp, dtype=np.float64)
        if self.rdp.shape != (len(self.orders),):
            raise ValueError("need one rdp value per order")
        if np.any(self.rdp < 0) or not np.all(np.isfinite(self.rdp)):
            raise ValueError("rdp values must be finite and non-negative")

    def copy(self):
        return AccountantState(self.orders, self.rdp.copy(), self.steps)


@functools.lru_cache(maxsize=256)
def _per_step(q, sigma, orders):
    out = sgm_rdp(q, sigma, orders)
    out.flags.writeable = False
    return out


def accumulate(state: AccountantState, q, sigma, n_steps) -> AccountantState:
    """Compose ``n_steps`` identical sampled-Gaussian steps onto ``state``."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if n_steps == 0:
        return state.copy()
    per_step = _per_step(float(q), float(sigma), state.orders)
    return AccountantState(state.orders, state.rdp + n_steps * per_step, state.steps + n_steps)


def rdp_to_dp(state: AccountantState, delta):
    """Best (epsilon, order) over the grid."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not state.orders:
        raise ValueError("empty order grid")
    orders = np.asarray(state.orders, dtype=np.float64)
    eps = state.rdp + math.log(1 / delta) / (orders - 1)
    i = int(np.argmin(eps))
    return float(eps[i]), state.orders[i]


def compute_epsilon(q, sigma, steps, delta, orders=DEFAULT_ORDERS):
    state = accumulate(AccountantState(orders), q, sigma, steps)
    return rdp_to_dp(state, delta)[0]


def calibrate_noise(epsilon_target, delta, q, total_steps, orders=DEFAULT_ORDERS):
    """Smallest sigma (to bisection resolution) whose composed epsilon meets the target.

    Bisects on log(sigma) in ``SIGMA_BOUNDS``; stops once the achieved epsilon
    is within ``CALIBRATION_TOL`` below the target or after
    ``CALIBRATION_MAX_ITER`` halvings.
    """
    if epsilon_target <= 0:
        raise ValueError("target epsilon must be positive")
    if total_steps < 1:
        raise ValueError("nothing to calibrate: total_steps must be >= 1")
    lo, hi = SIGMA_BOUNDS
    if compute_epsilon(q, hi, total_steps, delta, orders) > epsilon_target:
        raise InfeasibleBudget(
            f"epsilon {epsilon_target} unreachable with sigma <= {hi} "
            f"(q={q}, steps={total_steps}, delta={delta})"
        )
    if compute_epsilon(q, lo, total_steps, delta, orders) <= epsilon_target:
        return lo
    for _ in range(CALIBRATION_MAX_ITER):
        mid = math.sqrt(lo * hi)
        eps = compute_epsilon(q, mid, total_steps, delta, orders)
        if eps > epsilon_target:
            lo = mid
        else:
            hi = mid
            if epsilon_target - eps <= CALIBRATION_TOL:
                break
    return hi


# ---------------------------------------------------------------------------
# stateful wrapper used by the training loops


@dataclass
class Accountant:
    """Running accountant for a fixed (q, sigma) mechanism.

    ``sigma == 0`` marks a non-private run: steps are still counted but no
    privacy guarantee is claimed (epsilon is reported as infinite).
    """

    q: float
    sigma: float
    delta: float = 1e-5
    state: AccountantState = field(default_factory=AccountantState)
    unbounded: bool = False

    def record(self, n=1):
        if self.sigma == 0 and self.q > 0:
            self.unbounded = True
            self.state = AccountantState(self.state.orders, self.state.rdp, self.state.steps + n)
        else:
            self.state = accumulate(self.state, self.q, self.sigma, n)

    @property
    def steps(self):
        return self.state.steps

    def epsilon(self):
        if self.unbounded:
            return math.inf, None
        return rdp_to_dp(self.state, self.delta)

    def to_dict(self):
        eps, order = self.epsilon()
        return {
            "orders": list(self.state.orders),
            "rdp": [float(r) for r in self.state.rdp],
            "steps": self.state.steps,
            "q": self.q,
            "sigma": self.sigma,
            "delta": self.delta,
            "epsilon": None if math.isinf(eps) else eps,
            "best_order": order,
            "private": not self.unbounded,
        }


def save_accountant(acct: Accountant, path):
    with open(path, "w") as f:
        json.dump(acct.to_dict(), f, indent=2)


def load_accountant_report(path):
    """Read an accountant JSON and recompute epsilon from its stored RDP curve."""
    with open(path) as f:
        doc = json.load(f)
    state = AccountantState(doc["orders"], doc["rdp"], doc["steps"])
    if not doc.get("private", True):
        return doc, math.inf, None
    eps, order = rdp_to_dp(state, doc["delta"])
    return doc, eps, order


def check_delta(delta, n):
    if delta >= 1 / n:
        warnings.warn(f"delta={delta} is not below 1/N={1 / n:.3g}", stacklevel=2)
