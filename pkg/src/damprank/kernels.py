"""Damping kernels: discrete pmfs over walk lengths.

A kernel with damping variable ``rho`` and weights ``w_k(rho)`` defines
the rank vector ``x = sum_k w_k(rho) P^k v``. Each family provides its
weights, their rho-derivatives, tail masses ``sum_{k>K} w_k``, tail first
moments ``sum_{k>K} k w_k`` and the mean walk length.

All four families are exponential families in ``log rho``, so
``dw_k/drho = w_k (k - mean) / rho``; the per-family derivative formulas
below are the explicit forms of that identity.
"""

import math
import threading
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, gammaln, logsumexp

from .exceptions import DomainError, StepCapError, UsageError

DEFAULT_STEP_CAP = 10**6

# relative cutoff used when summing an infinite series with a ratio majorant
_SERIES_RTOL = 1e-18
_CHUNK = 512


class DampingKernel:
    """Base class; subclasses implement the pmf of one family."""

    family = None
    param_name = "rho"
    support_start = 0
    domain = (0.0, math.inf)

    @property
    def kernel_id(self):
        return self.family

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.kernel_id == other.kernel_id

    def __hash__(self):
        return hash(self.kernel_id)

    def check(self, rho):
        lo, hi = self.domain
        rho = float(rho)
        if not (lo < rho < hi):
            raise DomainError(
                f"{self.family}: {self.param_name}={rho!r} outside domain ({lo}, {hi})"
            )
        return rho

    # -- pmf ------------------------------------------------------------
    def weights(self, K, rho):
        """``w_0 .. w_K`` as an array of length ``K + 1``."""
        raise NotImplementedError

    def weight(self, k, rho):
        """Scalar or vectorized ``w_k(rho)`` for step indices ``k >= 0``."""
        k = np.asarray(k)
        if np.any(k < 0):
            raise UsageError("step index must be nonnegative")
        w = self.weights(int(k.max()) if k.size else 0, rho)[k]
        return float(w) if w.ndim == 0 else w

    def derivative_weights(self, K, rho):
        """``dw_k/drho`` for ``k = 0..K``."""
        rho = self.check(rho)
        w = self.weights(K, rho)
        return w * (np.arange(K + 1) - self.mean_steps(rho)) / rho

    def weight_derivative(self, k, rho):
        k = np.asarray(k)
        if np.any(k < 0):
            raise UsageError("step index must be nonnegative")
        d = self.derivative_weights(int(k.max()) if k.size else 0, rho)[k]
        return float(d) if d.ndim == 0 else d

    def tail_mass(self, K, rho):
        """``sum_{k > K} w_k(rho)``."""
        raise NotImplementedError

    def tail_moment(self, K, rho):
        """``sum_{k > K} k w_k(rho)``."""
        raise NotImplementedError

    def mean_steps(self, rho):
        raise NotImplementedError

    def derivative_tail_bound(self, K, rho):
        """Majorant of ``sum_{k > K} |dw_k/drho|``."""
        rho = self.check(rho)
        return (self.tail_moment(K, rho) + self.mean_steps(rho) * self.tail_mass(K, rho)) / rho

    # -- truncation -----------------------------------------------------
    def truncation(self, rho, eps, step_cap=DEFAULT_STEP_CAP):
        """Smallest ``K`` with ``tail_mass(K, rho) <= eps``."""
        rho = self.check(rho)
        return _smallest_k(lambda K: self.tail_mass(K, rho), eps, step_cap, self, rho)

    def derivative_truncation(self, rho, eps, step_cap=DEFAULT_STEP_CAP):
        """Smallest ``K`` with ``derivative_tail_bound(K, rho) <= eps``."""
        rho = self.check(rho)
        return _smallest_k(lambda K: self.derivative_tail_bound(K, rho), eps, step_cap, self, rho)

    def spec(self, rho):
        """CLI kernel spec string, e.g. ``geometric:alpha=0.85``."""
        return f"{self.family}:{self.param_name}={rho!r}"


def _smallest_k(bound, eps, step_cap, kernel, rho):
    if eps <= 0:
        raise UsageError("truncation tolerance must be positive")
    if bound(0) <= eps:
        return 0
    hi = 1
    while bound(hi) > eps:
        if hi >= step_cap:
            raise StepCapError(
                f"{kernel.family} at {kernel.param_name}={rho!r} needs more than "
                f"{step_cap} steps to reach tail {eps:g}"
            )
        hi = min(2 * hi, step_cap)
    lo = hi // 2
    # invariant: bound(lo) > eps >= bound(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


class Geometric(DampingKernel):
    """Brin-Page damping: ``w_k = (1 - alpha) alpha^k``."""

    family = "geometric"
    param_name = "alpha"
    domain = (0.0, 1.0)

    def weights(self, K, alpha):
        alpha = self.check(alpha)
        k = np.arange(K + 1)
        return (1.0 - alpha) * np.power(alpha, k)

    def derivative_weights(self, K, alpha):
        alpha = self.check(alpha)
        k = np.arange(K + 1, dtype=np.float64)
        d = np.empty(K + 1)
        d[0] = -1.0
        d[1:] = np.power(alpha, k[1:] - 1) * (k[1:] - (k[1:] + 1) * alpha)
        return d

    def tail_mass(self, K, alpha):
        alpha = self.check(alpha)
        return alpha ** (K + 1)

    def tail_moment(self, K, alpha):
        alpha = self.check(alpha)
        return alpha ** (K + 1) * ((K + 1) + alpha / (1.0 - alpha))

    def mean_steps(self, alpha):
        # alpha / (1 - alpha) is ill-conditioned near 1; evaluate it exactly on
        # the shortest decimal that round-trips to alpha, so 0.85 gives 17/3
        alpha = Fraction(repr(self.check(alpha)))
        return float(alpha / (1 - alpha))

    def truncation(self, alpha, eps, step_cap=DEFAULT_STEP_CAP):
        alpha = self.check(alpha)
        if eps <= 0:
            raise UsageError("truncation tolerance must be positive")
        if eps >= 1:
            return 0
        K = max(0, math.ceil(math.log(eps) / math.log(alpha)) - 1)
        if K > step_cap + 1:
            raise StepCapError(
                f"geometric at alpha={alpha!r} needs {K} > {step_cap} steps to reach tail {eps:g}"
            )
        while K > 0 and self.tail_mass(K - 1, alpha) <= eps:
            K -= 1
        while self.tail_mass(K, alpha) > eps:
            K += 1
        if K > step_cap:
            raise StepCapError(
                f"geometric at alpha={alpha!r} needs {K} > {step_cap} steps to reach tail {eps:g}"
            )
        return K


class Poisson(DampingKernel):
    """Heat-kernel damping: ``w_k = exp(-beta) beta^k / k!``."""

    family = "poisson"
    param_name = "beta"

    def weights(self, K, beta):
        beta = self.check(beta)
        k = np.arange(K + 1)
        return np.exp(k * math.log(beta) - beta - gammaln(k + 1))

    def derivative_weights(self, K, beta):
        w = self.weights(K, beta)
        d = -w
        d[1:] += w[:-1]
        return d

    def tail_mass(self, K, beta):
        beta = self.check(beta)
        return float(gammainc(K + 1, beta))

    def tail_moment(self, K, beta):
        beta = self.check(beta)
        if K == 0:
            return beta
        return beta * float(gammainc(K, beta))

    def mean_steps(self, beta):
        return self.check(beta)


class Logarithmic(DampingKernel):
    """Log-series damping: ``w_k = gamma^k / (k * -ln(1 - gamma))``, ``k >= 1``."""

    family = "logarithmic"
    param_name = "gamma"
    support_start = 1
    domain = (0.0, 1.0)

    def weights(self, K, gamma):
        gamma = self.check(gamma)
        k = np.arange(K + 1, dtype=np.float64)
        w = np.zeros(K + 1)
        w[1:] = np.power(gamma, k[1:]) / k[1:] / -math.log1p(-gamma)
        return w

    def derivative_weights(self, K, gamma):
        gamma = self.check(gamma)
        L = -math.log1p(-gamma)
        k = np.arange(K + 1, dtype=np.float64)
        d = np.zeros(K + 1)
        # d/dgamma [gamma^k / (k L)] with dL/dgamma = 1/(1 - gamma)
        d[1:] = (np.power(gamma, k[1:] - 1) / L
                 - np.power(gamma, k[1:]) / (k[1:] * L * L * (1.0 - gamma)))
        return d

    def tail_mass(self, K, gamma):
        gamma = self.check(gamma)
        L = -math.log1p(-gamma)
        lg = math.log(gamma)
        if 42.0 / -lg > 4 * (K + 1) + 100_000:
            # forward summation would be far longer than the prefix; the
            # complement is accurate to roundoff in absolute terms
            return max(0.0, 1.0 - math.fsum(self.weights(K, gamma)))
        total = 0.0
        start = max(K + 1, 1)
        while True:
            k = np.arange(start, start + _CHUNK, dtype=np.float64)
            terms = np.exp(k * lg) / k
            total += terms.sum()
            # remaining terms are bounded by t_last * gamma / (1 - gamma)
            rest = terms[-1] * gamma / (1.0 - gamma)
            if rest <= _SERIES_RTOL * total or rest < 1e-300:
                break
            start += _CHUNK
        return min(1.0, total / L)

    def tail_moment(self, K, gamma):
        gamma = self.check(gamma)
        start = max(K + 1, 1)
        return math.exp(start * math.log(gamma)) / ((1.0 - gamma) * -math.log1p(-gamma))

    def mean_steps(self, gamma):
        gamma = self.check(gamma)
        return gamma / (1.0 - gamma) / -math.log1p(-gamma)


class ConwayMaxwellPoisson(DampingKernel):
    """CMP damping: ``w_k = rho^k / ((k!)^nu Z)``.

    ``nu = 0`` is the geometric family (then ``rho < 1`` is required) and
    ``nu = 1`` the Poisson family. The normalizer ``Z`` and its derivative
    are summed once per ``rho`` and cached.
    """

    family = "cmp"
    param_name = "rho"

    def __init__(self, nu=1.0):
        nu = float(nu)
        if not (nu >= 0.0) or math.isinf(nu):
            raise DomainError(f"cmp: nu={nu!r} must be a finite value >= 0")
        self.nu = nu
        self.domain = (0.0, 1.0) if nu == 0.0 else (0.0, math.inf)
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def kernel_id(self):
        return f"cmp[nu={self.nu!r}]"

    def __repr__(self):
        return f"ConwayMaxwellPoisson(nu={self.nu!r})"

    def spec(self, rho):
        return f"cmp:rho={rho!r},nu={self.nu!r}"

    def _logterms(self, k, rho):
        return k * math.log(rho) - self.nu * gammaln(k + 1.0)

    def _sum_from(self, start, rho, log_scale):
        """``(sum_{k>=start} t_k, sum_{k>=start} k t_k) / exp(log_scale)``."""
        s0 = s1 = 0.0
        k0 = start
        while True:
            k = np.arange(k0, k0 + _CHUNK, dtype=np.float64)
            t = np.exp(self._logterms(k, rho) - log_scale)
            s0 += t.sum()
            s1 += (k * t).sum()
            k_last = k0 + _CHUNK - 1
            r = rho / (k_last + 1.0) ** self.nu
            if r < 1.0:
                rest = t[-1] * r / (1.0 - r)
                rest1 = rest * (k_last + 1.0 / (1.0 - r))
                if ((rest <= _SERIES_RTOL * s0 and rest1 <= _SERIES_RTOL * max(s1, 1e-300))
                        or (rest < 1e-300 and rest1 < 1e-300)):
                    return s0, s1
            k0 += _CHUNK

    def _normalizer(self, rho):
        """``(log Z, mean)`` with ``mean = rho Z'(rho) / Z``."""
        key = float(rho)
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                # scale by the largest term: mode is near rho**(1/nu)
                if self.nu > 0:
                    mode = max(0.0, math.floor(rho ** (1.0 / self.nu)))
                else:
                    mode = 0.0
                log_scale = float(self._logterms(np.float64(mode), rho))
                s0, s1 = self._sum_from(0, rho, log_scale)
                hit = (log_scale + math.log(s0), s1 / s0)
                self._cache[key] = hit
            return hit

    def log_normalizer(self, rho):
        return self._normalizer(self.check(rho))[0]

    def weights(self, K, rho):
        rho = self.check(rho)
        logZ, _ = self._normalizer(rho)
        k = np.arange(K + 1, dtype=np.float64)
        return np.exp(self._logterms(k, rho) - logZ)

    def derivative_weights(self, K, rho):
        # quotient rule with dZ/drho = sum_k k rho^(k-1) / (k!)^nu
        rho = self.check(rho)
        _, mean = self._normalizer(rho)
        k = np.arange(K + 1, dtype=np.float64)
        return self.weights(K, rho) * (k / rho - mean / rho)

    def tail_mass(self, K, rho):
        rho = self.check(rho)
        logZ, _ = self._normalizer(rho)
        s0, _ = self._sum_from(K + 1, rho, logZ)
        return min(1.0, s0)

    def tail_moment(self, K, rho):
        rho = self.check(rho)
        logZ, _ = self._normalizer(rho)
        _, s1 = self._sum_from(K + 1, rho, logZ)
        return s1

    def mean_steps(self, rho):
        return self._normalizer(self.check(rho))[1]


FAMILIES = {
    "geometric": Geometric,
    "poisson": Poisson,
    "logarithmic": Logarithmic,
    "cmp": ConwayMaxwellPoisson,
}
_ALIASES = {
    "geometric": "geometric", "geom": "geometric", "brin-page": "geometric", "bp": "geometric",
    "poisson": "poisson", "heat": "poisson", "chung": "poisson",
    "logarithmic": "logarithmic", "log": "logarithmic", "log-gamma": "logarithmic",
    "cmp": "cmp", "conway-maxwell-poisson": "cmp",
}


def register_family(name, cls, aliases=()):
    """Add a kernel family. ``cls`` must subclass :class:`DampingKernel`."""
    if not issubclass(cls, DampingKernel):
        raise TypeError("kernel families must subclass DampingKernel")
    FAMILIES[name] = cls
    _ALIASES[name] = name
    for a in aliases:
        _ALIASES[a.lower()] = name


def get_kernel(name, **shape):
    key = _ALIASES.get(str(name).strip().lower())
    if key is None:
        raise UsageError(f"unknown kernel family {name!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[key](**shape)


def expand_values(text):
    """Expand ``'0.7'``, ``'0.7:0.97:0.01'`` (inclusive) or ``'0.7/0.8'``."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise UsageError(f"range {text!r} must ascend with a positive step")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        # round to the step's decimal precision so 0.7 + 3*0.01 prints as 0.73
        digits = max(0, -math.floor(math.log10(step)) + 6)
        return [round(start + i * step, digits) for i in range(count)]
    return [float(p) for p in text.split("/") if p.strip()]


def parse_kernel_spec(text):
    """Parse ``family:param=value[,param=value]`` (case-insensitive).

    Returns ``(kernel, rhos)``; the damping parameter may be a single
    value, an inclusive ``start:stop:step`` range or a ``/``-separated list.
    Examples: ``geometric:alpha=0.85``, ``log:gamma=0.94146``,
    ``cmp:rho=2.0,nu=1.5``.
    """
    text = text.strip()
    fam, _, rest = text.partition(":")
    fam = fam.strip().lower()
    key = _ALIASES.get(fam)
    if key is None:
        raise UsageError(f"unknown kernel family {fam!r} in {text!r}")
    cls = FAMILIES[key]
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        name, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"kernel parameter {item!r} must be name=value")
        params[name.strip().lower()] = value.strip()
    shape = {}
    if "nu" in params:
        if key != "cmp":
            raise UsageError(f"nu is only valid for the cmp family, not {key}")
        shape["nu"] = float(params.pop("nu"))
    kernel = cls(**shape)
    names = {kernel.param_name, "rho"}
    found = [p for p in params if p in names]
    unknown = [p for p in params if p not in names]
    if unknown:
        raise UsageError(f"unknown parameter(s) {unknown} for {key}")
    if len(found) > 1:
        raise UsageError(f"damping parameter given twice in {text!r}")
    rhos = expand_values(params[found[0]]) if found else []
    for rho in rhos:
        kernel.check(rho)
    return kernel, rhos


def correspondence_solve(kernel, target_mean):
    """Damping value whose mean walk length equals ``target_mean``.

    ``mean_steps`` is strictly increasing in rho for every family, so the
    root is bracketed and found with Brent's method.
    """
    target_mean = float(target_mean)
    if not target_mean > 0:
        raise DomainError("target mean must be positive")
    if isinstance(kernel, Poisson):
        return target_mean
    if isinstance(kernel, Geometric):
        return target_mean / (1.0 + target_mean)

    lo, hi = kernel.domain
    f = lambda r: kernel.mean_steps(r) - target_mean  # noqa: E731
    a = lo + 1e-12 if lo == 0 else lo
    if f(a) >= 0:
        raise DomainError(f"{kernel.family}: target mean {target_mean} below the domain's range")
    if math.isinf(hi):
        b = 1.0
        while f(b) < 0:
            b *= 2.0
            if b > 1e12:
                raise DomainError(f"{kernel.family}: cannot bracket target mean {target_mean}")
    else:
        b = None
        for gap in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14, 1e-15):
            if f(hi - gap) > 0:
                b = hi - gap
                break
        if b is None:
            raise DomainError(f"{kernel.family}: target mean {target_mean} not reachable in domain")
    return brentq(f, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
