"""Explicit training-set and shadow-size prescriptions for kernel ridge
regression with the GLQK or the global shadow kernel.

Each regime fixes ``(N, T, B^2, lambda, h, zeta)`` in closed form from the
polynomial's ``m``, ``p``, ``||g||_1``, the correlation length ``xi`` and the
target accuracy ``epsilon``.  Formula assumptions that fail are reported as
warnings; the numbers are still returned.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import InvalidArgument
from .pauli_poly import (
    ObservablePolynomial,
    cluster_approximation,
    cover_report,
    local_factor_count,
    shadow_budget,
)

KERNELS = ("glqk", "shadow")


@dataclass
class ResourcePlan:
    kernel: str
    symmetric: bool
    n: int
    epsilon: float
    xi: float
    delta: int
    zeta: int
    N: float
    T: int
    B2: float
    lam: float
    h: int | None
    alpha_g: int | None = None
    alpha_exact: bool | None = None
    beta_g: int | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def B(self) -> float:
        return math.sqrt(self.B2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["B"] = self.B
        return d


def _exp(x: float, warnings: list[str]) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        warnings.append("sample-size formula overflows double precision; N reported as inf")
        return math.inf


def cluster_distance(g: ObservablePolynomial, xi: float, epsilon: float) -> int:
    """``ceil(xi * log(2 ||g||_1 m p / epsilon))``, at least 1."""
    val = xi * math.log(2.0 * g.norm1 * g.m * g.p / epsilon)
    return max(1, math.ceil(val))


def plan_resources(
    g: ObservablePolynomial,
    xi: float,
    epsilon: float,
    symmetric: bool,
    kernel: str = "glqk",
    n: int | None = None,
    tau: float = 1.0,
    gamma: float = 1.0,
) -> ResourcePlan:
    """Closed-form resource plan for one of the four regimes.

    Parameters
    ----------
    g : ObservablePolynomial
        Target polynomial; its lattice supplies ``D`` and the geometry used for
        the cover number.
    xi : float
        Correlation length bound.
    epsilon : float
        Target root-mean-square error, ``0 < epsilon < ||g||_1``.
    symmetric : bool
        Translation-symmetric data distribution.
    kernel : {"glqk", "shadow"}
    n : int, optional
        System size entering the ``n``-power of ``N`` and ``B^2``; defaults to
        the lattice size.
    """
    if kernel not in KERNELS:
        raise InvalidArgument(f"kernel must be one of {KERNELS}, got {kernel!r}")
    if not g.terms:
        raise InvalidArgument("cannot plan for an empty polynomial")
    norm = g.norm1
    if not (0.0 < epsilon < norm):
        raise InvalidArgument(f"epsilon must lie in (0, ||g||_1={norm}), got {epsilon}")
    if not xi > 0:
        raise InvalidArgument(f"xi must be positive, got {xi}")
    lat = g.lattice
    n = lat.n if n is None else int(n)
    m, p, D = g.m, g.p, lat.D
    mp = m * p
    warnings: list[str] = []
    if m == 0:
        raise InvalidArgument("polynomial has only identity factors; nothing to learn")

    delta = cluster_distance(g, xi, epsilon)
    zeta = m * delta
    T = shadow_budget(g, epsilon / 2.0, clustered=True)
    dec = cluster_approximation(g, delta)
    if mp / tau < 1:
        warnings.append(f"assumption mp/tau >= 1 violated (mp={mp}, tau={tau})")

    lead = 600.0 / epsilon ** 4 * norm ** 4
    alpha = alpha_exact = beta = h = None
    if kernel == "glqk":
        zeta_eval = min(zeta, min(lat.dims))
        if zeta_eval < zeta:
            warnings.append(
                f"window width {zeta} exceeds lattice side {min(lat.dims)}; "
                "cover number evaluated at the lattice side"
            )
        rep = cover_report(dec, zeta_eval)
        alpha, alpha_exact = rep.alpha, rep.exact
        if 2 * zeta ** D / gamma < 1:
            warnings.append("assumption 2 zeta^D / gamma >= 1 violated")
        base = (2.0 * mp * zeta ** D / (tau * gamma)) ** mp
        if symmetric:
            B2 = norm ** 2 * base
            N = lead * _exp(tau * math.exp(5 * gamma), warnings) * base
            h = 1
        else:
            B2 = norm ** 2 * base * float(n) ** alpha
            N = lead * _exp(alpha * tau * math.exp(5 * gamma), warnings) * base * float(n) ** alpha
            h = alpha
    else:
        base = (2.0 * m ** 2 * p ** 2 / (tau * gamma)) ** mp
        if symmetric:
            beta = local_factor_count(dec)
            power = mp - beta
            if 2 / gamma < 1:
                warnings.append("assumption 2 / gamma >= 1 violated")
        else:
            power = mp
            if 2 * n / gamma < 1:
                warnings.append("assumption 2 n / gamma >= 1 violated")
        B2 = norm ** 2 * base * float(n) ** power
        N = lead * _exp(tau * math.exp(5 * gamma), warnings) * base * float(n) ** power

    return ResourcePlan(
        kernel=kernel,
        symmetric=bool(symmetric),
        n=n,
        epsilon=float(epsilon),
        xi=float(xi),
        delta=delta,
        zeta=zeta,
        N=N,
        T=T,
        B2=B2,
        lam=epsilon ** 2 / (6.0 * B2),
        h=h,
        alpha_g=alpha,
        alpha_exact=alpha_exact,
        beta_g=beta,
        warnings=warnings,
    )


def plan_all(g: ObservablePolynomial, xi: float, epsilon: float, n: int | None = None,
             tau: float = 1.0, gamma: float = 1.0) -> list[ResourcePlan]:
    """The four regimes side by side: GLQK/shadow kernel x general/symmetric."""
    return [
        plan_resources(g, xi, epsilon, sym, kern, n=n, tau=tau, gamma=gamma)
        for kern in KERNELS
        for sym in (False, True)
    ]
