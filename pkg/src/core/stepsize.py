"""
Step Sizes
Dual step tau_i and backward step nu_i per row block, plus the constants
(beta_i, gamma_i, zeta_i) that certify a choice
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from constants import PROXIMAL_BOUND_SLACK, STEP_PRESETS
from exceptions import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSizes:
    """Per-row (tau_i, nu_i) with the sampling sizes they were derived for"""
    tau: Tuple[Fraction, ...]
    nu: Tuple[Fraction, ...]
    K: int
    K_I: int
    K_tilde: Tuple[int, ...]
    I: int
    label: str = "table1"

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(Fraction(t) for t in self.tau))
        object.__setattr__(self, "nu", tuple(Fraction(v) for v in self.nu))
        object.__setattr__(self, "K_tilde", tuple(int(k) for k in self.K_tilde))
        if not (len(self.tau) == len(self.nu) == len(self.K_tilde) == self.I):
            raise ConfigurationError("tau, nu and K_tilde must have one entry per row block")
        if any(t <= 0 for t in self.tau):
            raise ConfigurationError(f"tau must be positive: {self.tau}")
        if any(v < 0 or v >= 1 for v in self.nu):
            raise ConfigurationError(f"nu must lie in [0, 1): {self.nu}")
        if not 1 <= self.K_I <= self.I:
            raise ConfigurationError(f"K_I={self.K_I} outside [1, {self.I}]")

    def tau_array(self) -> np.ndarray:
        return np.array([float(t) for t in self.tau])

    def nu_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.nu])

    @property
    def dual_sampling(self) -> bool:
        return self.K_I < self.I

    def describe(self) -> str:
        pairs = sorted(set(zip(self.tau, self.nu)))
        text = ", ".join(f"(tau={t}, nu={v})" for t, v in pairs)
        return f"{self.label} K={self.K} K_I={self.K_I}: {text}"


def _check_K(J: int, K: int) -> None:
    if not 1 <= K <= J:
        raise ConfigurationError(f"K={K} outside [1, J={J}]")


def _check_degrees(degrees: Sequence[int]) -> List[int]:
    degrees = [int(d) for d in degrees]
    if not degrees or min(degrees) < 1:
        raise ConfigurationError(f"row degrees must be >= 1: {degrees}")
    return degrees


def table1_step_sizes(J: int, K: int, degrees: Sequence[int]) -> StepSizes:
    """
    K = 1:      (nu, tau) = (0, 1/(2J-1))
    1 < K < J:  (1 - 1/K~_i, K/(K~_i (2J-K)))
    K = J:      (1 - 1/d_i, 1/d_i)
    """
    _check_K(J, K)
    degrees = _check_degrees(degrees)
    k_tilde = [min(d, K) for d in degrees]
    if K == 1:
        tau = [Fraction(1, 2 * J - 1)] * len(degrees)
        nu = [Fraction(0)] * len(degrees)
    elif K < J:
        tau = [Fraction(K, kt * (2 * J - K)) for kt in k_tilde]
        nu = [1 - Fraction(1, kt) for kt in k_tilde]
    else:
        tau = [Fraction(1, d) for d in degrees]
        nu = [1 - Fraction(1, d) for d in degrees]
    return StepSizes(tuple(tau), tuple(nu), K, len(degrees), tuple(k_tilde), len(degrees), "table1")


def rdbcd_step_sizes(J: int, I: int, K: int, K_I: int, degrees: Sequence[int]) -> StepSizes:
    """tau_i = K / (K~_i [(2J-K) K_I/I + K (1 - K_I/I)]), nu_i = 1 - 1/K~_i"""
    _check_K(J, K)
    if not 1 <= K_I <= I:
        raise ConfigurationError(f"K_I={K_I} outside [1, I={I}]")
    degrees = _check_degrees(degrees)
    if len(degrees) != I:
        raise ConfigurationError(f"{len(degrees)} degrees given for I={I} row blocks")
    q = Fraction(K_I, I)
    denom = (2 * J - K) * q + K * (1 - q)
    k_tilde = [min(d, K) for d in degrees]
    tau = tuple(Fraction(K) / (kt * denom) for kt in k_tilde)
    nu = tuple(1 - Fraction(1, kt) for kt in k_tilde)
    return StepSizes(tau, nu, K, K_I, tuple(k_tilde), I, "rdbcd")


def sadmm_step_sizes(J: int, degrees: Optional[Sequence[int]] = None) -> StepSizes:
    """tau = 1/J, nu = 1 - 1/J with every block updated"""
    if J < 1:
        raise ConfigurationError(f"J must be >= 1, got {J}")
    degrees = [J] if degrees is None else _check_degrees(degrees)
    I = len(degrees)
    return StepSizes((Fraction(1, J),) * I, (1 - Fraction(1, J),) * I, J, I,
                     tuple(min(d, J) for d in degrees), I, "sadmm")


def pjadmm_step_sizes(degrees: Sequence[int], rho: float, I: int,
                      spectral: Dict[Tuple[int, int], float],
                      alpha: Sequence[float]) -> Tuple[StepSizes, List[float]]:
    """
    nu = 0, tau = 1 and eta_j = max over rows i touching j of (d_i - 1) rho I lambda^{ij} / alpha_j.

    `spectral` maps every stored block (i, j) to lambda_max(A_ij' A_ij).
    """
    degrees = _check_degrees(degrees)
    J = len(alpha)
    if any(a <= 0 for a in alpha):
        raise ConfigurationError(f"strong-convexity moduli must be positive: {list(alpha)}")
    eta = []
    for j in range(J):
        pairs = [(i, lam) for (i, jj), lam in spectral.items() if jj == j]
        if not pairs:
            raise ConfigurationError(f"missing spectral bound for column block {j}")
        eta.append(max((degrees[i] - 1) * rho * I * lam / alpha[j] for i, lam in pairs))
    steps = StepSizes((Fraction(1),) * len(degrees), (Fraction(0),) * len(degrees), J, len(degrees),
                      tuple(degrees), len(degrees), "pjadmm")
    return steps, eta


def preset_step_sizes(name: str, J: int, K: int, degrees: Sequence[int]) -> StepSizes:
    """Named presets; "table1" is the canonical choice"""
    if name == "table1":
        return table1_step_sizes(J, K, degrees)
    if name not in STEP_PRESETS:
        raise ConfigurationError(f"unknown step-size preset '{name}' (known: table1, {', '.join(STEP_PRESETS)})")
    table = STEP_PRESETS[name]
    if K not in table:
        raise ConfigurationError(f"preset '{name}' defines K in {sorted(table)}, not K={K}")
    _check_K(J, K)
    degrees = _check_degrees(degrees)
    tau, nu = table[K]
    I = len(degrees)
    return StepSizes((tau,) * I, (nu,) * I, K, I, tuple(min(d, K) for d in degrees), I, name)


@dataclass
class ValidityReport:
    """Theory constants per row block and any violated condition"""
    beta: Tuple[Fraction, ...]
    gamma: Tuple[Fraction, ...]
    zeta: Tuple[Fraction, ...]
    regime: str
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _generic_constants(tau, nu, K, J, d, kt):
    beta = Fraction(4, kt) - (2 - Fraction(K, J)) * (2 * (1 - nu) + tau)
    gamma = (3 - Fraction(2 * K, J)) * (1 - nu) + (1 - Fraction(K, J)) * tau + Fraction(1, d) - Fraction(2, kt)
    zeta = gamma + (1 - Fraction(J, K)) * tau
    return beta, gamma, zeta


def validity_check(s: StepSizes, J: int, degrees: Sequence[int],
                   eta: Optional[Sequence[float]] = None,
                   spectral: Optional[Dict[Tuple[int, int], float]] = None,
                   alpha: Optional[Sequence[float]] = None,
                   rho: float = 1.0) -> ValidityReport:
    """
    Computes beta_i, gamma_i, zeta_i and reports violated conditions.

    Three regimes:
      primal sampling (K_I = I): 0 <= nu_i <= 1 - 1/K~ and nu_i > 1 - 2J/(K~(2J-K)),
        0 < tau_i <= 4J/(K~(2J-K)) - 2(1 - nu_i), beta_i >= 0, zeta_i >= 0;
      dual sampling (K_I < I): tau_i <= K/(K~[(2J-K)q + K(1-q)]) with q = K_I/I,
        nu_i <= 1 - 1/K~, beta_i >= 0, zeta_i >= 0;
      proximal (eta > 0 with K = J): nu_i in [1 - 1/d_i - eta_j alpha_j/(rho I d_i lambda^{ij}), 1 - 1/d_i],
        tau_i <= 1 + 1/d_i - nu_i; there beta_i = 1 + 1/d_i - nu_i - tau_i and gamma_i = zeta_i = 0.
    """
    degrees = [int(d) for d in degrees]
    K = s.K
    I = len(degrees)
    violations: List[str] = []
    if len(s.tau) != I:
        violations.append(f"{len(s.tau)} step sizes for {I} row blocks")
        return ValidityReport((), (), (), "invalid", violations)

    proximal = eta is not None and any(e > 0 for e in eta)
    if proximal:
        regime = "proximal"
    elif s.dual_sampling:
        regime = "dual-sampling"
    else:
        regime = "primal-sampling"

    betas, gammas, zetas = [], [], []
    q = Fraction(s.K_I, s.I)
    for i, d in enumerate(degrees):
        tau, nu = s.tau[i], s.nu[i]
        kt = min(d, K)
        if tau <= 0:
            violations.append(f"row {i}: tau={tau} must be positive")

        if regime == "dual-sampling":
            denom = (2 * J - K) * q + K * (1 - q)
            tau_max = Fraction(K) / (kt * denom)
            beta = Fraction(K, J * kt) * (2 - tau / tau_max)
            zeta = ((J - K) * q + K * (1 - q)) / (kt * denom) + Fraction(1, d) - Fraction(K, J * kt)
            gamma = zeta - (1 - Fraction(J, K)) * tau
            if tau > tau_max:
                violations.append(f"row {i}: tau={tau} exceeds dual-sampling bound {tau_max}")
            if nu < 0 or nu > 1 - Fraction(1, kt):
                violations.append(f"row {i}: nu={nu} outside [0, {1 - Fraction(1, kt)}]")
            if beta < 0:
                violations.append(f"row {i}: beta={beta} < 0")
            if zeta < 0:
                violations.append(f"row {i}: zeta={zeta} < 0")
        else:
            beta, gamma, zeta = _generic_constants(tau, nu, K, J, d, kt)
            if regime == "proximal":
                if K != J:
                    violations.append(f"proximal regime requires K = J, got K={K}")
                if spectral is None:
                    violations.append("proximal regime needs spectral bounds")
                else:
                    alphas = list(alpha) if alpha is not None else [1.0] * J
                    lower = Fraction(0)
                    for (ii, j), lam in spectral.items():
                        if ii != i or lam <= 0:
                            continue
                        bound = 1 - Fraction(1, d) - Fraction(eta[j] * alphas[j]) / Fraction(rho * I * d * lam)
                        lower = max(lower, bound)
                    if nu < lower - Fraction(PROXIMAL_BOUND_SLACK) or nu > 1 - Fraction(1, d):
                        violations.append(f"row {i}: nu={nu} outside proximal interval [{float(lower):.6g}, {1 - Fraction(1, d)}]")
                    if tau > 1 + Fraction(1, d) - nu:
                        violations.append(f"row {i}: tau={tau} exceeds 1 + 1/d - nu = {1 + Fraction(1, d) - nu}")
                # residual weight left over once the proximal terms absorb the coupling
                beta, gamma, zeta = 1 + Fraction(1, d) - nu - tau, Fraction(0), Fraction(0)
            else:
                lower = 1 - Fraction(2 * J, kt * (2 * J - K))
                upper = 1 - Fraction(1, kt)
                if nu < 0 or nu <= lower or nu > upper:
                    violations.append(f"row {i}: nu={nu} outside (max(0, {lower}), {upper}]")
                tau_max = Fraction(4 * J, kt * (2 * J - K)) - 2 * (1 - nu)
                if tau > tau_max:
                    violations.append(f"row {i}: tau={tau} exceeds {tau_max}")
                if beta < 0:
                    violations.append(f"row {i}: beta={beta} < 0")
                if zeta < 0:
                    violations.append(f"row {i}: zeta={zeta} < 0")
        betas.append(beta)
        gammas.append(gamma)
        zetas.append(zeta)

    return ValidityReport(tuple(betas), tuple(gammas), tuple(zetas), regime, violations)
