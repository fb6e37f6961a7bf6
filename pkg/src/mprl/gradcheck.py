"""Central finite-difference verification of the analytic loss gradients.

Each trial draws logits from Normal(0, 3), evaluates the analytic
gradient of one loss, and compares it against central differences of the
forward value.  The error metric per trial is

    max_k |analytic_k - fd_k| / max(max_k |analytic_k|, max_k |fd_k|)

i.e. the worst coordinate disagreement relative to the gradient's own
largest component.  The diagonal gradient mode is measured against the
analytic one and reported as a divergence, never as a failure: it is a
different formula, not a broken implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .labels import TiePolicy, mprl_alpha, softmax
from .losses import GradientMode, LossConfig, lsro_loss, mprl_generated_loss, real_ce_loss

DEFAULT_K_VALUES = (2, 5, 10, 751)
DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-6
LOGIT_SIGMA = 3.0


def finite_difference_gradient(fn, x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.array(x, dtype=np.float64)  # private buffer, perturbed in place
    grad = np.empty_like(x)
    for j in range(x.size):
        orig = x[j]
        x[j] = orig + step
        f_plus = fn(x)
        x[j] = orig - step
        f_minus = fn(x)
        x[j] = orig
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_gradient_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(fd))), 1e-300)
    return float(np.max(np.abs(analytic - fd))) / denom


@dataclass(frozen=True)
class GradCheckCase:
    loss_name: str
    n_classes: int
    trials: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    cases: list[GradCheckCase] = field(default_factory=list)
    # max |diagonal - analytic| per class count, informational only
    diagonal_divergence: dict[int, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(case.passed for case in self.cases)

    def lines(self) -> list[str]:
        out = []
        for case in self.cases:
            status = "PASS" if case.passed else "FAIL"
            out.append(
                f"{status} {case.loss_name:<14} K={case.n_classes:<4} "
                f"trials={case.trials} max_rel_error={case.max_rel_error:.3e}"
            )
        for k, div in sorted(self.diagonal_divergence.items()):
            out.append(
                f"INFO diagonal-mode K={k}: max |diagonal - analytic| = {div:.3e} "
                "(different formula by construction, not checked against differences)"
            )
        return out


def run_gradcheck(
    k_values=DEFAULT_K_VALUES,
    trials: int = 100,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    seed: int = 0,
    include_diagonal_info: bool = True,
) -> GradCheckReport:
    """Run the finite-difference suite over every loss and class count."""
    if trials < 1:
        raise InvalidConfig("trials must be >= 1")
    report = GradCheckReport(tolerance=tolerance, step=step)
    rng = np.random.default_rng(seed)
    for k in k_values:
        worst = {"real_ce": 0.0, "lsro": 0.0, "mprl_analytic": 0.0}
        diag_div = 0.0
        cfg = LossConfig(n_classes=k, gen_weight=1.0, gradient_mode=GradientMode.ANALYTIC)
        diag_cfg = LossConfig(n_classes=k, gen_weight=1.0, gradient_mode=GradientMode.DIAGONAL)
        for _ in range(trials):
            x = rng.normal(0.0, LOGIT_SIGMA, size=k)
            c = int(rng.integers(k))
            alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)

            out = real_ce_loss(x, c)
            fd = finite_difference_gradient(lambda z: real_ce_loss(z, c).value, x, step)
            worst["real_ce"] = max(worst["real_ce"], relative_gradient_error(out.grad_logits, fd))

            out = lsro_loss(x)
            fd = finite_difference_gradient(lambda z: lsro_loss(z).value, x, step)
            worst["lsro"] = max(worst["lsro"], relative_gradient_error(out.grad_logits, fd))

            out = mprl_generated_loss(x, alpha, cfg)
            fd = finite_difference_gradient(
                lambda z: mprl_generated_loss(z, alpha, cfg).value, x, step
            )
            worst["mprl_analytic"] = max(
                worst["mprl_analytic"], relative_gradient_error(out.grad_logits, fd)
            )

            if include_diagonal_info:
                diag = mprl_generated_loss(x, alpha, diag_cfg)
                diag_div = max(diag_div, float(np.max(np.abs(diag.grad_logits - out.grad_logits))))

        for name, err in worst.items():
            report.cases.append(GradCheckCase(name, k, trials, err, err < tolerance))
        if include_diagonal_info:
            report.diagonal_divergence[k] = diag_div
    return report
