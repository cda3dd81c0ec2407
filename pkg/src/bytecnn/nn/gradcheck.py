"""Finite-difference verification of the analytic gradients.

Runs the model's full objective (cross-entropy plus the conv L2 penalty)
and compares each analytic parameter gradient against central finite
differences. The model must be built in float64 mode; float32 rounding
drowns the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loss import softmax_cross_entropy, softmax_cross_entropy_grad

# Relative-error denominators are floored so near-zero gradient pairs do not
# blow up on finite-difference noise.
_DENOM_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict = field(default_factory=dict)  # name -> max relative error

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.per_param.values())

    def __str__(self):
        lines = [f"gradient check (tolerance {self.tolerance:g}):"]
        for name, err in self.per_param.items():
            mark = "ok  " if err <= self.tolerance else "FAIL"
            lines.append(f"  {mark} {name:<16} max rel err {err:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def grad_check(build_fn, tolerance=1e-4, step=1e-5, corruption=0.0):
    """Compare analytic and central finite-difference gradients.

    build_fn() must return (model, inputs, labels) with the model in float64
    mode. corruption, when nonzero, is added to every analytic gradient and
    serves as the negative control (the check must then fail).
    """
    model, x, labels = build_fn()
    if model.dtype != np.float64:
        raise ValueError("grad_check requires a float64 model")

    logits = model.forward(x, train=True)
    _, probs = softmax_cross_entropy(logits, labels)
    model.backward(softmax_cross_entropy_grad(probs, labels))
    analytic = {name: g.copy() + corruption for name, g in model.named_grads()}

    def objective():
        loss, _ = softmax_cross_entropy(model.forward(x, train=False), labels)
        return loss + model.l2_value()

    report = GradCheckReport(tolerance=tolerance)
    for name, p in model.named_params():
        flat = p.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), _DENOM_FLOOR)
        report.per_param[name] = float((np.abs(a - numeric) / denom).max())
    return report
