"""Central-difference gradient verification.

Everything runs in float64: float32 rounding alone would eat the error
budget. Weights whose +/-eps perturbation flips a discrete decision (ReLU
sign, pooling argmax) sit on a kink where the loss is not differentiable;
those are detected by comparing decision signatures at the two evaluation
points and skipped rather than failed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    n_checked: int = 0
    n_skipped: int = 0
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)

    def __str__(self):
        return (
            f"max_rel_err={self.max_rel_err:.3e} checked={self.n_checked} "
            f"skipped={self.n_skipped} worst={self.worst or '-'}"
        )


def gradient_check(run, tensors, analytic, eps=1e-4, n_per_tensor=25, rng=None):
    """Compare analytic gradients against central differences.

    ``run()`` re-evaluates the loss at the current tensor values and returns
    ``(loss, signature)``; ``tensors`` maps names to the float64 arrays that
    get perturbed in place; ``analytic`` maps the same names to gradient
    arrays captured beforehand. Relative error uses
    ``|fd - g| / max(|fd|, |g|, 1e-3)`` so near-zero gradients do not blow
    up the ratio.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport()
    for name, arr in tensors.items():
        if arr.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks need float64 tensors, got {arr.dtype}")
        grad = np.asarray(analytic.get(name, np.zeros_like(arr)))
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        if flat.size <= n_per_tensor:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=n_per_tensor, replace=False)
        worst_here = 0.0
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, sig_p = run()
            flat[idx] = orig - eps
            lm, sig_m = run()
            flat[idx] = orig
            if sig_p != sig_m:
                report.n_skipped += 1
                continue
            fd = (lp - lm) / (2.0 * eps)
            g = float(gflat[idx])
            rel = abs(fd - g) / max(abs(fd), abs(g), 1e-3)
            report.n_checked += 1
            worst_here = max(worst_here, rel)
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst = f"{name}[{idx}]"
        report.per_tensor[name] = worst_here
    if not math.isfinite(report.max_rel_err):
        raise FloatingPointError("non-finite relative error during gradient check")
    return report


def check_graph(graph, feeds, loss_fn, check_inputs=True, eps=1e-4, n_per_tensor=25,
                rng=None, train=True):
    """Gradient-check every parameter of a graph (and optionally its feeds).

    ``loss_fn(outputs) -> (loss, d_outputs)`` defines the scalar objective
    over the graph's named outputs. The graph is cast to float64 in place.
    Dropout layers must have a fixed counter so masks repeat across
    evaluations; run with ``train=True`` to exercise them.
    """
    graph.astype(np.float64)
    feeds64 = {k: np.asarray(v, dtype=np.float64) for k, v in feeds.items()}

    def run():
        outs = graph.forward(feeds64, train=train)
        loss, _ = loss_fn(outs)
        return loss, graph.signature()

    outs = graph.forward(feeds64, train=train)
    _, d_out = loss_fn(outs)
    d_feeds = graph.backward(d_out)
    analytic = {k: v.copy() for k, v in graph.gradients().items()}
    tensors = dict(graph.parameters())
    if check_inputs:
        for k, v in feeds64.items():
            tensors[f"feed:{k}"] = v
            analytic[f"feed:{k}"] = np.asarray(d_feeds.get(k, np.zeros_like(v))).copy()
    return gradient_check(run, tensors, analytic, eps=eps, n_per_tensor=n_per_tensor, rng=rng)
