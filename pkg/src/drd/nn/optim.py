"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np


class Adam:
    """Classic Adam with bias correction and optional decoupled-free L2.

    ``params`` maps names to the arrays that will be updated in place.
    Weight decay is folded into the gradient before the moment updates
    (plain L2, not decoupled). ``lr`` is a plain attribute so a schedule can
    reassign it between steps.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads):
        if set(grads) != set(self.params):
            missing = set(self.params) ^ set(grads)
            raise KeyError(f"gradient names do not match parameters: {sorted(missing)}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, w in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            w -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self):
        """Named moment tensors plus the step count, for checkpointing."""
        out = {"t": self.t}
        for name in self.params:
            out[f"{name}.m"] = self.m[name]
            out[f"{name}.v"] = self.v[name]
        return out

    def load_state(self, state):
        self.t = int(state["t"])
        for name in self.params:
            m, v = state[f"{name}.m"], state[f"{name}.v"]
            if m.shape != self.params[name].shape:
                raise ValueError(f"moment shape mismatch for {name}")
            self.m[name] = m.astype(self.params[name].dtype)
            self.v[name] = v.astype(self.params[name].dtype)
