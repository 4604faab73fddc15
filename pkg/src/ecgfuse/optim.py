"""Adam and a step-decay learning-rate schedule."""
import numpy as np


class Adam:
    """Adam without weight decay over a name -> Tensor parameter mapping."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        if self.lr == 0.0:
            return
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def state_arrays(self):
        """Moment buffers keyed for checkpointing."""
        out = {}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, step_count):
        for name in self.params:
            self.m[name] = np.array(arrays[f"optim.m.{name}"], dtype=self.params[name].dtype)
            self.v[name] = np.array(arrays[f"optim.v.{name}"], dtype=self.params[name].dtype)
        self.step_count = int(step_count)


def step_lr(base_lr, epoch, gamma=0.1, step_size=4):
    """Learning rate for 1-based ``epoch`` under step decay."""
    return base_lr * gamma ** ((epoch - 1) // step_size)
