"""SGD-with-momentum, Adam, and MADGRAD over named parameter lists.

Per-name learning-rate overrides let rule tables move faster than the
perception nets (each table cell is visited far less often than a net
weight). Missing gradients count as exactly zero.
"""

import numpy as np


class Optimizer:
    def __init__(self, named_params, lr, lr_overrides=None):
        self.named_params = list(named_params)
        self.lr = float(lr)
        self.lr_overrides = dict(lr_overrides or {})
        self.step_count = 0

    def _lr_for(self, name):
        for prefix, lr in self.lr_overrides.items():
            if name == prefix or name.startswith(prefix + "."):
                return lr
        return self.lr

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, named_params, lr=0.01, momentum=0.9, lr_overrides=None):
        super().__init__(named_params, lr, lr_overrides)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        self.step_count += 1
        for (name, p), v in zip(self.named_params, self.velocity):
            g = p.grad_or_zeros()
            v *= self.momentum
            v += g
            p.data -= self._lr_for(name) * v


class Adam(Optimizer):
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 lr_overrides=None):
        super().__init__(named_params, lr, lr_overrides)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for (name, p), m, v in zip(self.named_params, self.m, self.v):
            g = p.grad_or_zeros()
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data -= self._lr_for(name) * mhat / (np.sqrt(vhat) + self.eps)


class MadGrad(Optimizer):
    """Dual averaging with cube-root adaptivity (Defazio & Jelassi 2021).

    Accumulated squared gradients shrink the effective step over time,
    which anneals the perception/rule co-adaptation without an explicit
    schedule. Iterates are an EMA pulled toward the dual-average point z.
    """

    def __init__(self, named_params, lr=1e-2, momentum=0.9, eps=1e-6,
                 lr_overrides=None):
        super().__init__(named_params, lr, lr_overrides)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.x0 = [p.data.copy() for _, p in self.named_params]
        self.s = [np.zeros_like(p.data) for _, p in self.named_params]
        self.nu = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        k = self.step_count
        self.step_count += 1
        for (name, p), x0, s, nu in zip(self.named_params, self.x0,
                                        self.s, self.nu):
            g = p.grad_or_zeros()
            lamb = self._lr_for(name) * np.sqrt(k + 1.0)
            nu += lamb * g * g
            s += lamb * g
            z = x0 - s / (np.cbrt(nu) + self.eps)
            p.data *= self.momentum
            p.data += (1.0 - self.momentum) * z


def make_optimizer(named_params, algo="adam", lr=1e-3, momentum=0.9, lr_overrides=None):
    if algo == "adam":
        return Adam(named_params, lr=lr, lr_overrides=lr_overrides)
    if algo == "sgd":
        return SGD(named_params, lr=lr, momentum=momentum, lr_overrides=lr_overrides)
    if algo == "madgrad":
        return MadGrad(named_params, lr=lr, momentum=momentum,
                       lr_overrides=lr_overrides)
    raise ValueError(f"unknown optimizer: {algo!r}")
