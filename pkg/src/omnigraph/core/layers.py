"""Parameter containers."""

import numpy as np

from .tensor import Tensor, matmul


class Linear:
    """Affine map ``x @ W + b`` with Glorot-uniform weights and zero bias."""

    def __init__(self, d_in, d_out, rng, bias=True, name="linear"):
        limit = np.sqrt(6.0 / (d_in + d_out))
        self.weight = Tensor(rng.uniform(-limit, limit, size=(d_in, d_out)),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = (Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.bias")
                     if bias else None)
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got {x.shape[-1]}")
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])
