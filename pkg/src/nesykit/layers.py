"""Network layers and the perception backbones.

Weights initialize uniform(-a, a) with a = sqrt(1/fan_in); biases start
at zero. Every layer exposes params() as (name, Tensor) pairs.
"""

import numpy as np

from . import tensor as T


def _uniform_init(rng, shape, fan_in, dtype):
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Linear:
    def __init__(self, in_features, out_features, rng, dtype=np.float64):
        self.w = T.Tensor(_uniform_init(rng, (in_features, out_features), in_features, dtype),
                          requires_grad=True)
        self.b = T.Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.add_rowvec(T.matmul(x, self.w), self.b)

    def params(self):
        return [("weight", self.w), ("bias", self.b)]


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel, rng, dtype=np.float64):
        fan_in = in_channels * kernel * kernel
        self.w = T.Tensor(_uniform_init(rng, (out_channels, in_channels, kernel, kernel),
                                        fan_in, dtype), requires_grad=True)
        self.b = T.Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b)

    def params(self):
        return [("weight", self.w), ("bias", self.b)]


class PerceptionNet:
    """Image batch -> confidence simplex over num_symbols.

    Two backbones: the small two-conv-block CNN used throughout, and an
    MLP variant for fast CI runs. Input images are (B, H, W) or
    (B, 1, H, W) floats in [0, 1]; they are shifted/scaled by fixed corpus
    constants before the first layer. Without that centering the shared
    background component dominates every layer's response, untrained nets
    collapse all images onto one or two argmax symbols, and joint training
    cannot recover (the rule table locks onto the label mode first).
    """

    NORM_MEAN = 0.1
    NORM_STD = 0.25

    def __init__(self, num_symbols, backbone="cnn", image_hw=(28, 28), rng=None,
                 dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.num_symbols = int(num_symbols)
        self.backbone = backbone
        self.image_hw = tuple(image_hw)
        self.dtype = np.dtype(dtype)
        h, w = self.image_hw
        if backbone == "cnn":
            self.conv1 = Conv2d(1, 6, 5, rng, dtype)
            self.conv2 = Conv2d(6, 16, 5, rng, dtype)
            fh = ((h - 4) // 2 - 4) // 2
            fw = ((w - 4) // 2 - 4) // 2
            self._flat = 16 * fh * fw
            self.fc1 = Linear(self._flat, 120, rng, dtype)
            self.fc2 = Linear(120, self.num_symbols, rng, dtype)
            self._layers = [("conv1", self.conv1), ("conv2", self.conv2),
                            ("fc1", self.fc1), ("fc2", self.fc2)]
        elif backbone == "mlp":
            self._flat = h * w
            self.fc1 = Linear(self._flat, 128, rng, dtype)
            self.fc2 = Linear(128, self.num_symbols, rng, dtype)
            self._layers = [("fc1", self.fc1), ("fc2", self.fc2)]
        else:
            raise ValueError(f"unknown backbone: {backbone!r}")

    def forward_probs(self, images):
        """(B, H, W) or (B, 1, H, W) array -> (B, num_symbols) simplex node."""
        x = np.asarray(images)
        if x.ndim == 3:
            x = x[:, None, :, :]
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != self.image_hw:
            raise ValueError(f"image batch shape {x.shape} does not match "
                             f"expected (B, 1, {self.image_hw[0]}, {self.image_hw[1]})")
        x = (x.astype(self.dtype) - self.dtype.type(self.NORM_MEAN)) \
            / self.dtype.type(self.NORM_STD)
        x = T.Tensor(x)
        if self.backbone == "cnn":
            x = T.relu(T.maxpool2x2(self.conv1(x)))
            x = T.relu(T.maxpool2x2(self.conv2(x)))
            x = T.reshape(x, (x.shape[0], self._flat))
        else:
            x = T.reshape(x, (x.shape[0], self._flat))
        x = T.relu(self.fc1(x))
        return T.softmax(self.fc2(x))

    def params(self):
        out = []
        for lname, layer in self._layers:
            out.extend((f"{lname}.{p}", t) for p, t in layer.params())
        return out


def net_forward(net, image):
    """Single image -> 1-d simplex over the net's symbol space."""
    probs = net.forward_probs(np.asarray(image)[None])
    return T.reshape(probs, (net.num_symbols,))
