"""Small fully-connected network mapping surface features to RGB.

The reflectance map is a 4-32-32-3 perceptron: inputs are the two height
gradients plus the normalized pixel position, each hidden linear layer is
followed by batch normalization and ReLU, and the three outputs are the
color channels. Training runs in float64 with hand-written backprop and
Adam; inference folds the normalization into plain affine layers in
float32 for speed.
"""

import numpy as np

from .errors import ModelFormatError, ValidationError

FEATURE_NAMES = ("grad_x", "grad_y", "pos_x", "pos_y")
OUTPUT_NAMES = ("r", "g", "b")


def relu(x):
    return np.maximum(x, 0.0)


class ReflectanceModel:
    """MLP reflectance map with batch normalization on the hidden layers.

    Parameters live in float64. Feature standardization (feat_mean/std)
    and target de-standardization (out_mean/std) are part of the model so
    a saved file is self-contained. Batch statistics use the biased
    variance throughout; running stats feed inference.
    """

    def __init__(self, layer_sizes=(4, 32, 32, 3), seed=0, bn_eps=1e-5):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValidationError("layer sizes must be positive", field="model.layer_sizes")
        self.layer_sizes = sizes
        self.bn_eps = float(bn_eps)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)  # He init for the ReLU stack
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        n_hidden = len(sizes) - 2
        self.gammas = [np.ones(sizes[i + 1]) for i in range(n_hidden)]
        self.betas = [np.zeros(sizes[i + 1]) for i in range(n_hidden)]
        self.running_mean = [np.zeros(sizes[i + 1]) for i in range(n_hidden)]
        self.running_var = [np.ones(sizes[i + 1]) for i in range(n_hidden)]
        self.feat_mean = np.zeros(sizes[0])
        self.feat_std = np.ones(sizes[0])
        self.out_mean = np.zeros(sizes[-1])
        self.out_std = np.ones(sizes[-1])
        self._folded = None

    @property
    def n_hidden(self):
        return len(self.layer_sizes) - 2

    def param_items(self):
        """(name, array) pairs in a fixed order; arrays are live views."""
        items = []
        for i in range(len(self.weights)):
            items.append((f"w{i}", self.weights[i]))
            items.append((f"b{i}", self.biases[i]))
        for i in range(self.n_hidden):
            items.append((f"bn{i}_gamma", self.gammas[i]))
            items.append((f"bn{i}_beta", self.betas[i]))
        return items

    def state_items(self):
        """param_items plus running statistics and normalization constants."""
        items = self.param_items()
        for i in range(self.n_hidden):
            items.append((f"bn{i}_running_mean", self.running_mean[i]))
            items.append((f"bn{i}_running_var", self.running_var[i]))
        items.append(("feat_mean", self.feat_mean))
        items.append(("feat_std", self.feat_std))
        items.append(("out_mean", self.out_mean))
        items.append(("out_std", self.out_std))
        return items

    def set_state(self, arrays):
        """Load arrays produced by state_items() (same order and shapes)."""
        for (name, dst), src in zip(self.state_items(), arrays):
            src = np.asarray(src, dtype=np.float64)
            if src.shape != dst.shape:
                raise ModelFormatError(f"tensor {name} has shape {src.shape}, want {dst.shape}")
            dst[...] = src
        self._folded = None

    # ---- training-mode forward/backward on standardized features/targets ----

    def forward_train(self, x):
        """Forward pass with batch statistics. Returns (out, cache)."""
        x = np.asarray(x, dtype=np.float64)
        cache = {"h": [x], "bn": []}
        h = x
        for i in range(self.n_hidden):
            z = h @ self.weights[i] + self.biases[i]
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv = 1.0 / np.sqrt(var + self.bn_eps)
            zhat = (z - mu) * inv
            a = self.gammas[i] * zhat + self.betas[i]
            h = relu(a)
            cache["bn"].append((z, mu, var, inv, zhat, a))
            cache["h"].append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        cache["out"] = out
        return out, cache

    def loss_and_grads(self, x, y):
        """Mean squared error and gradients for every trainable parameter.

        Pure with respect to running statistics. Returns (loss, grads)
        with grads keyed like param_items(). The batch statistics are
        stashed so a training loop can absorb_last_stats() afterwards.
        """
        y = np.asarray(y, dtype=np.float64)
        out, cache = self.forward_train(x)
        self._last_stats = [(bn[1], bn[2]) for bn in cache["bn"]]
        n = out.shape[0]
        diff = out - y
        loss = float(np.mean(diff * diff))
        grads = {}
        dout = diff * (2.0 / diff.size)
        h_prev = cache["h"][-1]
        grads[f"w{len(self.weights) - 1}"] = h_prev.T @ dout
        grads[f"b{len(self.weights) - 1}"] = dout.sum(axis=0)
        dh = dout @ self.weights[-1].T
        for i in reversed(range(self.n_hidden)):
            z, mu, var, inv, zhat, a = cache["bn"][i]
            da = dh * (a > 0)
            grads[f"bn{i}_gamma"] = (da * zhat).sum(axis=0)
            grads[f"bn{i}_beta"] = da.sum(axis=0)
            dzhat = da * self.gammas[i]
            # batch-norm backward, gradients flow through mu and var too
            dvar = np.sum(dzhat * (z - mu), axis=0) * (-0.5) * inv ** 3
            dmu = -inv * dzhat.sum(axis=0) + dvar * (-2.0 / n) * (z - mu).sum(axis=0)
            dz = dzhat * inv + dvar * (2.0 / n) * (z - mu) + dmu / n
            h_prev = cache["h"][i]
            grads[f"w{i}"] = h_prev.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.weights[i].T
        return loss, grads

    def absorb_last_stats(self, momentum=0.1):
        """Fold the last forward_train batch statistics into the running ones."""
        for i, (mu, var) in enumerate(getattr(self, "_last_stats", [])):
            self.running_mean[i] = (1 - momentum) * self.running_mean[i] + momentum * mu
            self.running_var[i] = (1 - momentum) * self.running_var[i] + momentum * var
        self._folded = None

    def forward_eval(self, x):
        """Forward pass with running statistics, standardized scale, float64."""
        h = np.asarray(x, dtype=np.float64)
        for i in range(self.n_hidden):
            z = h @ self.weights[i] + self.biases[i]
            inv = 1.0 / np.sqrt(self.running_var[i] + self.bn_eps)
            h = relu(self.gammas[i] * (z - self.running_mean[i]) * inv + self.betas[i])
        return h @ self.weights[-1] + self.biases[-1]

    # ---- inference on raw features / raw RGB ----

    def fold_inference(self):
        """Collapse standardization and batch norm into affine float32 layers."""
        layers = []
        n_layers = len(self.weights)
        pre_scale = 1.0 / self.feat_std
        pre_shift = -self.feat_mean / self.feat_std
        for i in range(n_layers):
            w = self.weights[i].copy()
            b = self.biases[i].copy()
            # absorb the incoming affine map x*scale + shift
            b = b + pre_shift @ w
            w = w * pre_scale[:, None]
            if i < self.n_hidden:
                inv = 1.0 / np.sqrt(self.running_var[i] + self.bn_eps)
                g = self.gammas[i] * inv
                b = (b - self.running_mean[i]) * g + self.betas[i]
                w = w * g[None, :]
                pre_scale = np.ones(w.shape[1])
                pre_shift = np.zeros(w.shape[1])
            else:
                b = b * self.out_std + self.out_mean
                w = w * self.out_std[None, :]
            layers.append((w.astype(np.float32), b.astype(np.float32)))
        return layers

    def predict(self, features):
        """Raw features (N, 4) to RGB (N, 3) float32 clamped to [0, 255]."""
        if self._folded is None:
            self._folded = self.fold_inference()
        h = np.ascontiguousarray(features, dtype=np.float32)
        last = len(self._folded) - 1
        for i, (w, b) in enumerate(self._folded):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        np.clip(h, 0.0, 255.0, out=h)
        return h


class Adam:
    """Standard Adam over a model's param_items()."""

    def __init__(self, model, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in model.param_items()}
        self.v = {name: np.zeros_like(p) for name, p in model.param_items()}

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.model.param_items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[name] / b1t) / (np.sqrt(self.v[name] / b2t) + self.eps)
        self.model._folded = None
