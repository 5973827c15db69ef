"""The LITE time-series classifier.

Three convolutional blocks over (B, 1, T) inputs:

1. a multiplexed first layer (one bias-free convolution per configured
   kernel size) concatenated with a frozen bank of hand-crafted
   trend/peak detection filters, then batch norm and ReLU;
2. two dilated depthwise-separable blocks (depthwise kernel, pointwise
   1x1 mix, batch norm, ReLU).

Global average pooling and an affine head produce the logits. The
post-activation output of the third block is exposed alongside the
logits; the decorrelated-training loss operates on that feature map, and
with the default configuration its 32 depthwise filters of length 20 are
what the diversity analysis compares across models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .arrayio import arrays_checksum, load_bundle, save_bundle
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import (Tensor, as_tensor, assert_finite, batch_norm_1d, concat_channels,
                     conv1d, dense, global_avg_pool, relu)

__all__ = [
    "LiteArchitectureConfig",
    "CustomFilterBank",
    "build_custom_filters",
    "LiteModel",
    "init_model",
    "extract_final_filters",
    "param_count",
    "ratio_vs_reference",
    "model_checksum",
    "save_model",
    "load_model",
    "INCEPTIONTIME_REFERENCE_PARAM_COUNT",
]

# Trainable-parameter count of a single InceptionTime classifier (the
# six-module reference configuration with a two-class head), kept as the
# fixed denominator for model-size ratio reporting.
INCEPTIONTIME_REFERENCE_PARAM_COUNT = 420_192


@dataclass(frozen=True)
class LiteArchitectureConfig:
    """Structural hyperparameters; the defaults give 32x20 final filters."""

    n_filters: int = 32
    first_layer_kernel_sizes: tuple[int, ...] = (40, 20, 10)
    dwsc_kernel_sizes: tuple[int, int] = (20, 20)
    dwsc_dilations: tuple[int, int] = (2, 4)
    trend_filter_lengths: tuple[int, ...] = (2, 4, 8, 16, 32, 64)
    peak_filter_lengths: tuple[int, ...] = (4, 8, 16, 32, 64)
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def validate(self) -> None:
        if self.n_filters < 1:
            raise ConfigError("n_filters must be positive")
        if len(self.dwsc_kernel_sizes) != 2 or len(self.dwsc_dilations) != 2:
            raise ConfigError("exactly two depthwise-separable blocks are expected")
        for k in (*self.first_layer_kernel_sizes, *self.dwsc_kernel_sizes):
            if k < 1:
                raise ConfigError("kernel sizes must be positive")


@dataclass(frozen=True)
class CustomFilterBank:
    """Frozen detection kernels, grouped by length for efficient convolution.

    ``banks`` maps each configured length to a (n, 1, length) stack whose
    rows follow the per-length order increasing, decreasing, peak.
    ``labels`` names every resulting channel in concatenation order.
    """

    banks: tuple[tuple[int, np.ndarray], ...]
    labels: tuple[str, ...] = field(repr=False)

    @property
    def n_channels(self) -> int:
        return len(self.labels)


def _increasing_kernel(k: int) -> np.ndarray:
    half = k // 2
    return np.concatenate([-np.ones(half), np.ones(half)])


def _peak_kernel(k: int) -> np.ndarray:
    m = k // 4
    return np.concatenate([-np.ones(m), np.ones(2 * m), -np.ones(m)])


def build_custom_filters(config: LiteArchitectureConfig) -> CustomFilterBank:
    """Deterministic, seed-independent bank of step and bump detectors.

    Increasing detectors of even length k are half -1s then half +1s,
    decreasing detectors are their negation, and peak detectors of length
    4m are [-1]*m, [+1]*2m, [-1]*m. All kernels are zero-mean.
    """
    for k in config.trend_filter_lengths:
        if k % 2:
            raise ConfigError(f"trend filter length {k} must be even")
    for k in config.peak_filter_lengths:
        if k % 4:
            raise ConfigError(f"peak filter length {k} must be divisible by 4")

    by_length: dict[int, list[tuple[str, np.ndarray]]] = {}
    for k in config.trend_filter_lengths:
        inc = _increasing_kernel(k)
        by_length.setdefault(k, []).append((f"increasing{k}", inc))
        by_length[k].append((f"decreasing{k}", -inc))
    for k in config.peak_filter_lengths:
        by_length.setdefault(k, []).append((f"peak{k}", _peak_kernel(k)))

    banks = []
    labels = []
    for k in sorted(by_length):
        names, kernels = zip(*by_length[k])
        banks.append((k, np.stack(kernels)[:, None, :].astype(np.float64)))
        labels.extend(names)
    return CustomFilterBank(banks=tuple(banks), labels=tuple(labels))


def _glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class LiteModel:
    """One LITE classifier: parameters, batch-norm buffers, frozen filters."""

    def __init__(self, config: LiteArchitectureConfig, n_classes: int, seed: int):
        config.validate()
        if n_classes < 2:
            raise ConfigError("a classifier needs at least two classes")
        self.config = config
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        self.custom_filters = build_custom_filters(config)

        nf = config.n_filters
        rng = np.random.default_rng(self.seed)
        self.first_kernels = []
        for k in config.first_layer_kernel_sizes:
            w = _glorot_uniform(rng, (nf, 1, k), fan_in=k, fan_out=nf * k)
            self.first_kernels.append(Tensor(w, requires_grad=True))
        c1 = nf * len(config.first_layer_kernel_sizes) + self.custom_filters.n_channels

        k1, k2 = config.dwsc_kernel_sizes
        self.dw1 = Tensor(_glorot_uniform(rng, (c1, 1, k1), fan_in=k1, fan_out=k1),
                          requires_grad=True)
        self.pw1 = Tensor(_glorot_uniform(rng, (nf, c1, 1), fan_in=c1, fan_out=nf),
                          requires_grad=True)
        self.dw2 = Tensor(_glorot_uniform(rng, (nf, 1, k2), fan_in=k2, fan_out=k2),
                          requires_grad=True)
        self.pw2 = Tensor(_glorot_uniform(rng, (nf, nf, 1), fan_in=nf, fan_out=nf),
                          requires_grad=True)

        self._bn = []
        for width in (c1, nf, nf):
            self._bn.append({
                "gamma": Tensor(np.ones(width), requires_grad=True),
                "beta": Tensor(np.zeros(width), requires_grad=True),
                "mean": np.zeros(width),
                "var": np.ones(width),
            })

        self.head_w = Tensor(_glorot_uniform(rng, (n_classes, nf), fan_in=nf,
                                             fan_out=n_classes), requires_grad=True)
        self.head_b = Tensor(np.zeros(n_classes), requires_grad=True)
        self._custom_tensors = [Tensor(bank) for _, bank in self.custom_filters.banks]

    # -- forward ---------------------------------------------------------

    def forward(self, x, mode: str = "eval") -> tuple[Tensor, Tensor]:
        """Run the network; returns (logits, final-block feature map).

        ``x`` is a tensor or array of shape (B, 1, T). The feature map is
        the post-activation output of the third convolutional block,
        shaped (B, n_filters, T). Train mode uses batch statistics in the
        batch norms and folds them into the running buffers; eval mode is
        a pure function of parameters, buffers and input.
        """
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected input of shape (B, 1, T), got {x.shape}")
        cfg = self.config

        branches = [conv1d(x, w) for w in self.first_kernels]
        branches += [conv1d(x, cw) for cw in self._custom_tensors]
        h = concat_channels(branches)
        h = self._apply_bn(h, 0, mode)
        h = relu(h)
        assert_finite(h, "block1")

        h = conv1d(h, self.dw1, dilation=cfg.dwsc_dilations[0], groups=h.shape[1])
        h = conv1d(h, self.pw1)
        h = self._apply_bn(h, 1, mode)
        h = relu(h)
        assert_finite(h, "block2")

        h = conv1d(h, self.dw2, dilation=cfg.dwsc_dilations[1], groups=h.shape[1])
        h = conv1d(h, self.pw2)
        h = self._apply_bn(h, 2, mode)
        features = relu(h)
        assert_finite(features, "block3")

        pooled = global_avg_pool(features)
        logits = dense(pooled, self.head_w, self.head_b)
        assert_finite(logits, "head")
        return logits, features

    def _apply_bn(self, h: Tensor, idx: int, mode: str) -> Tensor:
        bn = self._bn[idx]
        return batch_norm_1d(h, bn["gamma"], bn["beta"], bn["mean"], bn["var"],
                             mode=mode, momentum=self.config.bn_momentum,
                             eps=self.config.bn_epsilon)

    # -- parameters and state --------------------------------------------

    def trainable_parameters(self) -> list[Tensor]:
        params = list(self.first_kernels)
        for bn in self._bn:
            params += [bn["gamma"], bn["beta"]]
        params += [self.dw1, self.pw1, self.dw2, self.pw2, self.head_w, self.head_b]
        return params

    def randomly_initialized_parameters(self) -> list[Tensor]:
        """The seed-dependent subset (kernels and head weight, not affine/bias)."""
        return list(self.first_kernels) + [self.dw1, self.pw1, self.dw2, self.pw2,
                                           self.head_w]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        for i, w in enumerate(self.first_kernels):
            out[f"first{i}"] = w.data.copy()
        for i, bn in enumerate(self._bn, start=1):
            out[f"bn{i}.gamma"] = bn["gamma"].data.copy()
            out[f"bn{i}.beta"] = bn["beta"].data.copy()
            out[f"bn{i}.mean"] = bn["mean"].copy()
            out[f"bn{i}.var"] = bn["var"].copy()
        out["dw1"] = self.dw1.data.copy()
        out["pw1"] = self.pw1.data.copy()
        out["dw2"] = self.dw2.data.copy()
        out["pw2"] = self.pw2.data.copy()
        out["head.weight"] = self.head_w.data.copy()
        out["head.bias"] = self.head_b.data.copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        current = self.state_arrays()
        if set(arrays) != set(current):
            missing = set(current) ^ set(arrays)
            raise CheckpointError(f"state keys do not match this architecture: {sorted(missing)}")
        for i, w in enumerate(self.first_kernels):
            w.data = np.array(arrays[f"first{i}"], dtype=np.float64)
        for i, bn in enumerate(self._bn, start=1):
            bn["gamma"].data = np.array(arrays[f"bn{i}.gamma"], dtype=np.float64)
            bn["beta"].data = np.array(arrays[f"bn{i}.beta"], dtype=np.float64)
            bn["mean"][:] = arrays[f"bn{i}.mean"]
            bn["var"][:] = arrays[f"bn{i}.var"]
        self.dw1.data = np.array(arrays["dw1"], dtype=np.float64)
        self.pw1.data = np.array(arrays["pw1"], dtype=np.float64)
        self.dw2.data = np.array(arrays["dw2"], dtype=np.float64)
        self.pw2.data = np.array(arrays["pw2"], dtype=np.float64)
        self.head_w.data = np.array(arrays["head.weight"], dtype=np.float64)
        self.head_b.data = np.array(arrays["head.bias"], dtype=np.float64)


def init_model(config: LiteArchitectureConfig, n_classes: int, seed: int) -> LiteModel:
    """Build a LITE model; identical seeds give bit-identical parameters.

    Kernels and the head weight are Glorot-uniform draws from a generator
    seeded with ``seed``; biases start at zero and batch-norm affines at
    gamma=1, beta=0 with running buffers at mean=0, var=1.
    """
    return LiteModel(config, n_classes, seed)


def extract_final_filters(model: LiteModel) -> np.ndarray:
    """The final depthwise kernel bank as (n_filters, kernel_length).

    With the default configuration the shape is (32, 20). Non-default
    configurations simply yield that configuration's shape.
    """
    return model.dw2.data[:, 0, :].copy()


def param_count(model: LiteModel) -> int:
    """Number of trainable scalars; the frozen custom filters are excluded."""
    return sum(p.data.size for p in model.trainable_parameters())


def ratio_vs_reference(count: int, reference_count: int = INCEPTIONTIME_REFERENCE_PARAM_COUNT)\
        -> float:
    if reference_count <= 0:
        raise ConfigError("reference count must be positive")
    return count / reference_count


def model_checksum(model: LiteModel) -> str:
    """sha256 over every parameter and buffer; bit-sensitive."""
    return arrays_checksum(model.state_arrays())


def save_model(model: LiteModel, path) -> None:
    """Write a versioned checkpoint; round trips are bit-exact."""
    meta = {
        "config": asdict(model.config),
        "n_classes": model.n_classes,
        "seed": model.seed,
    }
    save_bundle(path, "lite-model", meta, model.state_arrays())


def load_model(path) -> LiteModel:
    _, meta, arrays = load_bundle(path, expected_kind="lite-model")
    raw = dict(meta["config"])
    for key in ("first_layer_kernel_sizes", "dwsc_kernel_sizes", "dwsc_dilations",
                "trend_filter_lengths", "peak_filter_lengths"):
        raw[key] = tuple(raw[key])
    config = LiteArchitectureConfig(**raw)
    model = LiteModel(config, int(meta["n_classes"]), int(meta["seed"]))
    model.load_state_arrays(arrays)
    return model
