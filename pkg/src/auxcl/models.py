"""Classification backbones with one shared output layer.

Every backbone ends in a single linear layer whose units are the
classification heads. The head count is fixed for the whole task sequence;
which class owns which head is tracked elsewhere (see `auxcl.mah`), the
model itself only produces raw logits.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    kind: str  # "mlp" | "small_cnn"
    input_shape: tuple  # (features,) for mlp, (channels, height, width) for small_cnn
    num_heads: int
    hidden: tuple = (256, 128)
    channels: tuple = (32, 64)
    dtype: str = "float64"

    def __post_init__(self):
        if self.kind not in ("mlp", "small_cnn"):
            raise ConfigError(f"unknown backbone kind: {self.kind!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.num_heads < 1:
            raise ConfigError("num_heads must be positive")
        if self.kind == "small_cnn" and len(self.input_shape) != 3:
            raise ConfigError("small_cnn needs a (channels, height, width) input shape")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Backbone:
    """Shared plumbing: parameter registry, freezing, checkpoint support."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        self._params: list[Parameter] = []
        self._frozen = False

    def _param(self, data) -> Parameter:
        p = Parameter(data)
        self._params.append(p)
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    @property
    def num_heads(self) -> int:
        return self.config.num_heads

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        self._frozen = True
        for p in self._params:
            p.freeze()

    def unfreeze(self):
        self._frozen = False
        for p in self._params:
            p.unfreeze()

    def forward(self, batch: np.ndarray) -> Tensor:
        raise NotImplementedError

    def reinit_output(self, rng: np.random.Generator):
        raise NotImplementedError

    def param_checksum(self) -> str:
        h = hashlib.sha256()
        for p in self._params:
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def feature_checksum(self) -> str:
        out_ids = {id(p) for p in self.output_parameters()}
        h = hashlib.sha256()
        for p in self._params:
            if id(p) not in out_ids:
                h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def output_parameters(self) -> list[Parameter]:
        raise NotImplementedError


class MLP(Backbone):
    """Flatten -> ReLU stack -> linear heads."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__(config)
        dtype = config.np_dtype
        self.in_features = int(np.prod(config.input_shape))
        widths = [self.in_features, *config.hidden]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(self._param(_he_uniform(rng, (fan_in, fan_out), fan_in, dtype)))
            self.biases.append(self._param(np.zeros(fan_out, dtype=dtype)))
        self.w_out = self._param(_he_uniform(rng, (widths[-1], config.num_heads), widths[-1], dtype))
        self.b_out = self._param(np.zeros(config.num_heads, dtype=dtype))

    def forward(self, batch: np.ndarray) -> Tensor:
        x = np.asarray(batch, dtype=self.config.np_dtype)
        if int(np.prod(x.shape[1:])) != self.in_features:
            raise ShapeError(f"expected {self.in_features} input features, got shape {x.shape}")
        h = Tensor(x.reshape(x.shape[0], -1))
        for w, b in zip(self.weights, self.biases):
            h = ad.relu(ad.add(ad.matmul(h, w), b))
        return ad.add(ad.matmul(h, self.w_out), self.b_out)

    def output_parameters(self):
        return [self.w_out, self.b_out]

    def reinit_output(self, rng: np.random.Generator):
        dtype = self.config.np_dtype
        fan_in = self.w_out.shape[0]
        self.w_out.data = _he_uniform(rng, self.w_out.shape, fan_in, dtype)
        self.b_out.data = np.zeros_like(self.b_out.data)


class SmallConvNet(Backbone):
    """Two conv blocks (3x3, ReLU, 2x2 max-pool) followed by linear heads."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__(config)
        dtype = config.np_dtype
        cin, h, w = config.input_shape
        if h % 4 or w % 4:
            raise ConfigError(f"small_cnn needs spatial dims divisible by 4, got {h}x{w}")
        c1, c2 = config.channels
        self.k1 = self._param(_he_uniform(rng, (c1, cin, 3, 3), cin * 9, dtype))
        self.b1 = self._param(np.zeros((1, c1, 1, 1), dtype=dtype))
        self.k2 = self._param(_he_uniform(rng, (c2, c1, 3, 3), c1 * 9, dtype))
        self.b2 = self._param(np.zeros((1, c2, 1, 1), dtype=dtype))
        self.flat_features = c2 * (h // 4) * (w // 4)
        self.w_out = self._param(
            _he_uniform(rng, (self.flat_features, config.num_heads), self.flat_features, dtype)
        )
        self.b_out = self._param(np.zeros(config.num_heads, dtype=dtype))

    def forward(self, batch: np.ndarray) -> Tensor:
        x = np.asarray(batch, dtype=self.config.np_dtype)
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            raise ShapeError(f"expected batch of shape (N, {self.config.input_shape}), got {x.shape}")
        h = Tensor(x)
        h = ad.max_pool2d(ad.relu(ad.add(ad.conv2d(h, self.k1, stride=1, padding=1), self.b1)))
        h = ad.max_pool2d(ad.relu(ad.add(ad.conv2d(h, self.k2, stride=1, padding=1), self.b2)))
        h = ad.reshape(h, (h.shape[0], self.flat_features))
        return ad.add(ad.matmul(h, self.w_out), self.b_out)

    def output_parameters(self):
        return [self.w_out, self.b_out]

    def reinit_output(self, rng: np.random.Generator):
        dtype = self.config.np_dtype
        self.w_out.data = _he_uniform(rng, self.w_out.shape, self.flat_features, dtype)
        self.b_out.data = np.zeros_like(self.b_out.data)


def build_model(config: BackboneConfig, rng: np.random.Generator) -> Backbone:
    if config.kind == "mlp":
        return MLP(config, rng)
    return SmallConvNet(config, rng)


def masked_logits(logits, mask) -> np.ndarray:
    """Replace masked-out head logits with -inf so they never win argmax.

    Accepts a Tensor or a plain array; returns a plain array (masking is an
    evaluation-side operation, no gradients flow through it).
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (arr.shape[-1],):
        raise ShapeError(f"mask length {mask.shape} does not match head count {arr.shape[-1]}")
    if not mask.any():
        raise ValueError("masked_logits: mask disables every head")
    out = arr.astype(np.float64, copy=True)
    out[..., ~mask] = -np.inf
    return out


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: Backbone, path, seed: int | None = None, config_digest: str = ""):
    """Write shapes, parameter arrays, seed, and config digest to one file."""
    meta = {
        "config": {
            "kind": model.config.kind,
            "input_shape": list(model.config.input_shape),
            "num_heads": model.config.num_heads,
            "hidden": list(model.config.hidden),
            "channels": list(model.config.channels),
            "dtype": model.config.dtype,
        },
        "seed": seed,
        "config_digest": config_digest,
    }
    arrays = {f"param_{i}": p.data for i, p in enumerate(model.parameters())}
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path) -> tuple[Backbone, int | None, str]:
    """Rebuild a model from a checkpoint; parameters round-trip bit-exactly."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        cfg = meta["config"]
        config = BackboneConfig(
            kind=cfg["kind"],
            input_shape=tuple(cfg["input_shape"]),
            num_heads=cfg["num_heads"],
            hidden=tuple(cfg["hidden"]),
            channels=tuple(cfg["channels"]),
            dtype=cfg["dtype"],
        )
        model = build_model(config, np.random.default_rng(0))
        for i, p in enumerate(model.parameters()):
            stored = archive[f"param_{i}"]
            if stored.shape != p.data.shape:
                raise ShapeError(f"checkpoint parameter {i} has shape {stored.shape}, expected {p.data.shape}")
            p.data = stored.copy()
    return model, meta["seed"], meta["config_digest"]
