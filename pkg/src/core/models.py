"""
Model-A / Model-B / Model-C builders for slump regression
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from src.core.errors import InvalidModelError, ShapeMismatchError
from src.core.layers import (
    BatchNormLayer,
    Conv2DLayer,
    Conv3DLayer,
    ConvLSTM2DLayer,
    Dense,
    GlobalAvgPool,
    Layer,
    MaxPool2DLayer,
    MaxPool3DLayer,
    ReLU,
    Sequential,
    TimeDistributed,
)
from src.core.rng import RngStream
from src.core.tensor import Init, Tensor, create

MODEL_IDS = ("A", "B", "C")
CHANNELS = (16, 32, 64)
FULL_INPUT_SHAPE = (30, 224, 224, 3)

EXPECTED_PARAM_COUNTS = {"A": 315_969, "B": 70_817, "C": 277_601}
PUBLISHED_PARAM_COUNTS = {"A": "320K", "B": "73K", "C": "278K"}
DESCRIPTIONS = {
    "A": "Time-distributed 2D convolution network",
    "B": "3D convolution network",
    "C": "2D convolution LSTM network",
}


@dataclass(frozen=True)
class BlockSpec:
    """One feature block: feature layer -> BatchNorm -> [ReLU] -> pool"""

    kind: str  # 'conv2d-td', 'conv3d', 'convlstm'
    out_channels: int
    kernel: Tuple[int, ...]
    relu: bool = True
    pool: Tuple[int, ...] = (2, 2)


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    input_shape: Tuple[int, int, int, int] = FULL_INPUT_SHAPE
    blocks: Tuple[BlockSpec, ...] = field(default_factory=tuple)
    head: Tuple[str, ...] = ("global-avg-pool", "dense->1")


def model_spec(model_id: str) -> ModelSpec:
    """Resolved layer stack; kernel sizes reproduce the published parameter counts"""
    if model_id == "A":
        blocks = tuple(BlockSpec("conv2d-td", c, (11, 11)) for c in CHANNELS)
    elif model_id == "B":
        blocks = tuple(BlockSpec("conv3d", c, (3, 3, 3), pool=(2, 2, 2)) for c in CHANNELS)
    elif model_id == "C":
        blocks = (
            BlockSpec("conv2d-td", CHANNELS[0], (3, 3)),
            BlockSpec("convlstm", CHANNELS[1], (3, 3), relu=False),
            BlockSpec("convlstm", CHANNELS[2], (3, 3), relu=False),
        )
    else:
        raise InvalidModelError(f"Unknown model id '{model_id}', expected one of {', '.join(MODEL_IDS)}")
    return ModelSpec(model_id=model_id, blocks=blocks)


def _build_block(spec: BlockSpec, in_channels: int, gen: np.random.Generator, dtype) -> Sequential:
    layers: List[Tuple[str, Layer]] = []
    if spec.kind == "conv2d-td":
        layers.append(("conv", TimeDistributed(Conv2DLayer(in_channels, spec.out_channels, spec.kernel[0],
                                                           rng=gen, dtype=dtype))))
    elif spec.kind == "conv3d":
        layers.append(("conv", Conv3DLayer(in_channels, spec.out_channels, spec.kernel, rng=gen, dtype=dtype)))
    elif spec.kind == "convlstm":
        layers.append(("convlstm", ConvLSTM2DLayer(in_channels, spec.out_channels, spec.kernel[0],
                                                   return_sequences=True, rng=gen, dtype=dtype)))
    else:
        raise InvalidModelError(f"Unknown block kind '{spec.kind}'")

    layers.append(("bn", BatchNormLayer(spec.out_channels, dtype=dtype)))
    if spec.relu:
        layers.append(("relu", ReLU()))
    if len(spec.pool) == 3:
        layers.append(("pool", MaxPool3DLayer(spec.pool)))
    else:
        layers.append(("pool", TimeDistributed(MaxPool2DLayer(spec.pool[0]))))
    return Sequential(layers)


class SlumpRegressor(Layer):
    """Three feature blocks, global average pooling and a dense regression head.

    The head output is rescaled by two non-trainable buffers,
    prediction = dense(x) * target_scale + target_offset, which default to
    the identity and are calibrated from training labels by the trainer.
    """

    def __init__(self, spec: ModelSpec, rng: RngStream, dtype="f32"):
        super().__init__()
        self.spec = spec
        gen = rng.generator()
        in_channels = spec.input_shape[-1]
        for index, block in enumerate(spec.blocks, start=1):
            self.add_child(f"block{index}", _build_block(block, in_channels, gen, dtype))
            in_channels = block.out_channels
        self.gap = self.add_child("gap", GlobalAvgPool())
        self.head = self.add_child("head", Dense(in_channels, 1, rng=gen, dtype=dtype))
        self.target_offset = self.add_buffer("target_offset", create([1], dtype))
        self.target_scale = self.add_buffer("target_scale", create([1], dtype, Init.ones()))

    @property
    def model_id(self) -> str:
        return self.spec.model_id

    def forward(self, batch: Tensor) -> Tensor:
        if batch.ndim != 5 or batch.shape[-1] != self.spec.input_shape[-1]:
            raise ShapeMismatchError(f"Model-{self.model_id} expects [N,T,H,W,3], got {batch.shape}")
        _, _, h, w, _ = batch.shape
        if h < 8 or w < 8:
            raise ShapeMismatchError(f"Frames of {h}x{w} are too small for three 2x2 pools")
        x = batch
        for index in range(1, len(self.spec.blocks) + 1):
            x = self._children[f"block{index}"](x)
        x = self.head(self.gap(x))
        return x * self.target_scale + self.target_offset

    def calibrate_head(self, labels: np.ndarray):
        """Set the output buffers from training-label statistics"""
        labels = np.asarray(labels, dtype=np.float64)
        scale = float(labels.std()) if labels.size > 1 else 1.0
        self.target_offset.data = np.full(1, labels.mean(), dtype=self.target_offset.dtype)
        self.target_scale.data = np.full(1, scale if scale > 0 else 1.0, dtype=self.target_scale.dtype)

    def layer_param_counts(self) -> List[Tuple[str, int]]:
        """Per-layer trainable counts for leaf layers that own parameters"""
        rows = []
        for name, layer in self.named_layers():
            own = sum(p.size for p in layer._params.values())
            if own:
                rows.append((name.replace(".inner", ""), own))
        return rows


def build_model(model_id: str, rng: RngStream, dtype="f32") -> SlumpRegressor:
    """Instantiate Model-A/B/C with he-uniform kernels, glorot head and zero biases"""
    return SlumpRegressor(model_spec(model_id), rng, dtype=dtype)


def forward(model: SlumpRegressor, batch: Tensor) -> Tensor:
    return model(batch)


def expected_param_counts() -> Dict[str, int]:
    return dict(EXPECTED_PARAM_COUNTS)
