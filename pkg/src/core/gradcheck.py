"""
Finite-difference gradient oracle
"""

from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field

from src.core.config import Settings
from src.core.errors import ConfigError, InvalidModelError, NumericFailureError
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
    TimeDistributed,
)
from src.core.models import build_model
from src.core.rng import RngStream
from src.core.tensor import Tensor, backward, no_grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: Optional[int] = None, rng: Optional[RngStream] = None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    `f` must return a traced scalar. With `max_coords` set, at most that many
    coordinates per input are probed, drawn without replacement from `rng`;
    this is how whole models are checked without one forward per parameter.
    """
    errors = grad_check_detail(f, inputs, eps=eps, max_coords=max_coords, rng=rng)
    return max(errors) if errors else 0.0


def grad_check_detail(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                      max_coords: Optional[int] = None,
                      rng: Optional[RngStream] = None) -> List[float]:
    """Per-input maximum relative error, in the order of `inputs`"""
    for tensor in inputs:
        if tensor.dtype != np.float64:
            raise ConfigError("grad_check requires f64 inputs")
        # perturbations below write through a flat view
        tensor.data = np.ascontiguousarray(tensor.data)
        tensor.requires_grad = True
        tensor.zero_grad()

    loss = f(*inputs)
    _require_finite(loss.data, "loss")
    backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    generator = (rng or RngStream(seed=0, stream_index=0)).generator()
    errors = []
    for tensor, grad in zip(inputs, analytic):
        _require_finite(grad, "analytic gradient")
        flat = tensor.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(generator.choice(flat.size, size=max_coords, replace=False))
        else:
            coords = np.arange(flat.size)

        worst = 0.0
        for index in coords:
            original = flat[index]
            flat[index] = original + eps
            plus = _evaluate(f, inputs)
            flat[index] = original - eps
            minus = _evaluate(f, inputs)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(grad_flat[index])
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
        errors.append(worst)
    return errors


def _evaluate(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    with no_grad():
        value = f(*inputs)
    _require_finite(value.data, "perturbed loss")
    return float(value.data.reshape(-1)[0])


def _require_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise NumericFailureError(f"Non-finite {what} during gradient check")


class GradcheckSettings(Settings):
    """Gradient verification options"""

    scale: Literal["reduced"] = Field("reduced", description="Input scale: reduced is N=2, T=4, 16x16, f64")
    threshold: float = Field(1e-4, gt=0, description="Largest accepted relative error")
    max_coords: int = Field(8, ge=1, description="Probed coordinates per tensor")
    eps: float = Field(1e-5, gt=0, description="Central-difference step")


def _probe_loss(layer: Layer, x: Tensor, gen: np.random.Generator) -> Callable[..., Tensor]:
    """Random linear functional of the layer output, so every output coordinate matters"""
    out_shape = layer(x).shape
    weights = Tensor(gen.uniform(-1.0, 1.0, out_shape), dtype="f64")
    return lambda *_: (layer(x) * weights).sum()


def _check_layer(name: str, layer: Layer, input_shape: Tuple[int, ...], settings: GradcheckSettings,
                 rng: RngStream) -> Tuple[str, float]:
    gen = rng.generator()
    x = Tensor(gen.uniform(-1.0, 1.0, input_shape), dtype="f64")
    layer.train()
    f = _probe_loss(layer, x, gen)
    error = grad_check(f, [x] + layer.parameters(), eps=settings.eps, max_coords=settings.max_coords, rng=rng)
    return name, error


def layer_gradchecks(model_id: str, settings: GradcheckSettings, seed: int = 0) -> List[Tuple[str, float]]:
    """Relative errors of the primitives a model is built from"""
    root = RngStream(seed=seed, stream_index=7)
    gen = root.substream(0).generator()
    cases = []
    if model_id == "A":
        cases.append(("conv2d", Conv2DLayer(2, 3, 11, rng=gen, dtype="f64"), (2, 9, 9, 2)))
    elif model_id == "B":
        cases.append(("conv3d", Conv3DLayer(2, 3, (3, 3, 3), rng=gen, dtype="f64"), (2, 4, 6, 6, 2)))
        cases.append(("maxpool3d", MaxPool3DLayer((2, 2, 2)), (2, 4, 6, 6, 2)))
    elif model_id == "C":
        cases.append(("conv2d", Conv2DLayer(2, 3, 3, rng=gen, dtype="f64"), (2, 6, 6, 2)))
        cases.append(("convlstm2d", ConvLSTM2DLayer(2, 3, 3, rng=gen, dtype="f64"), (2, 3, 5, 5, 2)))
    else:
        raise InvalidModelError(f"Unknown model id '{model_id}'")
    cases += [
        ("batchnorm", BatchNormLayer(3, dtype="f64"), (4, 3, 3, 3)),
        ("relu", ReLU(), (2, 5, 5, 3)),
        ("maxpool2d", TimeDistributed(MaxPool2DLayer(2)), (2, 2, 6, 6, 3)),
        ("global_avg_pool", GlobalAvgPool(), (2, 2, 4, 4, 3)),
        ("dense", Dense(5, 1, rng=gen, dtype="f64"), (3, 5)),
    ]
    return [_check_layer(name, layer, shape, settings, root.substream(i + 1))
            for i, (name, layer, shape) in enumerate(cases)]


def model_gradcheck(model_id: str, settings: GradcheckSettings, seed: int = 0) -> Tuple[str, float]:
    """End-to-end check of a whole model in train mode at reduced scale"""
    model = build_model(model_id, RngStream(seed=seed), dtype="f64")
    model.train()
    stream = RngStream(seed=seed, stream_index=8)
    x = Tensor(stream.generator().uniform(0.0, 1.0, (2, 4, 16, 16, 3)), dtype="f64")
    f = _probe_loss(model, x, stream.substream(0).generator())
    error = grad_check(f, [x] + model.parameters(), eps=settings.eps, max_coords=settings.max_coords,
                       rng=stream.substream(1))
    return f"Model-{model_id} end-to-end", error
