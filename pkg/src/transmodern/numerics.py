"""
Dense float64 tensor primitives on top of torch's autograd tape.

All modelling code builds on these functions so that normalization, activation and gradient checking behave
the same everywhere.
"""

import logging
import math
import typing

import torch

from .errors import EmptyAxisError, InvalidAxisError, NonFiniteValueError
from .helpers import derive_seed

logger = logging.getLogger(__name__)

DTYPE = torch.float64

_SQRT_2 = math.sqrt(2.0)


def tensor(values: typing.Any, requires_grad: bool = False) -> torch.Tensor:
    """
    Build a float64 tensor from nested sequences or arrays.
    """
    return torch.tensor(values, dtype=DTYPE, requires_grad=requires_grad)


def _check_axis(x: torch.Tensor, axis: int) -> int:
    if not -x.dim() <= axis < x.dim():
        raise InvalidAxisError(axis, x.dim())
    return axis % x.dim()


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """
    Max-subtracted softmax along `axis`.

    Slices that are entirely -inf are not supported; attention masks always keep the diagonal.
    """
    axis = _check_axis(x, axis)
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    exp = torch.exp(shifted)
    return exp / exp.sum(dim=axis, keepdim=True)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """
    Normalize the last axis to zero mean and unit (biased) variance, then scale and shift.
    """
    if x.dim() == 0 or x.shape[-1] == 0:
        raise EmptyAxisError("layer_norm")
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * gain + bias


def gelu(x: torch.Tensor) -> torch.Tensor:
    """
    Exact (erf-based) Gaussian error linear unit.
    """
    return 0.5 * x * (1.0 + torch.erf(x / _SQRT_2))


def _sample_coordinates(params: dict[str, torch.Tensor], samples: int, seed: int) -> list[tuple[str, int]]:
    """
    Spread `samples` probes over every parameter; each parameter gets at least one.
    """
    names = [name for name, p in params.items() if p.numel() > 0]
    per_param = max(1, math.ceil(samples / max(len(names), 1)))
    coordinates = []
    for name in names:
        numel = params[name].numel()
        generator = torch.Generator().manual_seed(derive_seed(seed, "grad_check", name))
        count = min(per_param, numel)
        picks = torch.randperm(numel, generator=generator)[:count]
        coordinates.extend((name, int(i)) for i in picks)
    return coordinates


def grad_check(
    f: typing.Callable[[], torch.Tensor],
    params: typing.Mapping[str, torch.Tensor],
    *,
    h: float = 1e-5,
    samples: int = 200,
    seed: int = 0,
) -> float:
    """
    Compare reverse-mode gradients against central differences.

    Args:
        f: closure recomputing a scalar from the current values of `params`
        params: named leaf tensors (requires_grad=True) that `f` depends on
        h: central-difference step
        samples: total number of probed coordinates, spread over all parameters
        seed: picks which coordinates are probed

    Returns:
        max over probed coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    named = dict(params)
    value = f()
    if not torch.isfinite(value).all():
        raise NonFiniteValueError(next(iter(named), "<none>"), "value")
    grads = torch.autograd.grad(value, list(named.values()), allow_unused=True)
    analytic = {
        name: (g if g is not None else torch.zeros_like(p)).reshape(-1)
        for (name, p), g in zip(named.items(), grads, strict=True)
    }

    worst = 0.0
    worst_by_param: dict[str, float] = {}
    with torch.no_grad():
        for name, index in _sample_coordinates(named, samples, seed):
            flat = named[name].view(-1)
            original = flat[index].item()
            flat[index] = original + h
            plus = f().item()
            flat[index] = original - h
            minus = f().item()
            flat[index] = original

            numeric = (plus - minus) / (2.0 * h)
            exact = analytic[name][index].item()
            if not (math.isfinite(numeric) and math.isfinite(exact)):
                raise NonFiniteValueError(name, "gradient")
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst_by_param[name] = max(worst_by_param.get(name, 0.0), error)
            worst = max(worst, error)

    logger.debug("grad_check worst relative error per parameter: %s", worst_by_param)
    return worst
