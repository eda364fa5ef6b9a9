import math

import pytest
import torch

from src.transmodern.errors import EmptyAxisError, InvalidAxisError, NonFiniteValueError
from src.transmodern.numerics import DTYPE, gelu, grad_check, layer_norm, softmax, tensor


def test_softmax_examples():
    assert torch.allclose(softmax(tensor([0.0, 0.0, 0.0])), tensor([1 / 3, 1 / 3, 1 / 3]), atol=1e-15)
    assert softmax(tensor([1000.0, 1000.0])).tolist() == [0.5, 0.5]

    x = [1.0, 2.0, 3.0]
    total = sum(math.exp(v) for v in x)
    for got, v in zip(softmax(tensor(x)).tolist(), x):
        assert abs(got - math.exp(v) / total) < 1e-12


def test_softmax_rows_sum_to_one():
    generator = torch.Generator().manual_seed(3)
    x = torch.randn(5, 7, generator=generator, dtype=DTYPE) * 50
    for axis in (0, 1, -1):
        sums = softmax(x, axis=axis).sum(dim=axis)
        assert torch.all((sums - 1).abs() < 1e-12)


def test_softmax_invalid_axis():
    with pytest.raises(InvalidAxisError):
        softmax(tensor([[1.0, 2.0]]), axis=2)

    with pytest.raises(InvalidAxisError):
        softmax(tensor([1.0]), axis=-2)


def test_layer_norm_examples():
    ones, zeros = tensor([1.0, 1.0, 1.0]), tensor([0.0, 0.0, 0.0])
    assert layer_norm(tensor([5.0, 5.0, 5.0]), ones, zeros).tolist() == [0.0, 0.0, 0.0]

    out = layer_norm(tensor([1.0, 2.0, 3.0]), ones, zeros)
    assert abs(float(out.mean())) < 1e-12
    assert abs(float((out * out).mean()) - 1.0) < 1e-4


def test_layer_norm_scalar_loop():
    row = [0.3, -1.7, 2.2, 0.0, 5.1]
    gain = [1.5, 0.5, -1.0, 2.0, 1.0]
    bias = [0.1, 0.2, 0.3, 0.4, 0.5]
    eps = 1e-5

    mean = sum(row) / len(row)
    var = sum((v - mean) ** 2 for v in row) / len(row)
    expected = [(v - mean) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gain, bias)]

    got = layer_norm(tensor(row), tensor(gain), tensor(bias), eps).tolist()
    assert max(abs(a - b) for a, b in zip(got, expected)) < 1e-12


def test_layer_norm_empty_axis():
    with pytest.raises(EmptyAxisError):
        layer_norm(torch.zeros(2, 0, dtype=DTYPE), tensor([]), tensor([]))


def test_gelu():
    assert gelu(tensor([0.0])).item() == 0.0
    assert abs(gelu(tensor([10.0])).item() - 10.0) < 1e-6
    assert abs(gelu(tensor([1.0])).item() - 0.5 * (1 + math.erf(1 / math.sqrt(2)))) < 1e-9
    assert abs(gelu(tensor([-10.0])).item()) < 1e-6


def test_grad_check_square():
    x = tensor([3.0], requires_grad=True)

    error = grad_check(lambda: (x * x).sum(), {"x": x})

    assert error < 1e-8
    # the probe leaves the parameter where it was
    assert x.item() == 3.0


def test_grad_check_composite():
    generator = torch.Generator().manual_seed(0)
    w = torch.randn(4, 6, generator=generator, dtype=DTYPE).requires_grad_()
    g = torch.ones(4, dtype=DTYPE, requires_grad=True)
    b = torch.zeros(4, dtype=DTYPE, requires_grad=True)
    x = torch.randn(3, 6, generator=generator, dtype=DTYPE)

    def loss():
        hidden = layer_norm(gelu(x @ w.T), g, b)
        return softmax(hidden).log().sum()

    assert grad_check(loss, {"w": w, "gain": g, "bias": b}, samples=30) < 1e-4


def test_grad_check_detects_wrong_gradient():
    x = tensor([2.0], requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, value):
            return value * value

        @staticmethod
        def backward(ctx, grad):
            return grad * 0.0

    assert grad_check(lambda: Wrong.apply(x).sum(), {"x": x}) > 0.5


def test_grad_check_non_finite():
    x = tensor([1.0], requires_grad=True)

    with pytest.raises(NonFiniteValueError) as e:
        grad_check(lambda: (x / 0.0).sum(), {"x": x})

    assert "x" in str(e.value)
