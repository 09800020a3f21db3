import math

import pytest
import torch

from motionflow.utils.errors import (GradientCheckError, NonFiniteError,
                                     ShapeError)
from motionflow.utils.modeling import (check_finite, concat, conv2d, cross,
                                       finite_difference_jacobian,
                                       gradient_check, linear, pono,
                                       soft_clamp, split, uncross)


def _loop_conv2d(x, w, b, dilation=1):
    batch, c_in, h, width = x.shape
    c_out, _, k, _ = w.shape
    r = k // 2
    out = torch.zeros(batch, c_out, h, width, dtype=x.dtype)
    for n in range(batch):
        for o in range(c_out):
            for i in range(h):
                for j in range(width):
                    total = b[o].item()
                    for c in range(c_in):
                        for a in range(k):
                            for e in range(k):
                                ii = i + (a - r) * dilation
                                jj = j + (e - r) * dilation
                                if 0 <= ii < h and 0 <= jj < width:
                                    total += w[o, c, a, e].item() * x[n, c, ii,
                                                                      jj].item()
                    out[n, o, i, j] = total
    return out


def test_conv2d_identity_kernel():
    x = torch.randn(1, 1, 4, 5, dtype=torch.float64)
    w = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    w[0, 0, 1, 1] = 1.0
    assert torch.equal(conv2d(x, w, torch.zeros(1, dtype=torch.float64)), x)


def test_conv2d_full_overlap_counts_nine():
    out = conv2d(torch.ones(1, 1, 3, 3), torch.ones(1, 1, 3, 3))
    assert out[0, 0, 1, 1].item() == 9.0
    assert out[0, 0, 0, 0].item() == 4.0


@pytest.mark.parametrize('dilation', [1, 2])
def test_conv2d_matches_nested_loops(generator, dilation):
    x = torch.randn(1, 2, 5, 5, generator=generator, dtype=torch.float64)
    w = torch.randn(3, 2, 3, 3, generator=generator, dtype=torch.float64)
    b = torch.randn(3, generator=generator, dtype=torch.float64)
    expected = _loop_conv2d(x, w, b, dilation)
    assert torch.allclose(conv2d(x, w, b, dilation), expected, atol=1e-6)


def test_conv2d_rejects_even_kernel_and_bad_channels():
    with pytest.raises(ShapeError):
        conv2d(torch.ones(1, 1, 4, 4), torch.ones(1, 1, 2, 2))
    with pytest.raises(ShapeError):
        conv2d(torch.ones(1, 2, 4, 4), torch.ones(1, 1, 3, 3))


def test_conv2d_and_linear_are_linear(generator):
    x = torch.randn(1, 2, 4, 4, generator=generator, dtype=torch.float64)
    y = torch.randn(1, 2, 4, 4, generator=generator, dtype=torch.float64)
    w = torch.randn(3, 2, 3, 3, generator=generator, dtype=torch.float64)
    assert torch.allclose(conv2d(2 * x - 3 * y, w),
                          2 * conv2d(x, w) - 3 * conv2d(y, w),
                          atol=1e-6)
    m = torch.randn(3, 4, generator=generator, dtype=torch.float64)
    a = torch.randn(4, generator=generator, dtype=torch.float64)
    c = torch.randn(4, generator=generator, dtype=torch.float64)
    assert torch.allclose(linear(0.5 * a + c, m),
                          0.5 * linear(a, m) + linear(c, m),
                          atol=1e-6)


def test_linear_examples(generator):
    v = torch.tensor([1.0, -2.0, 3.0])
    assert torch.equal(linear(v, torch.eye(3), torch.zeros(3)), v)
    b = torch.tensor([4.0, 5.0])
    assert torch.equal(linear(v, torch.zeros(2, 3), b), b)

    w = torch.randn(3, 4, generator=generator, dtype=torch.float64)
    bias = torch.randn(3, generator=generator, dtype=torch.float64)
    x = torch.randn(4, generator=generator, dtype=torch.float64)
    expected = torch.tensor([
        sum(w[i, j].item() * x[j].item() for j in range(4)) + bias[i].item()
        for i in range(3)
    ], dtype=torch.float64)
    assert torch.allclose(linear(x, w, bias), expected, atol=1e-6)
    with pytest.raises(ShapeError):
        linear(torch.ones(5), w)


def test_pono_examples(generator):
    x = torch.tensor([1.0, 3.0]).view(1, 2, 1, 1)
    assert torch.allclose(pono(x).flatten(), torch.tensor([-1.0, 1.0]),
                          atol=1e-4)
    assert torch.equal(pono(torch.full((1, 3, 2, 2), 7.0)),
                       torch.zeros(1, 3, 2, 2))

    out = pono(torch.randn(2, 6, 3, 4, generator=generator,
                           dtype=torch.float64))
    assert out.mean(dim=1).abs().max() < 1e-6
    std = out.var(dim=1, unbiased=False).sqrt()
    assert (std - 1).abs().max() < 1e-3


def test_split_concat_cross_uncross_round_trip(generator):
    x = torch.randn(2, 6, 1, 3, generator=generator)
    assert torch.equal(concat(*split(x)), x)
    even, odd = cross(x)
    assert torch.equal(even, x[:, 0::2])
    assert torch.equal(uncross(even, odd), x)
    with pytest.raises(ShapeError):
        split(torch.ones(1, 3, 1, 1))


def test_soft_clamp_bounds():
    values = soft_clamp(torch.tensor([-100.0, 0.0, 100.0]))
    assert values[1].item() == 0.0
    assert values.abs().max() <= 1.9


def test_check_finite_names_tensor():
    check_finite('ok', torch.ones(3))
    with pytest.raises(NonFiniteError, match='weights'):
        check_finite('weights', torch.tensor([1.0, float('nan')]))


def test_gradient_check_square():
    w = torch.tensor([3.0], dtype=torch.float64, requires_grad=True)
    report = gradient_check(lambda: (w**2).sum(), [('w', w)])
    assert report.passed
    assert report.num_checked == 1
    assert report.max_relative_error < 1e-6


def test_gradient_check_linear_layer(generator):
    w = torch.randn(3, 4, generator=generator,
                    dtype=torch.float64).requires_grad_()
    x = torch.randn(4, generator=generator, dtype=torch.float64)
    t = torch.randn(3, generator=generator, dtype=torch.float64)

    def loss():
        return ((linear(x, w) - t)**2).sum()

    loss().backward()
    analytic = 2 * torch.outer(linear(x, w).detach() - t, x)
    assert torch.allclose(w.grad, analytic, atol=1e-6)
    report = gradient_check(loss, [('w', w)], tolerance=1e-6)
    assert report.passed


def test_gradient_check_reports_wrong_gradient():
    w = torch.tensor([2.0], dtype=torch.float64, requires_grad=True)

    class WrongSquare(torch.autograd.Function):
        @staticmethod
        def forward(ctx, v):
            ctx.save_for_backward(v)
            return v**2

        @staticmethod
        def backward(ctx, grad):
            (v, ) = ctx.saved_tensors
            return grad * 3 * v

    report = gradient_check(lambda: WrongSquare.apply(w).sum(), [('w', w)])
    assert not report.passed
    assert report.failures[0].name == 'w'
    with pytest.raises(GradientCheckError, match='w'):
        report.raise_for_failure()


def test_gradient_check_fails_on_nan_gradient():
    w = torch.tensor([0.5, -1.0], dtype=torch.float64, requires_grad=True)

    class NanGradient(torch.autograd.Function):
        @staticmethod
        def forward(ctx, v):
            return v * 1.0

        @staticmethod
        def backward(ctx, grad):
            return torch.full_like(grad, math.nan)

    report = gradient_check(lambda: NanGradient.apply(w).sum(), [('w', w)])
    assert not report.passed
    assert len(report.failures) == 2
    assert report.max_relative_error == math.inf
    with pytest.raises(GradientCheckError):
        report.raise_for_failure()


@pytest.mark.parametrize('shape', [(2, 1, 3, 4), (2, 3, 2, 2)])
def test_pono_gradient_is_finite_at_zero_variance(generator, shape):
    x = torch.randn(*shape, generator=generator, dtype=torch.float64)
    if shape[1] > 1:
        x = x[:, :1].expand(shape).clone()
    x.requires_grad_(True)
    out = pono(x)
    assert torch.equal(out.detach(), torch.zeros(shape, dtype=torch.float64))
    (out * torch.randn(shape, generator=generator,
                       dtype=torch.float64)).sum().backward()
    assert torch.isfinite(x.grad).all()


def test_finite_difference_jacobian_of_linear_map(generator):
    m = torch.randn(3, 3, generator=generator, dtype=torch.float64)
    x = torch.randn(3, generator=generator, dtype=torch.float64)
    jacobian = finite_difference_jacobian(lambda v: m @ v, x)
    assert torch.allclose(jacobian, m, atol=1e-8)
    assert math.isclose(torch.linalg.slogdet(jacobian)[1].item(),
                        torch.linalg.slogdet(m)[1].item(),
                        rel_tol=1e-6)
