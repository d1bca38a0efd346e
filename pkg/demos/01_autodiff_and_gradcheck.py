"""Build a few computation graphs by hand and verify their gradients.

Everything in the library differentiates through the same reverse-mode
tape, so this walks up from a scalar expression to a conv/batch-norm
block, printing the analytic gradient next to a central-difference
estimate each time.
"""

import argparse

import numpy as np

from capsforensics import Tensor, check_gradients
from capsforensics.gradcheck import finite_difference_gradient
from capsforensics.ops import batch_norm, conv2d, relu


def scalar_expression(rng):
    a = Tensor(rng.normal(size=(3,)), requires_grad=True, name="a")
    b = Tensor(rng.uniform(0.5, 1.5, size=(3,)), requires_grad=True, name="b")
    loss = ((a * b).exp().sum() / 3.0 + (a ** 2 / b).sum()).log()
    loss.backward()
    print("expression: log(mean(exp(a*b)) + sum(a^2/b))")
    print("  value       %.6f" % loss.item())
    print("  dloss/da    %s" % np.array2string(a.grad, precision=6))

    def f():
        return ((a * b).exp().sum() / 3.0 + (a ** 2 / b).sum()).log()

    fd = finite_difference_gradient(lambda: f().item(), a)
    print("  central FD  %s" % np.array2string(fd, precision=6))
    print("  max |diff|  %.2e" % np.abs(a.grad - fd).max())


def matmul_chain(rng):
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True, name="x")
    w1 = Tensor(rng.normal(size=(5, 6)) * 0.4, requires_grad=True, name="w1")
    w2 = Tensor(rng.normal(size=(6, 2)) * 0.4, requires_grad=True, name="w2")

    def f():
        hidden = relu(x @ w1 + 1.0)
        return ((hidden @ w2) ** 2).mean()

    errors = check_gradients(f, [x, w1, w2])
    print("\ntwo-layer relu chain, relative errors vs finite differences:")
    for name, err in errors.items():
        print("  %-3s %.2e" % (name, err))


def conv_block(rng):
    x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True, name="x")
    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.2, requires_grad=True,
               name="w")
    bias = Tensor(np.zeros(4), requires_grad=True, name="bias")
    gamma = Tensor(np.ones(4), requires_grad=True, name="gamma")
    beta = Tensor(np.zeros(4), requires_grad=True, name="beta")
    running_mean = np.zeros(4)
    running_var = np.ones(4)

    def f():
        y = conv2d(x, w, bias, stride=1, padding=1)
        y = batch_norm(y, gamma, beta, running_mean, running_var, "train")
        return (y ** 2).sum()

    errors = check_gradients(f, [x, w, bias, gamma, beta])
    print("\nconv -> batch norm block (train mode):")
    for name, err in errors.items():
        print("  %-6s %.2e" % (name, err))
    print("  note: the conv bias error reads 0.0 because batch norm")
    print("  subtracts the per-channel mean, so its true gradient is 0")
    print("  and finite differences only see rounding noise there.")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    scalar_expression(rng)
    matmul_chain(rng)
    conv_block(rng)


if __name__ == "__main__":
    main()
