"""Watch dynamic routing concentrate on capsules that agree.

Sets up three input capsules whose votes for class 0 mostly point the
same way while their votes for class 1 scatter, then prints the
coupling coefficients after each routing iteration: mass shifts toward
the class receiving consistent votes, and the squashed output norms
(read as probabilities after averaging) follow.
"""

import argparse

import numpy as np

from capsforensics import (
    RngStream,
    RoutingConfig,
    Tensor,
    dynamic_routing,
    predict,
    squash,
    statistical_pool,
)


def squash_scaling():
    print("squash keeps direction and maps norm r to r^2/(1+r^2):")
    for r in (0.1, 0.5, 1.0, 3.0, 10.0):
        vec = np.zeros(4)
        vec[0] = r
        out = squash(Tensor(vec)).data
        print("  |u| = %5.2f  ->  |v| = %.4f" % (r, np.linalg.norm(out)))


def pooling_example(rng):
    feats = rng.normal(loc=2.0, scale=0.5, size=(3, 4, 4))
    pooled = statistical_pool(Tensor(feats)).data
    print("\nstatistical pooling of a [3,4,4] map -> [2,3]:")
    print("  channel means     %s" % np.array2string(pooled[0], precision=4))
    print("  channel variances %s" % np.array2string(pooled[1], precision=4))
    print("  numpy check       %s / %s"
          % (np.array2string(feats.mean(axis=(1, 2)), precision=4),
             np.array2string(feats.var(axis=(1, 2), ddof=1), precision=4)))


def routing_demo(rng, iterations):
    # Three capsules, two classes. Class-0 votes share a direction;
    # class-1 votes are drawn independently, so they disagree.
    agreed = np.array([2.0, 1.0, 0.0, -1.0])
    w = np.zeros((3, 2, 4, 4))
    u = np.zeros((3, 4))
    for i in range(3):
        u[i] = rng.normal(size=4)
        basis = np.linalg.svd(rng.normal(size=(4, 4)))[0]
        # Solve for a matrix that sends this capsule's pose to the
        # shared direction (plus a nudge) for class 0.
        target = agreed + rng.normal(size=4) * 0.05
        w[i, 0] = np.outer(target, u[i]) / (u[i] @ u[i])
        w[i, 1] = basis * 1.5

    out = dynamic_routing(
        Tensor(u), Tensor(w),
        RoutingConfig(iterations=iterations, mode="infer"))

    print("\ncoupling coefficients (rows: input capsule, cols: class):")
    for it, c in enumerate(out.couplings):
        print("  iteration %d" % it)
        for i in range(3):
            print("    capsule %d: %s"
                  % (i, np.array2string(c[i], precision=4)))
    norms = np.linalg.norm(out.vectors.data, axis=-1)
    print("  output norms per class: %s"
          % np.array2string(norms, precision=4))
    probs = predict(out)
    print("  predicted probabilities: %s"
          % np.array2string(probs.data, precision=4))


def train_mode_noise(rng):
    u = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 2, 4, 4)) * 0.4)
    cfg = RoutingConfig(mode="train")
    a = dynamic_routing(u, w, cfg, RngStream(1)).vectors.data
    b = dynamic_routing(u, w, cfg, RngStream(2)).vectors.data
    c = dynamic_routing(u, w, cfg, RngStream(1)).vectors.data
    print("\ntrain-mode regularization (vote noise + vote dropout):")
    print("  seed 1 vs seed 2, max |diff| %.4f" % np.abs(a - b).max())
    print("  seed 1 vs seed 1, max |diff| %.4f" % np.abs(a - c).max())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--iterations", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    squash_scaling()
    pooling_example(rng)
    routing_demo(rng, args.iterations)
    train_mode_noise(rng)


if __name__ == "__main__":
    main()
