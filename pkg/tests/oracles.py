"""Slow reference implementations shared by unit and acceptance tests."""

import math

import numpy as np

from mulch import gp as gpm
from mulch.gp import KernelParams
from mulch.priors import full_domain_uniform, sample_prior
from mulch.space import CONTINUOUS, Parameter, SearchSpace, encode_unchecked


def minmax(ys):
    lo, hi = min(ys), max(ys)
    return [1.0] * len(ys) if hi == lo else [(v - lo) / (hi - lo) for v in ys]


def top_decile(ys):
    k = -(-len(ys) // 10)
    # selection by repeated argmax, lower index wins on ties
    left = list(range(len(ys)))
    chosen = []
    for _ in range(k):
        best = left[0]
        for i in left:
            if ys[i] > ys[best]:
                best = i
        chosen.append(best)
        left.remove(best)
    return chosen


def pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    return sab / math.sqrt(saa * sbb)


def precision(y0, y1):
    z = minmax(y1)
    idx = top_decile(y0)
    return sum(z[i] for i in idx) / len(idx)


def recall(y0, y1):
    return precision(y1, y0)


# -- gaussian process ------------------------------------------------------

def dense_matern(A, B, ls, sf):
    # elementwise loops, no shared helpers with the library
    K = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            r = math.sqrt(sum(((a[k] - b[k]) / ls[k]) ** 2 for k in range(len(ls))))
            K[i, j] = sf * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)
    return K


def dense_oracle(X, y, kern, Xs):
    mu_y = y.mean()
    sd = y.std() if len(y) > 1 and y.std() > 1e-12 else 1.0
    ys = (y - mu_y) / sd
    K = dense_matern(X, X, kern.lengthscales, kern.signal_variance) + kern.noise_variance * np.eye(len(X))
    Ks = dense_matern(Xs, X, kern.lengthscales, kern.signal_variance)
    sol = np.linalg.solve(K, ys)
    mean = mu_y + sd * Ks @ sol
    var = sd**2 * (kern.signal_variance - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T)))
    _, logdet = np.linalg.slogdet(K)
    lml = -0.5 * ys @ sol - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)
    return mean, var, lml


def random_instance(rng, n_max=50, d_max=5):
    n, d = int(rng.integers(2, n_max + 1)), int(rng.integers(1, d_max + 1))
    X = rng.random((n, d))
    y = np.sin(3 * X).sum(1) + 0.1 * rng.normal(size=n)
    kern = KernelParams(tuple(np.exp(rng.uniform(-1.5, 1.0, d))), float(np.exp(rng.uniform(-1, 1))),
                        float(np.exp(rng.uniform(-7, -2.5))))
    return X, y, kern, rng.random((7, d))


# -- suggestion service ----------------------------------------------------

LINE = SearchSpace((Parameter("x", CONTINUOUS, -2.0, 2.0),))


def quad(config):
    return -(config["x"] - 0.7) ** 2


def oracle_session(space, seed, cycles, n_candidates, n_starts):
    """Sequential BO with the service's seeding: first prior draw, then refit and top-4 EI each step."""
    priors = full_domain_uniform(space)
    config = sample_prior(priors, 8, seed, space=space)[0]
    configs, ys, trace = [], [], []
    for n in range(cycles):
        trace.append(config.as_dict())
        configs.append(config)
        ys.append(quad(config))
        fit_seed = seed * 100_003 + len(ys)
        model = gpm.fit_configs(space, configs, ys, None, n_starts, fit_seed)
        fresh = gpm.propose(model, space, max(ys), n_candidates, fit_seed, "uniform", k=4)
        ei = [gpm.expected_improvement(model, encode_unchecked(space, c), max(ys)) for c, _ in fresh]
        config = fresh[int(np.argmax(ei))][0]
    return trace
