"""Pure-numpy reference implementations of the hot kernels.

These are the fallback when the compiled extension is unavailable and the
oracle the compiled versions are tested against.
"""

import numpy as np

KURT_VAR_FLOOR = 1e-12
KURT_STD_GUARD = 1e-8


def sgd_momentum_update(w, g, v, lr, momentum, weight_decay):
    v[...] = momentum * v + g + weight_decay * w
    w -= lr * v


def column_kurtosis(x):
    """Excess kurtosis of every column plus a mask of non-degenerate columns."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    c = x - x.sum(axis=0) / n
    m2 = (c * c).sum(axis=0) / n
    valid = m2 >= KURT_VAR_FLOOR
    std = np.maximum(np.sqrt(m2), KURT_STD_GUARD)
    z = c / std
    z2 = z * z
    e2 = z2.sum(axis=0) / n
    e4 = (z2 * z2).sum(axis=0) / n
    kurt = np.where(valid, e4 - 3.0 * e2 * e2, 0.0)
    return kurt, valid


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def probe_train(x, y, w1, b1, w2, b2, epochs, lr):
    """Full-batch gradient descent on a one-hidden-layer tanh classifier, in place."""
    n = x.shape[0]
    onehot = np.zeros((n, w2.shape[1]))
    onehot[np.arange(n), y] = 1.0
    for _ in range(int(epochs)):
        z = np.tanh(x @ w1 + b1)
        p = _softmax(z @ w2 + b2)
        dl = (p - onehot) / n
        gw2 = z.T @ dl
        gb2 = dl.sum(axis=0)
        da = (dl @ w2.T) * (1.0 - z * z)
        gw1 = x.T @ da
        gb1 = da.sum(axis=0)
        w2 -= lr * gw2
        b2 -= lr * gb2
        w1 -= lr * gw1
        b1 -= lr * gb1


def probe_predict(x, w1, b1, w2, b2):
    z = np.tanh(x @ w1 + b1)
    return np.argmax(z @ w2 + b2, axis=1)
