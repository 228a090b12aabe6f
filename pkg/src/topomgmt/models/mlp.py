"""Fully connected softmax classifier trained full-batch with L-BFGS."""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def layer_sizes(n_in: int, hidden, n_out: int) -> list[int]:
    return [n_in, *hidden, n_out]


def n_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def unpack(theta: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = theta[pos:pos + a * b].reshape(a, b)
        pos += a * b
        out.append((W, theta[pos:pos + b]))
        pos += b
    return out


def pack(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def init_params(sizes, rng: np.random.Generator) -> np.ndarray:
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        layers.append((rng.uniform(-bound, bound, (a, b)), rng.uniform(-bound, bound, b)))
    return pack(layers)


def _act(z, activation):
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {activation!r}")


def _act_grad(a, activation):
    # derivative expressed through the activation output
    if activation == "tanh":
        return 1.0 - a * a
    return (a > 0).astype(float)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(layers, X, activation="tanh"):
    acts = [X]
    a = X
    for W, b in layers[:-1]:
        a = _act(a @ W + b, activation)
        acts.append(a)
    W, b = layers[-1]
    return acts, a @ W + b


def loss_and_grad(theta, X, Y, sizes, l2=0.0, activation="tanh"):
    """Mean cross-entropy plus ``l2 / (2n) * sum(W**2)`` and its gradient."""
    n = X.shape[0]
    layers = unpack(theta, sizes)
    acts, logits = forward(layers, X, activation)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -(Y * logp).sum() / n
    loss += 0.5 * l2 / n * sum((W * W).sum() for W, _ in layers)

    grads = []
    delta = (np.exp(logp) - Y) / n
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_prev = acts[i]
        grads.append((a_prev.T @ delta + (l2 / n) * W, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * _act_grad(a_prev, activation)
    return loss, pack(grads[::-1])


def fit(X, y_idx, n_classes, hidden, l2, max_iter, tol, activation, rng):
    """Return (flat parameters, loss history)."""
    sizes = layer_sizes(X.shape[1], hidden, n_classes)
    Y = np.eye(n_classes)[y_idx]
    theta0 = init_params(sizes, rng)
    history = []

    def fun(theta):
        loss, grad = loss_and_grad(theta, X, Y, sizes, l2, activation)
        history.append(float(loss))
        return loss, grad

    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-10, "maxfun": 20 * max_iter})
    return res.x, sizes, history


def predict_proba(layers, X, activation="tanh"):
    _, logits = forward(layers, X, activation)
    return softmax(logits)
