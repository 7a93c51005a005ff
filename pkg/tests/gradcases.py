"""Finite-difference cases shared by the tensor tests and the acceptance run.

Every differentiable op gets five random shapes.  Non-scalar outputs are
reduced with a fixed random weighting so every output element matters.
"""
import numpy as np

from clsum import tensor as T

H = 1e-5
TOL = 1e-4


def _param(rng, shape, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(out, rng):
    return T.weighted_sum(out, rng.standard_normal(out.shape))


def _case_add(rng, i):
    shapes = [((3,), (3,)), ((2, 4), (4,)), ((2, 3, 4), (1, 3, 1)), ((5, 1), (1, 6)), ((1,), (2, 2))][i]
    a, b = _param(rng, shapes[0]), _param(rng, shapes[1])
    w = rng.standard_normal(np.broadcast_shapes(*shapes))
    return (lambda: T.weighted_sum(T.add(a, b), w)), [a, b]


def _case_mul(rng, i):
    shapes = [((3,), (3,)), ((2, 4), (4,)), ((2, 3, 4), (1, 3, 1)), ((5, 1), (1, 6)), ((4, 2), (4, 2))][i]
    a, b = _param(rng, shapes[0]), _param(rng, shapes[1])
    w = rng.standard_normal(np.broadcast_shapes(*shapes))
    return (lambda: T.weighted_sum(T.mul(a, b), w)), [a, b]


def _case_matmul(rng, i):
    sa, sb = [((3, 4), (4, 2)), ((1, 5), (5, 1)), ((2, 3, 4), (4, 5)), ((6, 2), (2, 3)), ((2, 2, 3), (2, 3, 2))][i]
    a, b = _param(rng, sa), _param(rng, sb)
    out_shape = np.matmul(a.data, b.data).shape
    w = rng.standard_normal(out_shape)
    return (lambda: T.weighted_sum(T.matmul(a, b), w)), [a, b]


def _case_linear(rng, i):
    sx, din, dout = [((3, 4), 4, 2), ((2, 3, 5), 5, 3), ((1, 2), 2, 1), ((4, 1, 3), 3, 4), ((2, 2, 2, 2), 2, 3)][i]
    x, w, b = _param(rng, sx), _param(rng, (din, dout)), _param(rng, (dout,))
    wt = rng.standard_normal(sx[:-1] + (dout,))
    return (lambda: T.weighted_sum(T.linear(x, w, b), wt)), [x, w, b]


def _case_relu(rng, i):
    shape = [(5,), (2, 3), (3, 4), (2, 2, 3), (7, 1)][i]
    # keep inputs away from the kink at zero
    data = rng.standard_normal(shape)
    data = np.where(np.abs(data) < 0.1, 0.5, data)
    x = T.Tensor(data, requires_grad=True)
    w = rng.standard_normal(shape)
    return (lambda: T.weighted_sum(T.relu(x), w)), [x]


def _case_reshape_transpose(rng, i):
    shape, new, axes = [((2, 3), (3, 2), None), ((2, 3, 4), (6, 4), (1, 0)), ((4,), (2, 2), None),
                        ((2, 2, 3), (3, 4), None), ((6,), (1, 6), (1, 0))][i]
    x = _param(rng, shape)
    out_shape = np.transpose(np.zeros(new), axes).shape
    w = rng.standard_normal(out_shape)
    return (lambda: T.weighted_sum(T.transpose(T.reshape(x, new), axes), w)), [x]


def _case_sum_mean(rng, i):
    shape = [(3,), (2, 3), (1, 4), (2, 2, 2), (5, 1)][i]
    x = _param(rng, shape)
    return (lambda: T.add(T.mul(T.tsum(x), 0.7), T.mul(T.mean(x), -1.3))), [x]


def _case_embedding(rng, i):
    vocab, dim, ids = [(5, 3, [0, 2, 2]), (4, 2, [[1, 3], [3, 0]]), (6, 4, [5]), (3, 3, [[0, 0, 0]]),
                       (7, 2, [[1, 2], [6, 1], [0, 4]])][i]
    weight = _param(rng, (vocab, dim))
    ids = np.asarray(ids)
    w = rng.standard_normal(ids.shape + (dim,))
    return (lambda: T.weighted_sum(T.embedding(weight, ids, scale=1.5), w)), [weight]


def _case_softmax(rng, i):
    shape, axis = [((2, 5), -1), ((3,), 0), ((2, 3, 4), 1), ((4, 2), 0), ((1, 6), -1)][i]
    x = _param(rng, shape)
    w = rng.standard_normal(shape)
    return (lambda: T.weighted_sum(T.softmax(x, axis), w)), [x]


def _case_log_softmax(rng, i):
    shape, axis = [((2, 5), -1), ((3,), 0), ((2, 3, 4), 1), ((4, 2), 0), ((1, 6), -1)][i]
    x = _param(rng, shape)
    w = rng.standard_normal(shape)
    return (lambda: T.weighted_sum(T.log_softmax(x, axis), w)), [x]


def _case_layer_norm(rng, i):
    shape = [(2, 5), (3, 4), (1, 6), (2, 3, 4), (4, 2)][i]
    x, g, b = _param(rng, shape), _param(rng, shape[-1:]), _param(rng, shape[-1:])
    w = rng.standard_normal(shape)
    return (lambda: T.weighted_sum(T.layer_norm(x, g, b), w)), [x, g, b]


def _case_cross_entropy(rng, i):
    shape, reduction = [((4, 6), "mean"), ((2, 3, 5), "sum"), ((1, 3), "mean"), ((3, 4), "none"),
                        ((2, 2, 7), "mean")][i]
    logits = _param(rng, shape)
    targets = rng.integers(0, shape[-1], size=shape[:-1])
    mask = rng.random(shape[:-1]) > 0.3
    mask.reshape(-1)[0] = True
    if reduction == "none":
        w = rng.standard_normal(shape[:-1])
        return (lambda: T.weighted_sum(T.cross_entropy(logits, targets, mask, "none"), w)), [logits]
    return (lambda: T.cross_entropy(logits, targets, mask, reduction)), [logits]


def _case_attention(rng, i):
    B, Tq, Tk, d, heads, masked = [(1, 3, 3, 4, 2, True), (2, 2, 4, 6, 3, False), (1, 1, 5, 4, 1, False),
                                   (2, 3, 2, 8, 4, True), (1, 4, 4, 6, 2, True)][i]
    q, k, v = _param(rng, (B, Tq, d)), _param(rng, (B, Tk, d)), _param(rng, (B, Tk, d))
    mask = None
    if masked:
        mask = rng.random((B, 1, Tq, Tk)) > 0.3
        mask[..., 0] = True
    w = rng.standard_normal((B, Tq, d))
    return (lambda: T.weighted_sum(T.attention(q, k, v, heads, mask), w)), [q, k, v]


def _case_dropout(rng, i):
    shape = [(4,), (2, 3), (3, 3), (2, 2, 2), (6, 1)][i]
    x = _param(rng, shape)
    w = rng.standard_normal(shape)
    seed = 100 + i
    # a fresh generator per call keeps the mask fixed across finite-difference evaluations
    return (lambda: T.weighted_sum(T.dropout(x, 0.3, np.random.default_rng(seed), True), w)), [x]


CASES = {
    "add": _case_add,
    "mul": _case_mul,
    "matmul": _case_matmul,
    "linear": _case_linear,
    "relu": _case_relu,
    "reshape/transpose": _case_reshape_transpose,
    "sum/mean": _case_sum_mean,
    "embedding": _case_embedding,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "layer_norm": _case_layer_norm,
    "cross_entropy": _case_cross_entropy,
    "attention": _case_attention,
    "dropout": _case_dropout,
}
N_SHAPES = 5


def run_case(name, i, seed=0):
    rng = np.random.default_rng([seed, i, sum(map(ord, name))])
    fn, params = CASES[name](rng, i)
    return T.gradcheck(fn, params, h=H)


def run_all(seed=0):
    """Map (op, shape index) to the worst relative error."""
    return {(name, i): run_case(name, i, seed) for name in CASES for i in range(N_SHAPES)}
