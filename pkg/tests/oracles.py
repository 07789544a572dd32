"""Independent brute-force oracles used by the test suite.

Everything here is deliberately written with explicit loops and no shared
code with the package under test, so a bug in the fast implementation
cannot hide in its own oracle.
"""

import numpy as np


def naive_dft_magnitude(row):
    """O(N^2) complex-sum DFT magnitude of one real sequence."""
    row = np.asarray(row, dtype=np.float64)
    n = row.shape[0]
    out = np.empty(n, dtype=np.float64)
    for m in range(n):
        acc = 0.0 + 0.0j
        for k in range(n):
            acc += row[k] * np.exp(-2j * np.pi * m * k / n)
        out[m] = abs(acc)
    return out


def leaky_relu_ref(x, slope=0.2):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def brute_force_gat(h, adj, w, a, slope=0.2, activation=None):
    """Single-head GAT with explicit per-node loops.

    h:   [N, d] node features
    adj: [N, N] boolean adjacency (row i lists the neighborhood of node i)
    w:   [d, d_out] projection
    a:   [2*d_out] attention vector (first half scores the center node, the
         second half scores the neighbor)
    Returns (h_out [N, d_out], att [N, N]) with att[i, j] = 0 for non-edges.
    """
    h = np.asarray(h, dtype=np.float64)
    adj = np.asarray(adj, dtype=bool)
    n = h.shape[0]
    d_out = w.shape[1]
    z = np.empty((n, d_out))
    for i in range(n):
        z[i] = h[i] @ w
    att = np.zeros((n, n))
    h_out = np.zeros((n, d_out))
    for i in range(n):
        neighbors = [j for j in range(n) if adj[i, j]]
        scores = []
        for j in neighbors:
            zij = np.concatenate([z[i], z[j]])
            e = float(a @ zij)
            e = e if e >= 0 else slope * e
            scores.append(e)
        scores = np.array(scores)
        ex = np.exp(scores - scores.max())
        alpha = ex / ex.sum()
        agg = np.zeros(d_out)
        for alpha_j, j in zip(alpha, neighbors):
            att[i, j] = alpha_j
            agg += alpha_j * z[j]
        h_out[i] = agg if activation is None else activation(agg)
    return h_out, att


def scalar_lstm_unroll(x_seq, w_o, w_i, w_u, w_c, b_o, b_i, b_u, b_c):
    """Step-by-step LSTM over one univariate-or-multivariate sequence.

    x_seq: [T, d_in] for a single node. Gate order and concatenation
    [h_prev; x_t] match the unit's published algebra. Returns final h [H].
    """

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    hidden = b_o.shape[0]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in range(x_seq.shape[0]):
        hx = np.concatenate([h, np.atleast_1d(x_seq[t])])
        o = sig(hx @ w_o + b_o)
        i = sig(hx @ w_i + b_i)
        u = sig(hx @ w_u + b_u)
        c_tilde = np.tanh(hx @ w_c + b_c)
        c = u * c + i * c_tilde
        h = o * np.tanh(c)
    return h


def central_difference(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at array x (perturbs a copy)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = f(x)
        flat[k] = orig - eps
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * eps)
    return g


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
