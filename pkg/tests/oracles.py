"""Independent reference implementations used only by the tests.

Nothing here imports the code under test's internals: explicit matrices
instead of stride-based gate application, Python loops instead of einsum,
schoolbook polynomial products instead of Kronecker substitution.
"""

import math
import random

import numpy as np

I2 = np.eye(2, dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(phi):
    return np.diag([np.exp(-1j * phi / 2), np.exp(1j * phi / 2)])


def on_qubit(gate, q, n):
    """Embed a 2x2 gate on qubit ``q`` (qubit 0 = most significant) via Kronecker products."""
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, gate if k == q else I2)
    return out


def cnot_matrix(c, t, n):
    dim = 1 << n
    U = np.zeros((dim, dim), dtype=complex)
    for j in range(dim):
        bits = [(j >> (n - 1 - k)) & 1 for k in range(n)]
        if bits[c]:
            bits[t] ^= 1
        i = sum(b << (n - 1 - k) for k, b in enumerate(bits))
        U[i, j] = 1
    return U


def explicit_unitary(angles, schedule, n):
    U = np.eye(1 << n, dtype=complex)
    for l in range(angles.shape[0]):
        for q in range(n):
            U = on_qubit(rz(angles[l, q, 0]), q, n) @ U
            U = on_qubit(ry(angles[l, q, 1]), q, n) @ U
            U = on_qubit(rz(angles[l, q, 2]), q, n) @ U
        for c, t in schedule[l]:
            U = cnot_matrix(c, t, n) @ U
    return U


def z_expectations_dense(psi, n):
    return np.array([np.real(np.conj(psi) @ on_qubit(Z, i, n) @ psi) for i in range(n)])


def conv2d_loops(x, k, b, stride=1, padding=0):
    C, H, W = x.shape
    O, _, kh, kw = k.shape
    xp = np.zeros((C, H + 2 * padding, W + 2 * padding))
    xp[:, padding : padding + H, padding : padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                s = b[o]
                for c in range(C):
                    for m in range(kh):
                        for nn_ in range(kw):
                            s += xp[c, i * stride + m, j * stride + nn_] * k[o, c, m, nn_]
                out[o, i, j] = s
    return out


def negacyclic_schoolbook(a, b, q):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k < n:
                out[k] += a[i] * b[j]
            else:
                out[k - n] -= a[i] * b[j]
    return [x % q for x in out]


def reference_dirichlet_partition(labels, n_clients, alpha, seed):
    """Dirichlet allocation via normalized Gamma draws from Python's ``random``."""
    r = random.Random(seed)
    labels = list(labels)
    shards = [[] for _ in range(n_clients)]
    for c in sorted(set(labels)):
        idx = [i for i, y in enumerate(labels) if y == c]
        r.shuffle(idx)
        g = [r.gammavariate(alpha, 1.0) for _ in range(n_clients)]
        tot = sum(g)
        if tot == 0:
            g = [1.0] + [0.0] * (n_clients - 1)
            tot = 1.0
        start = 0
        acc = 0.0
        for k in range(n_clients):
            acc += g[k] / tot
            end = len(idx) if k == n_clients - 1 else int(acc * len(idx))
            shards[k].extend(idx[start:end])
            start = end
    return shards


def entropy_of(labels, n_classes):
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    if counts.sum() == 0:
        return 0.0
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def mean_client_entropy(shards, labels, n_classes):
    labels = np.asarray(labels)
    ents = [entropy_of(labels[s], n_classes) for s in shards if len(s)]
    return float(np.mean(ents))


def plaintext_weighted_sum(vectors, weights):
    out = np.zeros_like(np.asarray(vectors[0], dtype=float))
    for v, w in zip(vectors, weights):
        out = out + w * np.asarray(v, dtype=float)
    return out


def confusion_accuracy(pred, labels, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for p, y in zip(pred, labels):
        cm[y, p] += 1
    return np.trace(cm) / cm.sum()
