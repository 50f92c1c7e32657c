"""Independent reference implementations, written with plain loops.

None of these import the code under test; they exist to be compared against it.
"""

import math

import numpy as np


def bilinear_pixel(plane, i, j, h_out, w_out):
    h_in, w_in = len(plane), len(plane[0])
    sy = (i + 0.5) * h_in / h_out - 0.5
    sx = (j + 0.5) * w_in / w_out - 0.5
    sy = min(max(sy, 0.0), h_in - 1)
    sx = min(max(sx, 0.0), w_in - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, h_in - 1), min(x0 + 1, w_in - 1)
    dy, dx = sy - y0, sx - x0
    return ((1 - dy) * ((1 - dx) * plane[y0][x0] + dx * plane[y0][x1])
            + dy * ((1 - dx) * plane[y1][x0] + dx * plane[y1][x1]))


def bilinear(plane, h_out, w_out):
    plane = np.asarray(plane, dtype=np.float64).tolist()
    return np.array([[bilinear_pixel(plane, i, j, h_out, w_out) for j in range(w_out)] for i in range(h_out)])


def mfb_tensor_form(x, y, w3, q3):
    """Tensor form read literally: z_i = x^T W_i y with W_i = sum_j U_ij V_ij^T.

    w3: (d, k, o), q3: (e, k, o); output (o,) = sum over the k factors of
    (U_j^T x) * (V_j^T y), looping over every index.
    """
    d, k, o = w3.shape
    e = q3.shape[0]
    out = np.zeros(o)
    for i in range(o):
        acc = 0.0
        for j in range(k):
            ux = sum(w3[a, j, i] * x[a] for a in range(d))
            vy = sum(q3[b, j, i] * y[b] for b in range(e))
            acc += ux * vy
        out[i] = acc
    return out


def attention_loops(m, w_q, w_k, w_v, head_q, head_k, head_v, w_o):
    """Loop-written multi-head attention over T tokens, then mean over tokens."""
    m = np.asarray(m, dtype=np.float64)
    t_count = m.shape[0]
    h = head_q.shape[0]
    p_k = head_k.shape[1]

    def proj(mat, vec):
        return np.array([sum(mat[r, c] * vec[c] for c in range(len(vec))) for r in range(mat.shape[0])])

    q = [proj(w_q, m[t]) for t in range(t_count)]
    k = [proj(w_k, m[t]) for t in range(t_count)]
    v = [proj(w_v, m[t]) for t in range(t_count)]
    outs = []
    weights = np.zeros((h, t_count, t_count))
    for t in range(t_count):
        concat = []
        for head in range(h):
            qh = proj(head_q[head], q[t])
            scores = []
            for s in range(t_count):
                kh = proj(head_k[head], k[s])
                scores.append(sum(a * b for a, b in zip(qh, kh)) / math.sqrt(p_k))
            mx = max(scores)
            ex = [math.exp(sc - mx) for sc in scores]
            tot = sum(ex)
            wts = [e / tot for e in ex]
            weights[head, t] = wts
            acc = np.zeros(head_v.shape[1])
            for s in range(t_count):
                acc += wts[s] * proj(head_v[head], v[s])
            concat.extend(acc.tolist())
        outs.append(proj(w_o, np.array(concat)))
    return np.mean(outs, axis=0), weights


def dense_gcn(n, edges, feats, weights):
    """H <- relu(A_hat H W) with a dense A_hat, then the mean over nodes."""
    a = np.eye(n)
    for s, t in edges:
        a[s, t] = 1.0
        a[t, s] = 1.0
    deg = a.sum(axis=1)
    d = np.diag(1.0 / np.sqrt(deg))
    a_hat = d @ a @ d
    h = np.asarray(feats, dtype=np.float64)
    for w in weights:
        h = np.maximum(a_hat @ h @ w, 0.0)
    return h.mean(axis=0)


def sliding_dot_max(rows, kernel, bias):
    """Max over windows of relu(<kernel, window> + bias); kernel (kh, width)."""
    rows = np.asarray(rows, dtype=np.float64)
    kh = kernel.shape[0]
    best = -np.inf
    for start in range(rows.shape[0] - kh + 1):
        acc = bias
        for r in range(kh):
            for c in range(rows.shape[1]):
                acc += kernel[r, c] * rows[start + r, c]
        best = max(best, max(acc, 0.0))
    return best


def conv2d_same3(img, weight, bias):
    """3x3 cross-correlation with zero padding 1; img (C, H, W), weight (O, C, 3, 3)."""
    c_in, h, w = img.shape
    out = np.zeros((weight.shape[0], h, w))
    for o in range(weight.shape[0]):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for di in range(3):
                        for dj in range(3):
                            y, x = i + di - 1, j + dj - 1
                            if 0 <= y < h and 0 <= x < w:
                                acc += weight[o, c, di, dj] * img[c, y, x]
                out[o, i, j] = acc
    return out


def mean_pool2(img):
    c, h, w = img.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = (img[ch, 2 * i, 2 * j] + img[ch, 2 * i + 1, 2 * j]
                                 + img[ch, 2 * i, 2 * j + 1] + img[ch, 2 * i + 1, 2 * j + 1]) / 4
    return out


def windows(seq, w):
    """Hand enumeration of step-1 windows."""
    return [list(seq[i:i + w]) for i in range(len(seq) - w + 1)]
