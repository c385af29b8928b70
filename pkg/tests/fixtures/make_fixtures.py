"""Regenerate the toy CNN golden files with plain Python loops.

Only the model file writer comes from the package; the arithmetic below is written out
independently so the committed trace is a genuine cross-check.

    python3 tests/fixtures/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from falcon_pi.model import FC, Conv, FusedMaxPoolReLU, MeanPool, ModelDescriptor, ReLU, Softmax, save_model

HERE = Path(__file__).parent
S = 8


def rnd(v, bits):
    x = v * (1 << bits)
    r = int(abs(x) + 0.5)
    return r if x >= 0 else -r


def conv_same(x, w, b):
    c, W, H = len(x), len(x[0]), len(x[0][0])
    k, fw, fh = len(w), len(w[0][0]), len(w[0][0][0])
    pw, ph = (fw - 1) // 2, (fh - 1) // 2
    out = [[[0] * H for _ in range(W)] for _ in range(k)]
    for j in range(k):
        for u in range(W):
            for v in range(H):
                acc = b[j]
                for ch in range(c):
                    for a in range(fw):
                        for bb in range(fh):
                            i, jj = u + a - pw, v + bb - ph
                            if 0 <= i < W and 0 <= jj < H:
                                acc += w[j][ch][a][bb] * x[ch][i][jj]
                out[j][u][v] = acc
    return out


def floor_shift(t, s):
    if isinstance(t, list):
        return [floor_shift(e, s) for e in t]
    return t >> s


def relu(t):
    if isinstance(t, list):
        return [relu(e) for e in t]
    return max(t, 0)


def pool(x, size, op):
    out = []
    for ch in x:
        rows = []
        for u in range(0, len(ch) - size + 1, size):
            row = []
            for v in range(0, len(ch[0]) - size + 1, size):
                vals = [ch[u + a][v + b] for a in range(size) for b in range(size)]
                row.append(op(vals))
            rows.append(row)
        out.append(rows)
    return out


def flat(t):
    if isinstance(t, list):
        return [e for s in t for e in flat(s)]
    return [t]


def main():
    g = np.random.default_rng(20240611)
    img = g.uniform(-1, 1, (1, 8, 8))
    w1 = g.uniform(-0.5, 0.5, (2, 1, 3, 3)); b1 = g.uniform(-0.2, 0.2, 2)
    w2 = g.uniform(-0.5, 0.5, (2, 2, 3, 3)); b2 = g.uniform(-0.2, 0.2, 2)
    w3 = g.uniform(-0.5, 0.5, (3, 8)); b3 = g.uniform(-0.2, 0.2, 3)
    q = lambda a, bits: np.vectorize(lambda v: rnd(float(v), bits))(a).astype(np.int64)
    qi, q1, qb1, q2, qb2, q3, qb3 = q(img, S), q(w1, S), q(b1, 2 * S), q(w2, S), q(b2, 2 * S), q(w3, S), q(b3, 2 * S)
    model = ModelDescriptor((1, 8, 8), [
        Conv(q1, qb1), ReLU(), MeanPool(2), Conv(q2, qb2), FusedMaxPoolReLU(2), FC(q3, qb3), Softmax(4),
    ], S, quantized=True)
    save_model(model, HERE / "toy_cnn.json")
    np.asarray(qi).astype("<i8").tofile(HERE / "toy_image.bin")

    x = qi.tolist()
    trace = []
    x = floor_shift(conv_same(x, q1.tolist(), qb1.tolist()), S); trace.append(flat(x))
    x = relu(x); trace.append(flat(x))
    x = pool(x, 2, lambda vs: sum(vs) // len(vs)); trace.append(flat(x))
    x = floor_shift(conv_same(x, q2.tolist(), qb2.tolist()), S); trace.append(flat(x))
    x = pool(x, 2, lambda vs: max(max(vs), 0)); trace.append(flat(x))
    fx = flat(x)
    logits = [sum(q3[i, j] * fx[j] for j in range(8)) + qb3[i] for i in range(3)]
    trace.append([int(v) for v in logits])
    np.asarray([v for t in trace for v in t], dtype="<i8").tofile(HERE / "toy_trace.bin")
    (HERE / "toy_logits.json").write_text(json.dumps({"logits": [int(v) for v in logits]}) + "\n")


if __name__ == "__main__":
    main()
