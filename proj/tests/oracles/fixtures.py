#!/usr/bin/env python3
"""Independent straight-line oracle for the frozen C++ test fixtures.

Re-derives SplitMix64, the seeded weight layout and a one-layer, one-head
decode with plain Python floats. Nothing here shares code with the engine.
Run it and paste the printed values into tests/fixtures.hpp when a fixture changes.
"""
import math

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform01(self):
        return (self.next() >> 11) * 2.0 ** -53


def mat(rng, rows, cols, lo, hi):
    return [[lo + (hi - lo) * rng.uniform01() for _ in range(cols)] for _ in range(rows)]


def mm(a, b):
    out = []
    for i in range(len(a)):
        row = []
        for j in range(len(b[0])):
            acc = 0.0
            for k in range(len(b)):
                acc += a[i][k] * b[k][j]
            row.append(acc)
        out.append(row)
    return out


def softmax_row(r):
    mx = max(r)
    e = [math.exp(v - mx) for v in r]
    s = sum(e)
    return [v / s for v in e]


def attend(q_src, kv_src, wq, wk, wv, scale):
    q = mm(q_src, wq)
    k = mm(kv_src, wk)
    v = mm(kv_src, wv)
    logits = [[scale * sum(q[i][c] * k[j][c] for c in range(len(q[0])))
               for j in range(len(k))] for i in range(len(q))]
    attn = [softmax_row(r) for r in logits]
    res = mm(attn, v)
    return logits, attn, res


def fmt(m):
    return "{" + ", ".join("{" + ", ".join(repr(x) for x in r) + "}" for r in m) + "}"


def main():
    print("splitmix64 seed 0 first:", hex(SplitMix64(0).next()))

    rng = SplitMix64(123)
    a = mat(rng, 3, 3, -1.0, 1.0)
    b = mat(rng, 3, 3, -1.0, 1.0)
    print("matmul A =", fmt(a))
    print("matmul B =", fmt(b))
    print("matmul A*B =", fmt(mm(a, b)))

    d = 2
    bound = 1.0 / math.sqrt(d)
    rng = SplitMix64(42)
    w = [mat(rng, d, d, -bound, bound) for _ in range(6)]
    print("weights seed42 L1 d2 (state Q,K,V then image Q,K,V):")
    for x in w:
        print("  ", fmt(x))
    s = [[1.0, 0.0], [0.0, 1.0]]
    x = [[1.0, 0.0], [0.0, 1.0]]
    scale = 1.0 / math.sqrt(d)
    lg, at, res = attend(s, x, w[0], w[1], w[2], scale)
    s_hat = [[s[i][c] + res[i][c] for c in range(d)] for i in range(2)]
    _, _, res_x = attend(x, s, w[3], w[4], w[5], scale)
    y = [[x[i][c] + res_x[i][c] for c in range(d)] for i in range(2)]
    print("state logits =", fmt(lg))
    print("state attention =", fmt(at))
    print("candidate =", fmt(s_hat))
    print("decoded =", fmt(y))
    beta = [1.0 / (1.0 + math.exp(-sum(r) / 2.0)) for r in lg]
    print("beta =", repr(beta[0]), repr(beta[1]))
    ttt = [[s[i][c] + beta[i] * res[i][c] for c in range(d)] for i in range(2)]
    print("ttt state =", fmt(ttt))


if __name__ == "__main__":
    main()
