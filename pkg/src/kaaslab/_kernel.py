"""Compiled inner loop for Q-Learning against a transition table.

Mirrors ``learning._q_learning`` with a ``TableEnv`` draw for draw; the pure
Python pairing is kept as the reference the tests compare against.
"""

import numpy as np
from numba import njit

GOLDEN = 0.6180339887498949


@njit(cache=True)
def offline_chunk(q, visit, allow_ptr, allow_idx, sa_ptr, succ, cum, tot, phase, nsamp,
                  reward, starts, pol, st, s, t_ep, i0, gamma, e0, e1, decay,
                  lr0, k, power, ep_len, n_actions):
    for j in range(pol.shape[0]):
        i = i0 + j
        if s < 0:
            s = starts[int(st[j] * starts.shape[0])]
            t_ep = 0
        a0 = allow_ptr[s]
        a1 = allow_ptr[s + 1]
        eps = e0 + (e1 - e0) * min(i / decay, 1.0)
        if pol[j, 0] < eps:
            a = allow_idx[a0 + int(pol[j, 1] * (a1 - a0))]
        else:
            a = allow_idx[a0]
            bv = q[s, a]
            for p in range(a0, a1):
                b = allow_idx[p]
                if q[s, b] > bv:
                    a = b
                    bv = q[s, b]
        sa = s * n_actions + a
        lo = sa_ptr[sa]
        hi = sa_ptr[sa + 1]
        if hi - lo == 1:
            s2 = succ[lo]
        else:
            u = (phase[sa] + nsamp[sa] * GOLDEN) % 1.0
            nsamp[sa] += 1
            x = u * tot[sa]
            # first successor whose cumulative count exceeds x
            left = lo
            right = hi
            while left < right:
                mid = (left + right) // 2
                if cum[mid] <= x:
                    left = mid + 1
                else:
                    right = mid
            s2 = succ[left]
        t_ep += 1
        done = t_ep >= ep_len
        b0 = allow_ptr[s2]
        b1 = allow_ptr[s2 + 1]
        best = 0.0
        if b1 > b0:
            best = q[s2, allow_idx[b0]]
            for p in range(b0, b1):
                v = q[s2, allow_idx[p]]
                if v > best:
                    best = v
        else:
            done = True
        if k == 0:
            lr = lr0
        else:
            lr = lr0 * (k / (k + visit[s, a])) ** power
        q[s, a] += lr * (reward[s2] + gamma * best - q[s, a])
        visit[s, a] += 1
        s = -1 if done else s2
    return s, t_ep


def pack_allowed(mask):
    counts = mask.sum(axis=1)
    ptr = np.zeros(mask.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    idx = np.nonzero(mask)[1].astype(np.int64)
    return ptr, idx
