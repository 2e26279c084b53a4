"""Numba batch cascade kernel: per-sample loops, JIT-compiled.

Same contract and bit-identical results as ``kernels_numpy.cascade_batch``.
Compiled lazily on first call; ``cache=True`` persists the compilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# constants mirrored from router; numba wants plain literals in scope
_GLOBAL_MIX = 0.6
_LOCAL_MIX = 0.4
_AGREEMENT = 0.8
_CAP = 0.98
_SLOPE = 0.1
_U_SINGLETON = 0.1
_U_BINARY = 0.35


@njit(cache=True, nogil=True)
def cascade_batch(
    ids,
    P,
    preds,
    cumsum,
    top2,
    q_hat,
    u,
    aps_mode,
    wg,
    lw_table,
    eff_norm,
    difficulty,
    comp_global,
    comp_pair,
    pair_support,
    min_pair_support,
    costs,
    w,
    alpha_singleton,
    alpha_binary,
    alpha_difficult,
    delta,
    delta_max,
    min_experts,
    start_expert,
):
    # wg and lw_table carry the policy's weight powers, precomputed once with
    # scalar libm pow so every backend sees identical values
    n = ids.shape[0]
    n_experts = P.shape[0]
    n_classes = P.shape[2]

    out_consulted = np.full((n, n_experts), -1, dtype=np.int32)
    out_ncons = np.zeros(n, dtype=np.int32)
    out_cat = np.full((n, n_experts), -1, dtype=np.int8)
    out_exit = np.ones(n, dtype=np.int8)
    out_pens = np.zeros((n, n_classes), dtype=np.float64)
    out_pred = np.zeros(n, dtype=np.int32)
    out_cost = np.zeros(n, dtype=np.float64)

    votes = np.empty(n_classes, dtype=np.int64)
    vote_global = np.empty(n_classes, dtype=np.float64)
    num = np.empty(n_classes, dtype=np.float64)
    local_raw = np.empty(n_experts, dtype=np.float64)
    used = np.empty(n_experts, dtype=np.bool_)
    consulted = np.empty(n_experts, dtype=np.int64)

    for s in range(n):
        i = ids[s]
        for c in range(n_classes):
            votes[c] = 0
        for k in range(n_experts):
            used[k] = False
        modal = 0
        ncons = 0
        cost = 0.0
        kcur = start_expert
        prev_vote = -1
        last_vote = -1
        exit_code = 1

        while True:
            k = kcur
            consulted[ncons] = k
            out_consulted[s, ncons] = k
            ncons += 1
            used[k] = True
            cost += costs[k]

            pv = preds[k, i]
            prev_vote = last_vote
            last_vote = pv
            votes[pv] += 1
            if votes[pv] > modal:
                modal = votes[pv]

            if aps_mode:
                row = cumsum[k, i]
                j = np.searchsorted(row, q_hat[k], side="left")
                size = j + 1 if j < n_classes else n_classes
                cat = 0 if size == 1 else (1 if size == 2 else 2)
            else:
                uv = u[k, i]
                cat = 0 if uv < _U_SINGLETON else (1 if uv < _U_BINARY else 2)
            out_cat[s, ncons - 1] = cat

            for c in range(n_classes):
                vote_global[c] = 0.0
            for j2 in range(ncons):
                kj = consulted[j2]
                wgj = wg[kj]
                for c in range(n_classes):
                    vote_global[c] += wgj * P[kj, i, c]
            cstar = 0
            best_vote = vote_global[0]
            for c in range(1, n_classes):
                if vote_global[c] > best_vote:
                    best_vote = vote_global[c]
                    cstar = c

            local_sum = 0.0
            for j2 in range(ncons):
                kj = consulted[j2]
                lw = lw_table[kj, cstar]
                local_raw[j2] = lw
                local_sum += lw

            den = 0.0
            for c in range(n_classes):
                num[c] = 0.0
            for j2 in range(ncons):
                kj = consulted[j2]
                wk = _GLOBAL_MIX * wg[kj] + _LOCAL_MIX * (local_raw[j2] / local_sum)
                den += wk
                for c in range(n_classes):
                    num[c] += wk * P[kj, i, c]
            conf = 0.0
            for c in range(n_classes):
                v = num[c] / den
                out_pens[s, c] = v
                if v > conf:
                    conf = v

            frac = modal / ncons
            if cat == 0:
                alpha_base = alpha_singleton
            elif cat == 1:
                alpha_base = alpha_binary
            else:
                alpha_base = alpha_difficult
            if frac > _AGREEMENT:
                boost = delta * (ncons - 1)
                if boost > delta_max:
                    boost = delta_max
                alpha_base = alpha_base - boost
            alpha_final = alpha_base + (difficulty[cstar] - 0.5) * _SLOPE
            if alpha_final > _CAP:
                alpha_final = _CAP

            agree2 = ncons == 1 or last_vote == prev_vote
            if ncons >= min_experts and conf >= alpha_final and agree2:
                exit_code = 0
                break
            if ncons == n_experts:
                exit_code = 1
                break

            # pairwise lookup classes only matter for binary categories
            c1 = 0
            c2 = 0
            sup1 = False
            sup2 = False
            if cat == 1:
                c1 = top2[k, i, 0]
                c2 = top2[k, i, 1]
                sup1 = pair_support[c1, c2, k] >= min_pair_support
                sup2 = pair_support[c2, c1, k] >= min_pair_support
            best_b = -1
            best_score = -np.inf
            for b in range(n_experts):
                if used[b]:
                    continue
                comp = comp_global[k, b]
                if cat == 1:
                    if sup1 and sup2:
                        v1 = comp_pair[c1, c2, k, b]
                        v2 = comp_pair[c2, c1, k, b]
                        comp = v1 if v1 > v2 else v2
                    elif sup1:
                        comp = comp_pair[c1, c2, k, b]
                    elif sup2:
                        comp = comp_pair[c2, c1, k, b]
                score = w * comp + (1.0 - w) * eff_norm[b]
                if score > best_score:
                    best_score = score
                    best_b = b
            kcur = best_b

        out_ncons[s] = ncons
        out_exit[s] = exit_code
        out_cost[s] = cost
        pred = 0
        best_p = out_pens[s, 0]
        for c in range(1, n_classes):
            if out_pens[s, c] > best_p:
                best_p = out_pens[s, c]
                pred = c
        out_pred[s] = pred

    return out_consulted, out_ncons, out_cat, out_exit, out_pens, out_pred, out_cost
