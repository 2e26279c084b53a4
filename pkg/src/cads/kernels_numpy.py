"""Pure-numpy batch cascade kernel.

Runs all samples in lockstep: at every step the still-active rows consult
their chosen expert, re-ensemble, and either exit or pick the next expert.
Bit-for-bit identical to the per-sample reference in ``router`` and to the
numba kernel; every accumulation runs in consultation order.
"""

from __future__ import annotations

import numpy as np

from .router import (
    CONSENSUS_AGREEMENT,
    DIFFICULTY_SLOPE,
    GLOBAL_MIX,
    LOCAL_MIX,
    MEASURE_BINARY_EDGE,
    MEASURE_SINGLETON_EDGE,
    THRESHOLD_CAP,
)


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
    # wg = acc**gamma and lw_table = (acc_class + eps)**beta arrive
    # precomputed with scalar libm pow; array pow is not ulp-identical
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

    used = np.zeros((n, n_experts), dtype=bool)
    votes = np.zeros((n, n_classes), dtype=np.int64)
    modal = np.zeros(n, dtype=np.int64)
    # running global-weighted vote; incremental adds happen in consultation
    # order, matching the reference's from-scratch accumulation exactly
    vote_global = np.zeros((n, n_classes), dtype=np.float64)
    cost_run = np.zeros(n, dtype=np.float64)
    prev_vote = np.full(n, -1, dtype=np.int64)

    active = np.arange(n)
    cur = np.full(n, start_expert, dtype=np.int64)

    for step in range(n_experts):
        if active.size == 0:
            break
        a = active
        i = ids[a]
        k = cur[a]
        nc = step + 1

        out_consulted[a, step] = k
        used[a, k] = True
        cost_run[a] += costs[k]

        pk = P[k, i, :]
        votes_k = preds[k, i].astype(np.int64)
        votes[a, votes_k] += 1
        modal[a] = np.maximum(modal[a], votes[a, votes_k])

        if aps_mode:
            sizes = (cumsum[k, i, :] < q_hat[k][:, None]).sum(axis=1)
            sizes = np.minimum(sizes, n_classes - 1) + 1
            cat = np.where(sizes == 1, 0, np.where(sizes == 2, 1, 2)).astype(np.int8)
        else:
            uv = u[k, i]
            cat = np.where(
                uv < MEASURE_SINGLETON_EDGE, 0, np.where(uv < MEASURE_BINARY_EDGE, 1, 2)
            ).astype(np.int8)
        out_cat[a, step] = cat

        vote_global[a] += wg[k][:, None] * pk
        cstar = np.argmax(vote_global[a], axis=1)

        m = a.size
        local_raw = []
        local_sum = np.zeros(m, dtype=np.float64)
        for j in range(nc):
            kj = out_consulted[a, j].astype(np.int64)
            lw = lw_table[kj, cstar]
            local_raw.append(lw)
            local_sum = local_sum + lw
        num = np.zeros((m, n_classes), dtype=np.float64)
        den = np.zeros(m, dtype=np.float64)
        for j in range(nc):
            kj = out_consulted[a, j].astype(np.int64)
            wk = GLOBAL_MIX * wg[kj] + LOCAL_MIX * (local_raw[j] / local_sum)
            den = den + wk
            num = num + wk[:, None] * P[kj, i, :]
        pens = num / den[:, None]
        conf = pens.max(axis=1)

        frac = modal[a] / nc
        alpha_base = np.where(
            cat == 0,
            alpha_singleton,
            np.where(cat == 1, alpha_binary, alpha_difficult),
        )
        boost = min(delta * (nc - 1), delta_max)
        boosted = np.where(frac > CONSENSUS_AGREEMENT, alpha_base - boost, alpha_base)
        alpha_final = np.minimum(
            boosted + (difficulty[cstar] - 0.5) * DIFFICULTY_SLOPE, THRESHOLD_CAP
        )

        if step == 0:
            agree2 = np.ones(m, dtype=bool)
        else:
            agree2 = prev_vote[a] == votes_k
        exit_now = (nc >= min_experts) & (conf >= alpha_final) & agree2
        finished = exit_now | (step == n_experts - 1)

        fin = a[finished]
        if fin.size:
            out_exit[fin] = np.where(exit_now[finished], 0, 1).astype(np.int8)
            out_pens[fin] = pens[finished]
            out_pred[fin] = np.argmax(pens[finished], axis=1).astype(np.int32)
            out_ncons[fin] = nc
            out_cost[fin] = cost_run[fin]

        keep = ~finished
        if not keep.any():
            active = a[:0]
            continue

        ac = a[keep]
        kc = k[keep]
        comp = comp_global[kc, :].copy()
        binary = cat[keep] == 1
        if binary.any():
            bpos = np.flatnonzero(binary)
            kb = kc[bpos]
            ib = i[keep][bpos]
            c1 = top2[kb, ib, 0].astype(np.int64)
            c2 = top2[kb, ib, 1].astype(np.int64)
            v1 = comp_pair[c1, c2, kb, :]
            v2 = comp_pair[c2, c1, kb, :]
            s1 = pair_support[c1, c2, kb] >= min_pair_support
            s2 = pair_support[c2, c1, kb] >= min_pair_support
            sel = comp[bpos]
            both = s1 & s2
            sel[both] = np.maximum(v1[both], v2[both])
            only1 = s1 & ~s2
            sel[only1] = v1[only1]
            only2 = s2 & ~s1
            sel[only2] = v2[only2]
            comp[bpos] = sel
        score = w * comp + (1.0 - w) * eff_norm[None, :]
        score[used[ac]] = -np.inf
        cur[ac] = np.argmax(score, axis=1)
        prev_vote[ac] = votes_k[keep]
        active = ac

    return out_consulted, out_ncons, out_cat, out_exit, out_pens, out_pred, out_cost
