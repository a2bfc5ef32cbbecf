"""Sequential per-path stepping loops, JIT-compiled.

The Monte Carlo budget is millions of small-dimension steps, so the inner
recursions live here as explicit loops over the state dimension.  No
fastmath: results must be bit-identical across runs and worker counts.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def propagate_closed(phis, gap_group, y0, out):
    # y_{i+1} = phi_i y_i with phi_i the exact step propagator
    n = y0.shape[0]
    steps = gap_group.shape[0]
    y = y0.copy()
    ynew = np.empty(n)
    out[0] = y
    for i in range(steps):
        g = gap_group[i]
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += phis[g, r, c] * y[c]
            ynew[r] = acc
        for r in range(n):
            y[r] = ynew[r]
        out[i + 1] = y
    return out


@njit(cache=True, nogil=True)
def propagate_sampled_hold(phis, psis_bk, gap_group, is_sampling, y0, out):
    # y_{i+1} = phi_i y_i - (psi_i BK) held, held latched at sampling nodes
    n = y0.shape[0]
    steps = gap_group.shape[0]
    y = y0.copy()
    held = y0.copy()
    ynew = np.empty(n)
    out[0] = y
    for i in range(steps):
        g = gap_group[i]
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += phis[g, r, c] * y[c] - psis_bk[g, r, c] * held[c]
            ynew[r] = acc
        for r in range(n):
            y[r] = ynew[r]
        out[i + 1] = y
        if is_sampling[i + 1]:
            for r in range(n):
                held[r] = y[r]
    return out


@njit(cache=True, nogil=True)
def step_jump_diffusion(
    phis,
    psis_bk,
    gap_group,
    dt,
    increments,
    is_sampling,
    jump_nodes,
    jump_marks,
    sig_base,
    sig_slopes,
    jf_base,
    jf_slopes,
    mean_mark,
    epsilon,
    y0,
    out,
    out_pre,
):
    # Drift propagated exactly over each gap (phi, psi pair); diffusion and
    # compensator added in left-point Ito fashion; jump displacements applied
    # after the step into their node, coefficients at the pre-jump value.
    # A sampling node latches the pre-jump value before any jump there.
    n = y0.shape[0]
    steps = gap_group.shape[0]
    n_jumps = jump_nodes.shape[0]
    y = y0.copy()
    held = y0.copy()
    ynew = np.empty(n)
    disp = np.empty(n)
    out[0] = y
    out_pre[0] = y
    jp = 0
    for i in range(steps):
        g = gap_group[i]
        d = dt[i]
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += phis[g, r, c] * y[c] - psis_bk[g, r, c] * held[c]
            noise = 0.0
            comp = 0.0
            for c in range(n):
                s_rc = sig_base[r, c]
                g_rc = jf_base[r, c]
                for j in range(n):
                    s_rc += y[j] * sig_slopes[j, r, c]
                    g_rc += y[j] * jf_slopes[j, r, c]
                noise += s_rc * increments[i, c]
                comp += g_rc * mean_mark[c]
            ynew[r] = acc + epsilon * noise - epsilon * comp * d
        node = i + 1
        out_pre[node] = ynew
        if is_sampling[node]:
            for r in range(n):
                held[r] = ynew[r]
        while jp < n_jumps and jump_nodes[jp] == node:
            for r in range(n):
                a = 0.0
                for c in range(n):
                    g_rc = jf_base[r, c]
                    for j in range(n):
                        g_rc += ynew[j] * jf_slopes[j, r, c]
                    a += g_rc * jump_marks[jp, c]
                disp[r] = a
            for r in range(n):
                ynew[r] += epsilon * disp[r]
            jp += 1
        for r in range(n):
            y[r] = ynew[r]
        out[node] = y
    return out


@njit(cache=True, nogil=True)
def step_limit_fluctuation(gen, dt, forcing, jump_nodes, jump_disp, out):
    # z_{i+1} = z_i + gen z_i dt_i + forcing_i, plus displacements at jumps;
    # forcing already bundles source, diffusion and compensator terms.
    n = gen.shape[0]
    steps = dt.shape[0]
    n_jumps = jump_nodes.shape[0]
    z = np.zeros(n)
    znew = np.empty(n)
    out[0] = z
    jp = 0
    for i in range(steps):
        d = dt[i]
        for r in range(n):
            acc = z[r] + forcing[i, r]
            for c in range(n):
                acc += gen[r, c] * z[c] * d
            znew[r] = acc
        node = i + 1
        while jp < n_jumps and jump_nodes[jp] == node:
            for r in range(n):
                znew[r] += jump_disp[jp, r]
            jp += 1
        for r in range(n):
            z[r] = znew[r]
        out[node] = z
    return out
