"""Pure-Python kernels; the reference twin of ``_kernels.pyx``.

Both implementations accumulate sums in the same order so that results agree
to the last bit on every platform we test.  Inputs are integer-coded:

* categories: codes 0..5 in ``ActionCategory`` order,
* error flags: 0/1 per turn,
* action ids: per-trajectory interned action strings, assigned in order of
  first appearance (so turn ``i`` repeats an earlier action iff its id is
  smaller than the number of distinct ids seen before it),
* states: contextual-state codes 0..35.
"""

from __future__ import annotations

import math

N_CATEGORIES = 6
N_STATES = 36
N_TRAJ_STATS = 15
N_MOTIF_STATS = 6
WINDOW = 5
EXPLORATION, MODIFICATION, TEST, NAVIGATION = 0, 1, 2, 3
NAN = float("nan")


def _entropy_from_sorted(codes):
    """Shannon entropy (nats) of the empirical distribution of sorted codes."""
    n = len(codes)
    if n == 0:
        return 0.0
    h = 0.0
    run = 1
    for i in range(1, n + 1):
        if i < n and codes[i] == codes[i - 1]:
            run += 1
            continue
        p = run / n
        h -= p * math.log(p)
        run = 1
    return h if h > 0.0 else 0.0


def trajectory_stats(cats, errs, acts, min_len=1):
    """Raw per-trajectory features, NaN where undefined.

    Order: exploration, modification, test, navigation ratios, transition
    entropy, exploration front-loading, first-modification timing, phase
    transition point, late-stage entropy, error rate, cascade rate, recovery
    rate, repetition rate, mean cascade length, productive-turn ratio.
    """
    n = len(cats)
    out = [0.0] * N_TRAJ_STATS
    if n == 0:
        return out
    counts = [0] * N_CATEGORIES
    for c in cats:
        counts[c] += 1
    out[0] = counts[EXPLORATION] / n
    out[1] = counts[MODIFICATION] / n
    out[2] = counts[TEST] / n
    out[3] = counts[NAVIGATION] / n

    out[4] = _entropy_from_sorted(sorted(cats[i] * N_CATEGORIES + cats[i + 1] for i in range(n - 1)))
    late_start = (3 * n) // 4
    out[8] = _entropy_from_sorted(sorted(cats[i] * N_CATEGORIES + cats[i + 1] for i in range(late_start, n - 1)))

    cutoff = -(-n // 4)
    if counts[EXPLORATION]:
        early = 0
        for i in range(cutoff):
            if cats[i] == EXPLORATION:
                early += 1
        out[5] = early / counts[EXPLORATION]

    out[6] = NAN
    if n > 1:
        for i in range(n):
            if cats[i] == MODIFICATION:
                out[6] = i / (n - 1)
                break

    out[7] = NAN
    if n > 1:
        window = [0] * N_CATEGORIES
        initial = cats[0]
        mode = initial
        for i in range(n):
            window[cats[i]] += 1
            if i >= WINDOW:
                window[cats[i - WINDOW]] -= 1
            best = window[mode]
            new_mode = mode
            for c in range(N_CATEGORIES):
                if window[c] > best:
                    best = window[c]
                    new_mode = c
            mode = new_mode
            if mode != initial:
                out[7] = i / (n - 1)
                break

    n_err = 0
    n_casc = 0
    n_rec = 0
    for i in range(n):
        if not errs[i]:
            continue
        n_err += 1
        for j in range(i + 1, min(i + 4, n)):
            if errs[j]:
                n_casc += 1
                break
        if i + 1 < n and not errs[i + 1]:
            n_rec += 1
    out[9] = n_err / n
    if n_err:
        out[10] = n_casc / n_err
        out[11] = n_rec / n_err

    runs = 0
    run_total = 0
    run = 0
    for i in range(n + 1):
        if i < n and errs[i]:
            run += 1
            continue
        if run >= min_len and run > 0:
            runs += 1
            run_total += run
        run = 0
    if runs:
        out[13] = run_total / runs

    distinct = 0
    repeats = 0
    productive = 0
    for i in range(n):
        repeat = acts[i] < distinct
        if repeat:
            repeats += 1
        else:
            distinct += 1
        if not repeat and not errs[i]:
            productive += 1
    out[12] = repeats / n
    out[14] = productive / n
    return out


def motif_stats(states, post):
    """Motif-graph features of one contextual-state sequence.

    Order: motif entropy, transition entropy, self-loop rate, revisit rate,
    backtrack rate, post-error motif ratio.
    """
    n = len(states)
    out = [0.0] * N_MOTIF_STATS
    if n < 2:
        return out
    n_motif = n - 1
    motifs = [states[i] * N_STATES + states[i + 1] for i in range(n_motif)]
    out[0] = _entropy_from_sorted(sorted(motifs))
    n_edge = n_motif - 1
    if n_edge > 0:
        edges = [motifs[i] * (N_STATES * N_STATES) + motifs[i + 1] for i in range(n_edge)]
        out[1] = _entropy_from_sorted(sorted(edges))
        loops = 0
        for i in range(n_edge):
            if motifs[i] == motifs[i + 1]:
                loops += 1
        out[2] = loops / n_edge
    out[3] = (n_motif - len(set(motifs))) / n_motif
    if n_motif >= 3:
        back = 0
        for t in range(2, n_motif):
            if motifs[t] == motifs[t - 2]:
                back += 1
        out[4] = back / (n_motif - 2)
    with_post = 0
    for i in range(n_motif):
        if post[i] or post[i + 1]:
            with_post += 1
    out[5] = with_post / n_motif
    return out


def _dl_tau2(y, v, rows):
    k = len(rows)
    sw = sw2 = swy = 0.0
    for i in rows:
        w = 1.0 / v[i]
        sw += w
        sw2 += w * w
        swy += w * y[i]
    mean = swy / sw
    q = 0.0
    for i in rows:
        d = y[i] - mean
        q += d * d / v[i]
    c = sw - sw2 / sw
    if c <= 0.0:
        return 0.0
    t = (q - (k - 1)) / c
    return t if t > 0.0 else 0.0


def _residual_tau2(y, v, rows, labels, n_levels):
    sw = [0.0] * n_levels
    sw2 = [0.0] * n_levels
    swy = [0.0] * n_levels
    for i, g in zip(rows, labels):
        w = 1.0 / v[i]
        sw[g] += w
        sw2[g] += w * w
        swy[g] += w * y[i]
    present = 0
    c = 0.0
    for g in range(n_levels):
        if sw[g] > 0.0:
            present += 1
            c += sw[g] - sw2[g] / sw[g]
    df = len(rows) - present
    if present < 2 or df < 1:
        return NAN, present
    q = 0.0
    for i, g in zip(rows, labels):
        d = y[i] - swy[g] / sw[g]
        q += d * d / v[i]
    if c <= 0.0:
        return 0.0, present
    t = (q - df) / c
    return (t if t > 0.0 else 0.0), present


def moderator_tau2(y, v, labels, n_levels):
    """``(tau2_null, tau2_residual)`` for one categorical moderator.

    ``tau2_residual`` is NaN when fewer than two levels are present or the
    residual degrees of freedom drop below one.
    """
    rows = range(len(y))
    res, _ = _residual_tau2(y, v, rows, list(labels), n_levels)
    return _dl_tau2(y, v, rows), res


def r2_from_tau2(tau2_null, tau2_res):
    if tau2_res != tau2_res:
        return NAN
    if tau2_null <= 0.0:
        return 0.0
    r2 = 1.0 - tau2_res / tau2_null
    if r2 < 0.0:
        return 0.0
    return r2 if r2 < 1.0 else 1.0


def moderator_r2_many(y, v, idx, labels, n_levels):
    """Pseudo-R2 for each row of ``idx``/``labels`` (NaN for degenerate rows)."""
    out = []
    for rows, labs in zip(idx, labels):
        rows = list(rows)
        labs = list(labs)
        res, _ = _residual_tau2(y, v, rows, labs, n_levels)
        out.append(r2_from_tau2(_dl_tau2(y, v, rows), res))
    return out
