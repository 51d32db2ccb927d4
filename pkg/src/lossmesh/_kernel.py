"""Jitted event loop for the loss-cluster simulator.

The driver (:mod:`lossmesh.simulate`) pre-draws randomness in per-stream
blocks and calls :func:`run_segment` repeatedly; each call advances the
cluster to a segment end (a snapshot/sample checkpoint or the horizon) or
until the draw blocks are exhausted.  Keeping all randomness outside the
kernel pins the draw order, so results are bit-identical for a given seed
no matter how the run is segmented or blocked.

Event order: departures are processed before an arrival carrying the same
timestamp; equal departure times are ordered by admission sequence number.
"""

from numba import njit

DONE = 0
NEED_DRAWS = 1

# fstate slots
F_NOW = 0       # current simulated time
F_LAST_ARR = 1  # time of the last consumed arrival
# istate slots
I_HEAP = 0      # departure-heap size
I_CURSOR = 1    # next unconsumed arrival slot in the draw blocks
I_ARRIVALS = 2
I_ADMITS = 3
I_BLOCKS = 4
I_SEQ = 5       # admission sequence number (heap tie-break)


@njit(cache=True)
def _heap_less(ht, hq, i, j):
    return ht[i] < ht[j] or (ht[i] == ht[j] and hq[i] < hq[j])


@njit(cache=True)
def _heap_push(ht, hs, ha, hq, size, t, srv, adm, seq):
    i = size
    ht[i] = t
    hs[i] = srv
    ha[i] = adm
    hq[i] = seq
    while i > 0:
        par = (i - 1) >> 1
        if not _heap_less(ht, hq, i, par):
            break
        ht[i], ht[par] = ht[par], ht[i]
        hs[i], hs[par] = hs[par], hs[i]
        ha[i], ha[par] = ha[par], ha[i]
        hq[i], hq[par] = hq[par], hq[i]
        i = par
    return size + 1


@njit(cache=True)
def _heap_pop(ht, hs, ha, hq, size):
    size -= 1
    ht[0] = ht[size]
    hs[0] = hs[size]
    ha[0] = ha[size]
    hq[0] = hq[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        best = i
        if left < size and _heap_less(ht, hq, left, best):
            best = left
        if right < size and _heap_less(ht, hq, right, best):
            best = right
        if best == i:
            break
        ht[i], ht[best] = ht[best], ht[i]
        hs[i], hs[best] = hs[best], hs[i]
        ha[i], ha[best] = ha[best], ha[i]
        hq[i], hq[best] = hq[best], hq[i]
        i = best
    return size


@njit(cache=True)
def _accrue(occ_time, cnt, t0, t1, warmup, t_total, batch_len, n_batches):
    # add cnt * dt to the batched time-weight table over [t0, t1) clipped to
    # the measurement window, splitting across batch boundaries
    a = t0 if t0 > warmup else warmup
    b = t1 if t1 < t_total else t_total
    while a < b:
        bi = int((a - warmup) / batch_len)
        if bi > n_batches - 1:
            bi = n_batches - 1
        edge = warmup + (bi + 1) * batch_len
        if edge <= a:  # `a` sits exactly on a float batch edge
            bi = bi + 1 if bi + 1 < n_batches else n_batches - 1
            edge = warmup + (bi + 1) * batch_len
        top = b
        if bi < n_batches - 1 and edge < b:
            top = edge
        w = top - a
        for k in range(cnt.shape[0]):
            for n in range(cnt.shape[1]):
                if cnt[k, n] != 0:
                    occ_time[bi, k, n] += cnt[k, n] * w
        a = top
    return


@njit(cache=True)
def _batch_of(t, warmup, batch_len, n_batches):
    bi = int((t - warmup) / batch_len)
    if bi < 0:
        bi = 0
    if bi > n_batches - 1:
        bi = n_batches - 1
    return bi


@njit(cache=True)
def run_segment(t_end, fstate, istate,
                occ, cap, typ, adm, dep,
                heap_t, heap_srv, heap_adm, heap_seq,
                cnt,
                inter, probes, ties, svc,
                occ_time, arr_batch, blk_batch,
                warmup, t_total, batch_len, n_batches,
                d, without_replacement, fy_idx, fy_val):
    t_now = fstate[F_NOW]
    t_last = fstate[F_LAST_ARR]
    hsize = istate[I_HEAP]
    cur = istate[I_CURSOR]
    n_blocks_avail = inter.shape[0]
    while True:
        if cur >= n_blocks_avail:
            fstate[F_NOW] = t_now
            fstate[F_LAST_ARR] = t_last
            istate[I_HEAP] = hsize
            istate[I_CURSOR] = cur
            return NEED_DRAWS
        t_pend = t_last + inter[cur]
        bound = t_pend if t_pend < t_end else t_end

        # departures up to the next arrival or the segment end
        while hsize > 0 and heap_t[0] <= bound:
            td = heap_t[0]
            s = heap_srv[0]
            a = heap_adm[0]
            hsize = _heap_pop(heap_t, heap_srv, heap_adm, heap_seq, hsize)
            _accrue(occ_time, cnt, t_now, td, warmup, t_total, batch_len, n_batches)
            t_now = td
            o = occ[s]
            for j in range(o):
                if dep[s, j] == td and adm[s, j] == a:
                    dep[s, j] = dep[s, o - 1]
                    adm[s, j] = adm[s, o - 1]
                    break
            occ[s] = o - 1
            cnt[typ[s], o] -= 1
            cnt[typ[s], o - 1] += 1

        if t_pend > t_end:
            _accrue(occ_time, cnt, t_now, t_end, warmup, t_total, batch_len, n_batches)
            fstate[F_NOW] = t_end
            fstate[F_LAST_ARR] = t_last
            istate[I_HEAP] = hsize
            istate[I_CURSOR] = cur
            return DONE

        # arrival at t_pend
        _accrue(occ_time, cnt, t_now, t_pend, warmup, t_total, batch_len, n_batches)
        t_now = t_pend
        t_last = t_pend
        istate[I_ARRIVALS] += 1

        best = -1
        best_vac = -1
        best_cap = -1
        tie_count = 1.0
        fy_used = 0
        for j in range(d):
            if without_replacement:
                # partial Fisher-Yates over the virtual identity permutation;
                # probes[cur, j] was drawn uniform on [0, n_servers - j)
                r = j + probes[cur, j]
                vr = r
                for q in range(fy_used):
                    if fy_idx[q] == r:
                        vr = fy_val[q]
                        break
                vj = j
                for q in range(fy_used):
                    if fy_idx[q] == j:
                        vj = fy_val[q]
                        break
                found = False
                for q in range(fy_used):
                    if fy_idx[q] == r:
                        fy_val[q] = vj
                        found = True
                        break
                if not found:
                    fy_idx[fy_used] = r
                    fy_val[fy_used] = vj
                    fy_used += 1
                p = vr
            else:
                p = probes[cur, j]
            vac = cap[p] - occ[p]
            cp = cap[p]
            if vac > best_vac or (vac == best_vac and cp > best_cap):
                best = p
                best_vac = vac
                best_cap = cp
                tie_count = 1.0
            elif vac == best_vac and cp == best_cap:
                tie_count += 1.0
                if ties[cur, j] * tie_count < 1.0:
                    best = p

        in_window = (t_pend >= warmup) and (t_pend <= t_total)
        bi = _batch_of(t_pend, warmup, batch_len, n_batches)
        if in_window:
            arr_batch[bi] += 1
        if best_vac <= 0:
            istate[I_BLOCKS] += 1
            if in_window:
                blk_batch[bi] += 1
        else:
            istate[I_ADMITS] += 1
            o = occ[best]
            adm[best, o] = t_pend
            td = t_pend + svc[cur]
            dep[best, o] = td
            occ[best] = o + 1
            cnt[typ[best], o] -= 1
            cnt[typ[best], o + 1] += 1
            hsize = _heap_push(heap_t, heap_srv, heap_adm, heap_seq, hsize,
                               td, best, t_pend, istate[I_SEQ])
            istate[I_SEQ] += 1
        cur += 1
