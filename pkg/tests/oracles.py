"""Independent brute-force reference implementations used by the tests.

Nothing here imports the code under test beyond plain data containers;
every quantity is recomputed from its definition with Python loops.
"""
import itertools
import math

import numpy as np


# -- summarization objectives as set functions ------------------------------


def _dist(x, i, j):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x[i], x[j])))


def distance_matrix(x):
    n = len(x)
    return [[_dist(x, i, j) for j in range(n)] for i in range(n)]


def objective_vector(emb, quality, feats, query, k, ordered):
    """Normalized per-objective totals of an ordered selection, by definition."""
    n = len(emb)
    D = distance_matrix(feats)
    d_max = max(max(row) for row in D)
    tn = math.sqrt(sum(t * t for t in query))

    def cos(i):
        en = math.sqrt(sum(e * e for e in emb[i]))
        return sum(a * b for a, b in zip(emb[i], query)) / (en * tn)

    sim = sum((cos(i) + 1) / (2 * k) for i in ordered)
    qual = sum(1 / (1 + math.exp(-quality[i])) / k for i in ordered)
    div = 0.0
    for pos, i in enumerate(ordered):
        if pos == 0:
            div += 1 / k
        elif d_max > 0:
            div += min(D[i][j] for j in ordered[:pos]) / d_max / k
    rep = 0.0
    if ordered and d_max > 0:
        for v in range(n):
            rep += d_max**2 - min(D[v][s] ** 2 for s in ordered)
        rep /= n * d_max**2
    return [sim, qual, div, rep]


def brute_force_optimum(emb, quality, feats, query, k, weights):
    """Best weighted value over all k-subsets and all insertion orders."""
    n = len(emb)
    D = np.array(distance_matrix(feats))
    d_max = D.max()
    emb = np.asarray(emb, float)
    query = np.asarray(query, float)
    cos = emb @ query / (np.linalg.norm(emb, axis=1) * np.linalg.norm(query))
    sim_g = (cos + 1) / (2 * k)
    qual_g = 1 / (1 + np.exp(-np.asarray(quality, float))) / k
    perms = np.array(list(itertools.permutations(range(n), k)))
    total = weights[0] * sim_g[perms].sum(1) + weights[1] * qual_g[perms].sum(1)
    div = np.full(len(perms), 1.0 / k)
    if d_max > 0:
        for pos in range(1, k):
            prev = perms[:, :pos]
            cur = perms[:, pos]
            div += D[cur[:, None], prev].min(axis=1) / d_max / k
        sq = D**2
        cover = sq[:, perms].min(axis=2)  # (n, P)
        rep = (d_max**2 - cover).sum(axis=0) / (n * d_max**2)
    else:
        rep = np.zeros(len(perms))
    total = total + weights[2] * div + weights[3] * rep
    return float(total.max())


# -- metrics ----------------------------------------------------------------


def average_ranks(values):
    n = len(values)
    ranks = [0.0] * n
    for i in range(n):
        less = sum(1 for j in range(n) if values[j] < values[i])
        equal = sum(1 for j in range(n) if values[j] == values[i])
        ranks[i] = less + (equal + 1) / 2
    return ranks


def pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def spearman(a, b):
    return pearson(average_ranks(list(a)), average_ranks(list(b)))


def average_precision(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    total, hits = 0.0, 0
    for pos, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += sum(1 for j in order[:pos] if labels[j]) / pos
    return total / sum(1 for x in labels if x)


def nmi(c1, c2):
    n = len(c1)
    joint, pa, pb = {}, {}, {}
    for a, b in zip(c1, c2):
        joint[(a, b)] = joint.get((a, b), 0) + 1
        pa[a] = pa.get(a, 0) + 1
        pb[b] = pb.get(b, 0) + 1
    ha = -sum(c / n * math.log(c / n) for c in pa.values())
    hb = -sum(c / n * math.log(c / n) for c in pb.values())
    mi = sum(c / n * math.log((c / n) / (pa[a] / n * pb[b] / n)) for (a, b), c in joint.items())
    if ha + hb == 0:
        return 1.0
    return 2 * mi / (ha + hb)


def cluster_recall(selected, gt, clusters):
    relevant = {clusters[i] for i in range(len(gt)) if gt[i]}
    hit = {clusters[i] for i in selected if gt[i]}
    return len(hit) / len(relevant)


def summary_f1(selected, gt, clusters):
    if not selected:
        return 0.0
    p = sum(1 for i in selected if gt[i]) / len(selected)
    r = cluster_recall(selected, gt, clusters)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def split_half(scores):
    rhos = []
    for group in itertools.combinations(range(5), 2):
        rest = [r for r in range(5) if r not in group]
        a = [sum(scores[r][i] for r in group) / 2 for i in range(len(scores[0]))]
        b = [sum(scores[r][i] for r in rest) / 3 for i in range(len(scores[0]))]
        if len(set(a)) > 1 and len(set(b)) > 1:
            rhos.append(spearman(a, b))
    return rhos


def mean_pairwise_nmi(clusterings):
    m = len(clusterings)
    return [sum(nmi(clusterings[i], clusterings[j]) for j in range(m) if j != i) / (m - 1) for i in range(m)]


# -- relevance --------------------------------------------------------------


def matvec(feature, weight, bias):
    F, cols = len(weight), len(weight[0])
    out = []
    for c in range(cols):
        acc = bias[c]
        for f in range(F):
            acc += feature[f] * weight[f][c]
        out.append(acc)
    return out


def central_difference(f, arrays, step=1e-5):
    """Numerical gradient of scalar f(*arrays) with respect to each array."""
    grads = []
    for a_idx, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=float)
        for idx in np.ndindex(*a.shape):
            hi = [x.copy() for x in arrays]
            lo = [x.copy() for x in arrays]
            hi[a_idx][idx] += step
            lo[a_idx][idx] -= step
            g[idx] = (f(*hi) - f(*lo)) / (2 * step)
        grads.append(g)
    return grads
