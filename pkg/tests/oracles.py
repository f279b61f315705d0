"""Brute-force reference implementations, written for clarity over speed."""
import math


def ece_oracle(conf, hit, bins):
    """Literal definition: sort, cut into near-equal chunks, weight gaps."""
    conf, hit = list(conf), list(hit)
    idx = sorted(range(len(conf)), key=lambda i: conf[i])
    n = len(idx)
    size, extra = divmod(n, bins)
    out, pos = 0.0, 0
    for b in range(bins):
        take = size + (1 if b < extra else 0)
        chunk = idx[pos:pos + take]
        pos += take
        if chunk:
            gap = sum(conf[i] for i in chunk) / len(chunk) - sum(hit[i] for i in chunk) / len(chunk)
            out += len(chunk) * abs(gap)
    return out / n


def auroc_oracle(norms, correct):
    pos = [s for s, c in zip(norms, correct) if c]
    neg = [s for s, c in zip(norms, correct) if not c]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def map_oracle(dist, labels):
    scores = []
    for q in range(len(labels)):
        r = sum(1 for l in labels if l == labels[q]) - 1
        if r < 1:
            continue
        others = sorted((dist[q][j], j) for j in range(len(labels)) if j != q)
        hits, total = 0, 0.0
        for k, (_, j) in enumerate(others[:r], start=1):
            if labels[j] == labels[q]:
                hits += 1
                total += hits / k
        scores.append(total / r)
    return sum(scores) / len(scores) if scores else math.nan
