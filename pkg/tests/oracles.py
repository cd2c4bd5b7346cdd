"""Brute-force reference implementations used as independent test oracles."""

import itertools
import math

import numpy as np


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences (x is copied)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-12):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def auc_pairs(scores, labels):
    """P(pos > neg) + 0.5 P(tie) by looping over every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def kendall_pairs(a, b):
    """Tau-b from explicit pair counting; 0 when either side is entirely tied."""
    n = len(a)
    conc = disc = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = (a[i] > a[j]) - (a[i] < a[j])
            db = (b[i] > b[j]) - (b[i] < b[j])
            if da == 0:
                ties_a += 1
            if db == 0:
                ties_b += 1
            if da * db > 0:
                conc += 1
            elif da * db < 0:
                disc += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    return 0.0 if denom == 0 else (conc - disc) / denom


def isotonic_bruteforce(y, w):
    """Weighted isotonic regression by trying every contiguous block partition.

    Each block takes its weighted mean; among partitions whose block means are
    nondecreasing, the one with the least weighted squared error is returned.
    Positive weights only.
    """
    n = len(y)
    y, w = np.asarray(y, float), np.asarray(w, float)
    best, best_x = math.inf, None
    for cuts in itertools.product((0, 1), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [np.dot(w[a:b], y[a:b]) / w[a:b].sum() for a, b in zip(bounds, bounds[1:])]
        if any(m2 < m1 for m1, m2 in zip(means, means[1:])):
            continue
        x = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(bounds, bounds[1:]), means)])
        sse = float(np.dot(w, (y - x) ** 2))
        if sse < best - 1e-15:
            best, best_x = sse, x
    return best_x


def civil_from_seconds(t):
    """(year, month 1-12, day, weekday 0=Monday, hour) from epoch seconds, by day arithmetic.

    Uses the days-from-civil inversion on the proleptic Gregorian calendar.
    """
    days, rem = divmod(int(t), 86400)
    hour = rem // 3600
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    z = days + 719468
    era = z // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    d = doy - (153 * mp + 2) // 5 + 1
    m = mp + 3 if mp < 10 else mp - 9
    return (y + (m <= 2), m, d, weekday, hour)


def _days_from_civil(y, m, d):
    y -= m <= 2
    era = y // 400
    yoe = y - era * 400
    mp = m - 3 if m > 2 else m + 9
    doy = (153 * mp + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def iso_week(t):
    """ISO-8601 week number (1..53) by counting weeks from the week-1 Monday."""
    y, m, d, wd, _ = civil_from_seconds(t)
    days = _days_from_civil(y, m, d)

    def week1_monday(year):
        jan4 = _days_from_civil(year, 1, 4)
        return jan4 - (jan4 + 3) % 7

    start = week1_monday(y)
    if days < start:
        start = week1_monday(y - 1)
    elif days >= week1_monday(y + 1):
        start = week1_monday(y + 1)
    return (days - start) // 7 + 1


def expected_reinforce_direction(p_fn, theta, rewards, baseline, h=1e-6):
    """Gradient of sum_k p_k(theta) (r_k - b) by central differences."""
    return central_difference(lambda t: float(np.dot(p_fn(t), rewards - baseline)), theta, h)
