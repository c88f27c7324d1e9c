"""Hand-enumerated J/F cases shared by the unit and acceptance suites.

Each value was worked out by counting pixels on paper; the comment next to
a case shows the count.
"""
import numpy as np


def box(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), bool)
    m[r0:r1, c0:c1] = True
    return m


def _cases():
    sq = box(20, 20, 2, 6, 2, 6)
    ring_center = box(9, 9, 4, 5, 4, 5)
    yield "identical", sq, sq, 0, 1.0, 1.0
    yield "disjoint", box(20, 20, 0, 3, 0, 3), box(20, 20, 10, 13, 10, 13), 1, 0.0, 0.0
    yield "both_empty", np.zeros((5, 5), bool), np.zeros((5, 5), bool), 1, 1.0, 1.0
    yield "pred_empty", np.zeros((20, 20), bool), sq, 1, 0.0, 0.0
    # 2x2 inside a 2x4 strip: J = 4/8; every pixel of both is boundary, P = 1, R = 4/8
    yield "contained", box(10, 10, 2, 4, 2, 4), box(10, 10, 2, 4, 2, 6), 0, 0.5, 2 / 3
    # 10x10 shifted by 5 columns: overlap 50, union 150; 36 boundary px each,
    # shared are rows 5 and 14 over cols 10..14, so P = R = 10/36
    yield "shift5", box(30, 30, 5, 15, 5, 15), box(30, 30, 5, 15, 10, 20), 0, 1 / 3, 10 / 36
    # 4x4 shifted by 1 column: overlap 12, union 20; 12 boundary px each, 6 shared at tol 0
    yield "shift1_tol0", box(20, 20, 2, 6, 3, 7), sq, 0, 0.6, 0.5
    yield "shift1_tol1", box(20, 20, 2, 6, 3, 7), sq, 1, 0.6, 1.0
    # centre pixel vs 3x3 square, tol 1: P = 1, R = 4/8 (corners are sqrt2 away)
    yield "center_vs_ring", ring_center, box(9, 9, 3, 6, 3, 6), 1, 1 / 9, 2 / 3
    # adjacent single pixels: no overlap, boundaries within 1 px
    yield "adjacent_pixels", box(6, 6, 2, 3, 2, 3), box(6, 6, 2, 3, 3, 4), 1, 0.0, 1.0
    # top half vs the full 4x4 frame: border counts as outside, so gt boundary = 12 border px;
    # pred boundary = all 8 px; shared = row 0 (4) + (1,0) + (1,3) = 6 -> P=.75, R=.5
    yield "image_border", box(4, 4, 0, 2, 0, 4), np.ones((4, 4), bool), 0, 0.5, 0.6


CASES = list(_cases())


def brute_boundary(m):
    h, w = m.shape
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            if not m[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or not m[yy, xx]:
                    out[y, x] = True
    return out


def brute_f(pred, gt, tol):
    """Loop-based boundary F used as an independent oracle."""
    bp, bg = brute_boundary(pred), brute_boundary(gt)
    P, G = list(zip(*np.nonzero(bp))), list(zip(*np.nonzero(bg)))
    if not P and not G:
        return 1.0
    if not P or not G:
        return 0.0

    def near(a, pts):
        return any((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 <= tol * tol for b in pts)

    prec = sum(near(a, G) for a in P) / len(P)
    rec = sum(near(b, P) for b in G) / len(G)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def brute_j(pred, gt):
    inter = sum(1 for a, b in zip(pred.ravel(), gt.ravel()) if a and b)
    union = sum(1 for a, b in zip(pred.ravel(), gt.ravel()) if a or b)
    return 1.0 if union == 0 else inter / union
