"""Pure-Python (numpy) implementations of the environment hot loops.

Drop-in equivalents of the compiled ``_ckernels`` module; selected by
``coopmi.env.kernels`` when the extension is unavailable.
"""

import numpy as np

VIEW = 9
RADIUS = 4
WALL = 6
SELF = 1

# forward and right unit vectors, (drow, dcol), for N, E, S, W
FORWARD = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)], dtype=np.int64)
RIGHT = np.array([(0, 1), (1, 0), (0, -1), (-1, 0)], dtype=np.int64)

# Euclidean radius-2 disk without the centre
DISK = np.array(
    [(dr, dc) for dr in range(-2, 3) for dc in range(-2, 3) if 0 < dr * dr + dc * dc <= 4],
    dtype=np.int64,
)


def extract_views(codes, rows, cols, orients):
    """Egocentric 9x9 class-index windows, rotated so each agent faces up.

    ``codes`` is the global (H, W) class grid; out-of-map cells read as wall and
    each window's centre is overwritten with the self class.
    """
    codes = np.asarray(codes, dtype=np.uint8)
    padded = np.pad(codes, RADIUS, constant_values=WALL)
    out = np.empty((len(rows), VIEW, VIEW), dtype=np.uint8)
    for k, (r, c, o) in enumerate(zip(rows, cols, orients)):
        win = padded[r:r + VIEW, c:c + VIEW]
        # np.rot90 turns counter-clockwise; an agent facing E needs its window turned CCW once
        out[k] = np.rot90(win, k=int(o))
        out[k, RADIUS, RADIUS] = SELF
    return out


def neighbor_counts(apples):
    """Number of present apples within Euclidean distance 2 of every cell."""
    a = np.asarray(apples, dtype=np.int64)
    h, w = a.shape
    padded = np.pad(a, 2)
    out = np.zeros((h, w), dtype=np.int64)
    for dr, dc in DISK:
        out += padded[2 + dr:2 + dr + h, 2 + dc:2 + dc + w]
    return out


def trace_beam(walls, r, c, o):
    """Cells swept by a beam fired from (r, c) facing ``o``, stopping at walls or range 4."""
    h, w = walls.shape
    dr, dc = FORWARD[o]
    cells = []
    for step in range(1, RADIUS + 1):
        rr, cc = r + step * dr, c + step * dc
        if rr < 0 or cc < 0 or rr >= h or cc >= w or walls[rr, cc]:
            break
        cells.append((int(rr), int(cc)))
    return cells
