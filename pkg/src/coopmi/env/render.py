"""Frame rendering of the global state for inspection (ANSI text or PNG)."""

import numpy as np

from .commons import APPLE, BEAM, EMPTY, OTHER, SELF, SIGHT, WALL, global_codes

# colours follow the usual palette: own agent blue, others red, apple green,
# beam yellow, sight dark gray, wall light gray
PALETTE = {
    EMPTY: (0, 0, 0),
    SELF: (40, 90, 230),
    OTHER: (220, 40, 40),
    APPLE: (40, 200, 60),
    BEAM: (240, 220, 40),
    SIGHT: (70, 70, 70),
    WALL: (180, 180, 180),
}
_ANSI = {EMPTY: "  ", OTHER: "\x1b[41m  ", APPLE: "\x1b[42m  ", BEAM: "\x1b[43m  ",
         SIGHT: "\x1b[100m  ", WALL: "\x1b[47m  ", SELF: "\x1b[44m  "}
_RESET = "\x1b[0m"


def frame_codes(state):
    return global_codes(state)


def to_ansi(state) -> str:
    codes = global_codes(state)
    lines = []
    for row in codes:
        lines.append("".join(_ANSI[int(c)] + _RESET for c in row))
    lines.append(f"t={state.t} apples={state.apple_count()} "
                 f"out={sum(1 for a in state.agents if not a.active)}")
    return "\n".join(lines)


def to_rgb(state, scale=16) -> np.ndarray:
    codes = global_codes(state)
    lut = np.array([PALETTE[i] for i in range(7)], dtype=np.uint8)
    img = lut[codes]
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


def save_png(state, path, scale=16):
    from PIL import Image

    Image.fromarray(to_rgb(state, scale)).save(path)
