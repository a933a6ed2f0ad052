"""Run-length codec for binary masks.

Masks are flattened row-major and stored as alternating run lengths,
always starting with a run of zeros (which may be empty). An all-zero
2x2 mask encodes to "4", an all-one 2x2 mask to "0 4".
"""

import numpy as np


def encode_rle(mask: np.ndarray) -> str:
    """Encode a 2-D binary mask into a run-length string."""
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=np.uint8).reshape(-1)
    if flat.size == 0:
        return ""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    runs = (ends - starts).tolist()
    if flat[0] != 0:
        runs.insert(0, 0)
    return " ".join(str(r) for r in runs)


def decode_rle(rle: str, height: int, width: int) -> np.ndarray:
    """Decode a run-length string back into an (height, width) uint8 mask."""
    if height < 1 or width < 1:
        raise ValueError(f"invalid mask shape ({height}, {width})")
    if rle.strip() == "":
        runs = []
    else:
        runs = [int(tok) for tok in rle.split()]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length in RLE string")
    total = sum(runs)
    if total != height * width:
        raise ValueError(
            f"RLE covers {total} cells, expected {height * width} for a "
            f"{height}x{width} mask"
        )
    values = np.arange(len(runs), dtype=np.uint8) % 2  # runs alternate 0,1,0,...
    flat = np.repeat(values, runs)
    return flat.reshape(height, width)
