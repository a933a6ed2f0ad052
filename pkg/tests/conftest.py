import json

import numpy as np
import pytest

from refvidseg.data import encode_rle


def square_mask(h, w, y0, x0, side):
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[y0 : y0 + side, x0 : x0 + side] = 1
    return mask


def mask_entry(mask):
    ys, xs = np.nonzero(mask)
    bbox = [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1]
    return {"bbox": bbox, "rle": encode_rle(mask)}


def tiny_manifest(h=8, w=8):
    """One 3-frame video, two instruments, two samples."""
    inst_a = {str(t): mask_entry(square_mask(h, w, 1, 1, 3)) for t in range(3)}
    inst_b = {str(t): mask_entry(square_mask(h, w, 4, 4, 3)) for t in range(3)}
    return {
        "format_version": 1,
        "dataset_name": "fixture",
        "videos": [
            {
                "video_id": "vid0",
                "sequence_number": 1,
                "frames": [
                    {"frame_id": t, "image_path": f"vid0/f{t}.png", "height": h, "width": w}
                    for t in range(3)
                ],
                "instruments": [
                    {"instance_id": "a", "category": "left grasper", "per_frame": inst_a},
                    {"instance_id": "b", "category": "right grasper", "per_frame": inst_b},
                ],
            }
        ],
        "samples": [
            {
                "sample_id": "s0",
                "video_id": "vid0",
                "expression": "grasper on the left",
                "target_instance_id": "a",
                "frame_range": [0, 2],
            },
            {
                "sample_id": "s1",
                "video_id": "vid0",
                "expression": "grasper on the right",
                "target_instance_id": "b",
                "frame_range": [0, 2],
            },
        ],
    }


@pytest.fixture
def manifest_dir(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps(tiny_manifest()))
    return tmp_path
