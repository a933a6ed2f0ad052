import json

import numpy as np
import pytest
import torch
from PIL import Image

from refvidseg.data import SyntheticConfig, generate_synthetic
from refvidseg.model.instruments import (
    Detection,
    ExternalProvider,
    GroundTruthProvider,
    InstrumentEmbedding,
    ThresholdProvider,
    ToyPatchEncoder,
    assign_track_keys,
    bbox_iou,
    build_instrument_graph,
    cap_detections,
    crop_resize,
    detect,
)


@pytest.fixture(scope="module")
def synth_index(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return generate_synthetic(SyntheticConfig(seed=21, num_clips=3, objects_per_clip=(3, 3)), root)


class TestProviders:
    def test_ground_truth_passthrough(self, synth_index):
        video = synth_index.videos[0]
        dets = detect(0, None, GroundTruthProvider(video))
        assert len(dets) == len(video.instruments)
        assert all(d.confidence == 1.0 and d.source == "gt" for d in dets)

    def test_threshold_blank_canvas(self):
        blank = np.zeros((64, 96, 3), dtype=np.uint8)
        assert detect(0, blank, ThresholdProvider()) == []

    def test_threshold_matches_ground_truth_boxes(self, synth_index):
        video = synth_index.videos[0]
        frame = video.frames[0]
        image = np.asarray(Image.open(synth_index.root / frame.image_path))
        dets = detect(0, image, ThresholdProvider())
        gt = detect(0, None, GroundTruthProvider(video))
        gt = [d for d in gt if d.frame_id == 0]
        assert len(dets) == 3
        for det, ref in zip(dets, gt):  # both sorted by x_min
            assert bbox_iou(det.bbox, ref.bbox) > 0.9

    def test_external_sidecar(self, tmp_path):
        sidecar = tmp_path / "dets.json"
        sidecar.write_text(json.dumps({"0": [{"bbox": [1, 2, 5, 6], "confidence": 0.75}]}))
        dets = detect(0, None, ExternalProvider(sidecar))
        assert dets == [Detection(0, (1, 2, 5, 6), 0.75, "detector")]

    def test_external_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExternalProvider(tmp_path / "absent.json")

    def test_cap_keeps_highest_confidence(self):
        dets = [
            Detection(0, (0, 0, 2, 2), 0.3, "detector"),
            Detection(0, (4, 0, 6, 2), 0.9, "detector"),
            Detection(0, (8, 0, 10, 2), 0.5, "detector"),
        ]
        kept = cap_detections(dets, 2)
        assert [d.confidence for d in kept] == [0.9, 0.5]


class TestCropResize:
    def test_uniform_region(self):
        frame = np.full((40, 40, 3), 128, dtype=np.uint8)
        patch = crop_resize(frame, (5, 5, 20, 20))
        assert patch.shape == (3, 224, 224)
        assert torch.allclose(patch, torch.full_like(patch, 128 / 255.0))

    def test_224_bbox_roundtrip(self):
        rng = np.random.default_rng(0)
        frame = rng.integers(0, 256, size=(300, 300, 3), dtype=np.uint8)
        patch = crop_resize(frame, (10, 20, 234, 244))
        expected = torch.as_tensor(frame[20:244, 10:234]).permute(2, 0, 1).float() / 255.0
        torch.testing.assert_close(patch, expected, atol=1e-6, rtol=0)

    def test_shape_sweep(self):
        rng = np.random.default_rng(1)
        frame = rng.integers(0, 256, size=(100, 120, 3), dtype=np.uint8)
        for _ in range(10):
            x0 = int(rng.integers(0, 100))
            y0 = int(rng.integers(0, 80))
            bbox = (x0, y0, x0 + int(rng.integers(1, 20)), y0 + int(rng.integers(1, 20)))
            assert crop_resize(frame, bbox).shape == (3, 224, 224)

    def test_zero_area_rejected(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="zero-area"):
            crop_resize(frame, (3, 3, 3, 8))

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        content = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
        frame_a = np.zeros((64, 64, 3), dtype=np.uint8)
        frame_b = np.zeros((64, 64, 3), dtype=np.uint8)
        frame_a[4:24, 6:26] = content
        frame_b[24:44, 30:50] = content
        patch_a = crop_resize(frame_a, (6, 4, 26, 24))
        patch_b = crop_resize(frame_b, (30, 24, 50, 44))
        torch.testing.assert_close(patch_a, patch_b)


class TestEmbedding:
    def test_empty_input(self):
        enc = ToyPatchEncoder().eval()
        out = enc(torch.zeros((0, 3, 224, 224)))
        assert out.shape == (0, enc.out_dim)

    def test_identical_patches_identical_vectors(self):
        enc = ToyPatchEncoder().eval()
        patch = torch.rand((1, 3, 224, 224))
        with torch.no_grad():
            out = enc(torch.cat([patch, patch]))
        assert torch.equal(out[0], out[1])


class TestGraph:
    def make_embedding(self, frame_id, x_min, key=0):
        return InstrumentEmbedding(
            vector=torch.randn(8), frame_id=frame_id, bbox=(x_min, 0, x_min + 4, 4), track_key=key
        )

    def test_empty(self):
        graph = build_instrument_graph([])
        assert len(graph) == 0

    def test_node_count(self):
        graph = build_instrument_graph([self.make_embedding(0, i * 5) for i in range(4)])
        assert len(graph) == 4
        assert graph.feature_matrix().shape == (4, 8)

    def test_order_by_frame_then_x(self):
        nodes = [
            self.make_embedding(1, 10),
            self.make_embedding(0, 30),
            self.make_embedding(0, 5),
            self.make_embedding(1, 2),
        ]
        graph = build_instrument_graph(nodes)
        order = [(n.frame_id, n.bbox[0]) for n in graph.nodes]
        assert order == [(0, 5), (0, 30), (1, 2), (1, 10)]


class TestTracking:
    def test_stable_keys_across_frames(self):
        frames = [
            [Detection(0, (0, 0, 10, 10), 1.0, "gt"), Detection(0, (20, 0, 30, 10), 1.0, "gt")],
            [Detection(1, (1, 0, 11, 10), 1.0, "gt"), Detection(1, (21, 0, 31, 10), 1.0, "gt")],
            [Detection(2, (2, 0, 12, 10), 1.0, "gt"), Detection(2, (22, 0, 32, 10), 1.0, "gt")],
        ]
        keys = assign_track_keys(frames)
        assert keys[0] == [0, 1]
        assert keys[1] == [0, 1]
        assert keys[2] == [0, 1]

    def test_new_track_on_low_iou(self):
        frames = [
            [Detection(0, (0, 0, 10, 10), 1.0, "gt")],
            [Detection(1, (50, 50, 60, 60), 1.0, "gt")],
        ]
        keys = assign_track_keys(frames)
        assert keys == [[0], [1]]
