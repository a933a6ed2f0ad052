import json

import pytest

from refvidseg.data import (
    DatasetError,
    ReferringSample,
    clip_windows,
    dataset_stats,
    load_dataset,
    split_endovis,
)

from conftest import tiny_manifest


def sample_over(n_frames):
    return ReferringSample(
        sample_id="s",
        video_id="v",
        expression="x",
        target_instance_id="i",
        frame_range=(0, n_frames - 1),
    )


class TestClipWindows:
    def test_seven_frames_window_three(self):
        windows = clip_windows(sample_over(7), list(range(7)), 3)
        assert [w.frame_ids for w in windows] == [(0, 1, 2), (3, 4, 5), (6, 6, 6)]
        assert [w.num_padded for w in windows] == [0, 0, 2]
        assert windows[2].padded_flags == (False, True, True)

    def test_exact_fit(self):
        windows = clip_windows(sample_over(3), list(range(3)), 3)
        assert len(windows) == 1 and windows[0].num_padded == 0

    def test_single_frame(self):
        windows = clip_windows(sample_over(1), [0], 3)
        assert windows[0].frame_ids == (0, 0, 0)
        assert windows[0].num_padded == 2

    def test_no_frames_is_error(self):
        with pytest.raises(ValueError, match="covers no frames"):
            clip_windows(sample_over(1), [5, 6], 3)

    def test_bad_window(self):
        with pytest.raises(ValueError, match="window"):
            clip_windows(sample_over(3), [0, 1, 2], 0)


class TestStats:
    def test_fixture_counts(self, manifest_dir):
        report = dataset_stats(load_dataset(manifest_dir))
        assert report.pair_count == 2
        assert report.word_min == 4 and report.word_max == 4
        assert report.word_freq["grasper"] == 2

    def test_single_three_word_sample(self, tmp_path):
        manifest = tiny_manifest()
        manifest["samples"] = manifest["samples"][:1]
        manifest["samples"][0]["expression"] = "Suction is idle"
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        report = dataset_stats(load_dataset(tmp_path))
        assert report.pair_count == 1
        assert report.word_min == report.word_max == 3

    def test_empty_index(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps({"format_version": 1, "dataset_name": "d", "videos": [], "samples": []})
        )
        report = dataset_stats(load_dataset(tmp_path))
        assert report.pair_count == 0 and report.word_min == 0 and report.word_max == 0


def multiseq_manifest(sequences):
    base = tiny_manifest()
    video_template = base["videos"][0]
    sample_template = base["samples"][0]
    videos, samples = [], []
    for seq in sequences:
        video = json.loads(json.dumps(video_template))
        video["video_id"] = f"seq{seq}"
        video["sequence_number"] = seq
        videos.append(video)
        sample = dict(sample_template)
        sample["sample_id"] = f"seq{seq}_s0"
        sample["video_id"] = f"seq{seq}"
        samples.append(sample)
    return {"format_version": 1, "dataset_name": "d", "videos": videos, "samples": samples}


class TestSplit:
    def load(self, tmp_path, sequences):
        (tmp_path / "manifest.json").write_text(json.dumps(multiseq_manifest(sequences)))
        return load_dataset(tmp_path)

    def test_rs17_split_counts(self, tmp_path):
        index = self.load(tmp_path, list(range(1, 16)))
        train, val = split_endovis(index, "rs17")
        assert sorted(v.sequence_number for v in val.videos) == [8, 9, 10, 11, 12, 13]
        assert len(train.videos) == 9
        train_ids = {v.video_id for v in train.videos}
        val_ids = {v.video_id for v in val.videos}
        assert train_ids.isdisjoint(val_ids)
        assert train_ids | val_ids == {v.video_id for v in index.videos}

    def test_rs18_full(self, tmp_path):
        index = self.load(tmp_path, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 14, 15])
        train, val = split_endovis(index, "rs18")
        assert sorted(v.sequence_number for v in val.videos) == [2, 5, 9, 15]
        assert len(train.videos) == 10
        assert all(s.video_id in {v.video_id for v in val.videos} for s in val.samples)

    def test_missing_sequence_errors(self, tmp_path):
        index = self.load(tmp_path, [1, 2, 3, 4, 6, 9, 15])
        with pytest.raises(DatasetError, match=r"\[5\]"):
            split_endovis(index, "rs18")

    def test_unknown_dataset(self, tmp_path):
        index = self.load(tmp_path, [1])
        with pytest.raises(DatasetError, match="unknown dataset"):
            split_endovis(index, "rs99")
