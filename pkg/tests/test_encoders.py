import numpy as np
import pytest
import torch

from refvidseg.model.projection import SharedProjection
from refvidseg.model.text import ToyTextEncoder, Vocabulary, pad_token_batch
from refvidseg.model.video import ToyVideoEncoder, frames_to_clip

from gradcheck import central_difference_check

VOCAB = Vocabulary.build(["suction is idle", "bipolar forceps on the left", "a b c"])


def rand_clip(t, h, w, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(t, h, w, 3), dtype=np.uint8)


class TestVideoEncoder:
    def test_stride4_shape(self):
        enc = ToyVideoEncoder(fusion_stride=4).eval()
        fm = enc.encode_video_clip(rand_clip(3, 64, 64))
        assert fm.features.shape == (3, 16, 16, enc.feature_dim)
        assert fm.stride == 4

    @pytest.mark.parametrize("t", [1, 2, 3])
    @pytest.mark.parametrize("hw", [(32, 32), (37, 45), (64, 96), (360, 640)])
    def test_ceil_shape_contract(self, t, hw):
        h, w = hw
        enc = ToyVideoEncoder(pyramid_channels=(8, 8, 8), stem_channels=4, fusion_stride=16).eval()
        with torch.no_grad():
            fm = enc.encode_video_clip(rand_clip(t, h, w))
        assert fm.features.shape[:3] == (t, -(-h // 16), -(-w // 16))
        for stride, level in fm.pyramid.items():
            assert level.shape[-2:] == (-(-h // stride), -(-w // stride))

    def test_eval_determinism(self):
        enc = ToyVideoEncoder().eval()
        clip = rand_clip(3, 32, 48)
        with torch.no_grad():
            a = enc.encode_video_clip(clip).features
            b = enc.encode_video_clip(clip.copy()).features
        assert torch.equal(a, b)

    def test_reversed_clip_differs_with_temporal_mixing(self):
        enc = ToyVideoEncoder(temporal_mixing=True).eval()
        clip = rand_clip(3, 32, 48, seed=1)
        with torch.no_grad():
            fwd = enc.encode_video_clip(clip).features
            rev = enc.encode_video_clip(clip[::-1].copy()).features
        assert not torch.allclose(fwd, rev)

    def test_mixed_frame_sizes_rejected(self):
        frames = [np.zeros((32, 32, 3), dtype=np.uint8), np.zeros((32, 48, 3), dtype=np.uint8)]
        with pytest.raises(ValueError, match="mixed frame sizes"):
            frames_to_clip(frames)

    def test_gradient_check_tiny_config(self):
        torch.manual_seed(2)
        enc = ToyVideoEncoder(pyramid_channels=(2, 3, 4), stem_channels=2, fusion_stride=16).double()
        n_params = sum(p.numel() for p in enc.parameters())
        assert n_params <= 1000, n_params
        clip = torch.rand((1, 2, 3, 16, 16), dtype=torch.float64)
        probe = None

        def loss_fn(module):
            nonlocal probe
            out = module.forward_pyramid(module.normalize(clip))[16]
            if probe is None:
                probe = torch.randn_like(out)
            return (out * probe).sum()

        worst = central_difference_check(enc, loss_fn, step=1e-4, rel_tol=1e-3)
        assert worst < 1e-3


class TestTextEncoder:
    def test_per_word_shape(self):
        enc = ToyTextEncoder(VOCAB, dim=32).eval()
        with torch.no_grad():
            emb = enc.encode_text("suction is idle")
        assert emb.per_word.shape == (3, 32)
        assert emb.pooled.shape == (32,)

    def test_single_word_pooled_equals_row(self):
        enc = ToyTextEncoder(VOCAB, dim=32).eval()
        with torch.no_grad():
            emb = enc.encode_text("suction")
        torch.testing.assert_close(emb.pooled, emb.per_word[0])

    def test_empty_expression_rejected(self):
        enc = ToyTextEncoder(VOCAB, dim=32).eval()
        with pytest.raises(ValueError, match="empty"):
            enc.encode_text("...")

    def test_batched_pooling_ignores_padding(self):
        enc = ToyTextEncoder(VOCAB, dim=32).eval()
        ids, mask = pad_token_batch([VOCAB.encode("a b"), VOCAB.encode("a b c")])
        with torch.no_grad():
            per_word, pooled = enc(ids, mask)
            single = enc.encode_text("a b")
        torch.testing.assert_close(pooled[0], single.pooled, atol=1e-5, rtol=1e-5)
        torch.testing.assert_close(per_word[0, :2], single.per_word, atol=1e-5, rtol=1e-5)

    def test_gradient_check_tiny_config(self):
        torch.manual_seed(3)
        vocab = Vocabulary(["a", "b", "c"])
        enc = ToyTextEncoder(vocab, dim=4, num_layers=1, num_heads=1, ffn_dim=8, max_len=4).double()
        n_params = sum(p.numel() for p in enc.parameters())
        assert n_params <= 1000, n_params
        ids, mask = pad_token_batch([vocab.encode("a b c")])
        probe = None

        def loss_fn(module):
            nonlocal probe
            per_word, pooled = module(ids, mask)
            if probe is None:
                probe = torch.randn_like(per_word)
            return (per_word * probe).sum() + pooled.sum()

        worst = central_difference_check(enc, loss_fn, step=1e-4, rel_tol=1e-3)
        assert worst < 1e-3


class TestSharedProjection:
    def setup_method(self):
        torch.manual_seed(4)
        self.proj = SharedProjection({"video": 96, "text": 64, "instrument": 48}, shared_dim=128)

    def test_zero_input_gives_bias(self):
        out = self.proj(torch.zeros(64), "text")
        torch.testing.assert_close(out, self.proj.proj["text"].bias)

    def test_affinity(self):
        a, b = torch.randn(96), torch.randn(96)
        bias = self.proj.proj["video"].bias
        lhs = self.proj(a + b, "video")
        rhs = self.proj(a, "video") + self.proj(b, "video") - bias
        torch.testing.assert_close(lhs, rhs, atol=1e-5, rtol=1e-5)

    def test_output_dim_for_all_modalities(self):
        for modality, dim in (("video", 96), ("text", 64), ("instrument", 48)):
            out = self.proj(torch.randn(7, dim), modality)
            assert out.shape == (7, 128)

    def test_unregistered_modality(self):
        with pytest.raises(KeyError, match="unregistered"):
            self.proj(torch.zeros(3), "audio")
