import numpy as np
import pytest
import torch

from fdpn.config import RunConfig
from fdpn.datamodel import SyntheticSpec, expand_ground_truth, synthesize
from fdpn.errors import ShapeError
from fdpn.fps import FramePredictor, fuse_features, predict_frames
from fdpn.losses import binary_focal_loss
from fdpn.pipeline import prepare_video


def _random_head(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.head.weight.copy_(torch.randn(model.head.weight.shape, generator=g))
    return model


class TestFuse:
    def test_n1_is_plain_concat(self):
        frame, snippet = torch.randn(2, 3, 1, 4), torch.randn(2, 3, 5)
        fused = fuse_features(frame, snippet)
        assert torch.equal(fused[:, :, 0], torch.cat([frame[:, :, 0], snippet], dim=-1))

    def test_zero_snippet(self):
        frame = torch.randn(2, 3, 4, 6)
        fused = fuse_features(frame, torch.zeros(2, 3, 5))
        assert torch.all(fused[..., 6:] == 0) and torch.equal(fused[..., :6], frame)

    def test_slice_check(self):
        rng = np.random.default_rng(0)
        frame, snippet = torch.randn(3, 4, 5, 6), torch.randn(3, 4, 7)
        fused = fuse_features(frame, snippet)
        assert fused.shape == (3, 4, 5, 13)
        for _ in range(30):
            b, t, n = rng.integers(3), rng.integers(4), rng.integers(5)
            assert torch.equal(fused[b, t, n, 6:], snippet[b, t])
            assert torch.equal(fused[b, t, n, :6], frame[b, t, n])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            fuse_features(torch.randn(2, 3, 4, 6), torch.randn(2, 2, 5))
        with pytest.raises(ShapeError):
            fuse_features(torch.randn(2, 3, 4, 6), torch.randn(1, 3, 5))


class TestPredictor:
    def test_zero_head_is_half(self):
        out = predict_frames(torch.randn(2, 3, 4, 8), FramePredictor(8, seed=1))
        assert out.shape == (2, 3, 4) and torch.all(out == 0.5)

    def test_output_range_on_extreme_inputs(self):
        model = _random_head(FramePredictor(8, seed=2), 1)
        for scale in (1e-3, 1.0, 1e3, 1e6):
            out = predict_frames(scale * torch.randn(2, 4, 4, 8), model)
            assert torch.isfinite(out).all() and out.min() >= 0 and out.max() <= 1

    def test_shift_equivariance(self):
        model = _random_head(FramePredictor(6, seed=3), 2).double()
        x = torch.randn(1, 1, 41, 6, dtype=torch.float64)
        shifted = torch.roll(x, 1, dims=2)
        with torch.no_grad():
            a, b = model(x)[0, 0], model(shifted)[0, 0]
        r = model.backbone.receptive_radius
        interior = slice(r + 1, 41 - r - 1)
        torch.testing.assert_close(b[interior.start + 1:interior.stop + 1], a[interior], rtol=0, atol=1e-12)

    def test_mixing_across_snippet_boundary(self):
        model = _random_head(FramePredictor(6, seed=4), 3)
        x = torch.zeros(1, 4, 8, 6)
        x[0, 1, 7] = torch.randn(6)  # last frame of snippet 1
        x.requires_grad_(True)
        out = model(x).reshape(-1)
        touched = 0
        for j in range(out.numel()):
            (grad,) = torch.autograd.grad(out[j], x, retain_graph=True)
            touched += bool(grad[0, 1, 7].abs().sum() > 0)
        width = 2 * model.backbone.receptive_radius + 1
        assert touched >= width
        # frames in snippet 2 react to the perturbed frame in snippet 1
        (grad,) = torch.autograd.grad(out[2 * 8], x)
        assert grad[0, 1, 7].abs().sum() > 0


def test_overfit_single_video():
    spec = SyntheticSpec(num_videos=4, num_test=2, frame_count=128, anomaly_duration_range=(24, 24), seed=11)
    samples, _, frames = synthesize(spec)
    sample = next(s for s in samples if s.split == "test" and s.is_abnormal)
    cfg = RunConfig(T=8, N=16)
    v = prepare_video(sample, frames[sample.video_id], cfg)
    labels = torch.from_numpy(expand_ground_truth(sample).labels.astype(np.float32)).reshape(1, 8, 16)
    fused = fuse_features(torch.from_numpy(v.frame)[None], torch.from_numpy(v.snippet)[None])
    torch.manual_seed(0)
    model = FramePredictor(fused.shape[-1], seed=0)
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    for _ in range(300):
        loss = binary_focal_loss(labels, model(fused), gamma=2.0, eps=1e-7)
        opt.zero_grad()
        loss.backward()
        opt.step()
    scores = predict_frames(fused, model)
    assert scores[labels == 1].min() >= 0.9
    assert scores[labels == 0].max() <= 0.1
