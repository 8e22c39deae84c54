import numpy as np
import pytest
import torch

from fdpn.dps import DirectionPredictor, ablate, direction_features, pool_frames, predict_direction, refine
from fdpn.saliency import direction_saliency


def _model(channels=6, seed=0, random_head=True, fusion="product"):
    model = DirectionPredictor(channels, seed=seed, fusion=fusion).double()
    if random_head:
        g = torch.Generator().manual_seed(seed + 100)
        with torch.no_grad():
            model.head.weight.copy_(torch.randn(model.head.weight.shape, generator=g, dtype=torch.float64))
    return model


def _inputs(seed=0, B=2, T=3, N=4, C=6):
    g = torch.Generator().manual_seed(seed)
    f = torch.randn(B, T, N, C, generator=g, dtype=torch.float64)
    sal = torch.softmax(torch.randn(B, T, N, 3, generator=g, dtype=torch.float64), dim=-1)
    return f, sal


def test_uniform_saliency_zero_head():
    f, _ = _inputs()
    out = predict_direction(_model(random_head=False), f, torch.full((2, 3, 4, 3), 1 / 3, dtype=torch.float64))
    torch.testing.assert_close(out, torch.full((2, 3), 1 / 3, dtype=torch.float64))


def test_refine_example():
    net = torch.full((3,), 1 / 3, dtype=torch.float64)
    out = refine(net, torch.tensor([0.6, 0.2, 0.2], dtype=torch.float64))
    torch.testing.assert_close(out, torch.tensor([0.6, 0.2, 0.2], dtype=torch.float64))


def test_uniform_refinement_is_identity():
    net = torch.softmax(torch.randn(50, 3, dtype=torch.float64), dim=-1)
    out = refine(net, torch.full((50, 3), 1 / 3, dtype=torch.float64))
    assert (out - net).abs().max() < 1e-9


def test_network_only_equals_uniform_injection():
    f, sal = _inputs(1)
    model = _model(seed=1)
    uniform = torch.full_like(sal, 1 / 3)
    torch.testing.assert_close(ablate(model, "network_only", f, sal), predict_direction(model, f, uniform),
                               rtol=0, atol=1e-12)


def test_saliency_only_dominance():
    f, _ = _inputs(2)
    sal = torch.zeros(2, 3, 4, 3, dtype=torch.float64)
    sal[..., 2] = 0.9
    sal[..., :2] = 0.05
    out = ablate(_model(seed=2), "saliency_only", f, sal)
    assert out.argmax(dim=-1).tolist() == [2, 2]


def test_output_is_distribution():
    for mode in ("network_only", "saliency_only", "combined"):
        f, sal = _inputs(3)
        out = ablate(_model(seed=3), mode, f, sal)
        assert torch.all(out >= 0)
        torch.testing.assert_close(out.sum(-1), torch.ones(2, dtype=torch.float64), rtol=0, atol=1e-6)


def test_additive_shift_of_third_sums_leaves_output_unchanged():
    heat = np.random.default_rng(4).random((2 * 3 * 4, 6, 9))
    shifted = heat.copy()
    shifted[:, 0, :] += 5.0 / 3.0  # adds 5 to every third's sum (each third spans 3 columns)
    sal_a = torch.from_numpy(direction_saliency(heat).reshape(2, 3, 4, 3))
    sal_b = torch.from_numpy(direction_saliency(shifted).reshape(2, 3, 4, 3))
    f, _ = _inputs(4)
    model = _model(seed=4)
    torch.testing.assert_close(predict_direction(model, f, sal_a), predict_direction(model, f, sal_b),
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("fusion", ["product", "mixture"])
def test_class_permutation_equivariance(fusion):
    f, sal = _inputs(5)
    model = _model(seed=5, fusion=fusion)
    perm = [2, 0, 1]
    permuted = _model(seed=5, fusion=fusion)
    with torch.no_grad():
        permuted.head.weight.copy_(model.head.weight[perm])
        permuted.head.bias.copy_(model.head.bias[perm])
    base = predict_direction(model, f, sal)
    torch.testing.assert_close(predict_direction(permuted, f, sal[..., perm]), base[:, perm], rtol=0, atol=1e-12)


def test_invalid_mode_and_fusion():
    f, sal = _inputs()
    with pytest.raises(ValueError):
        ablate(_model(), "both", f, sal)
    with pytest.raises(ValueError):
        DirectionPredictor(4, fusion="max")
    with pytest.raises(ValueError):
        refine(sal, sal, "max")


def test_pool_frames_weights():
    probs = torch.tensor([[[[1.0, 0, 0], [0, 1.0, 0]]]])
    torch.testing.assert_close(pool_frames(probs), torch.tensor([[0.5, 0.5, 0.0]]))
    torch.testing.assert_close(pool_frames(probs, torch.tensor([[[3.0, 1.0]]])), torch.tensor([[0.75, 0.25, 0.0]]))
    torch.testing.assert_close(pool_frames(probs, torch.tensor([[[0.0, 2.0]]])), torch.tensor([[0.0, 1.0, 0.0]]))


def test_direction_features_use_raw_snippet():
    frame, snippet = torch.randn(1, 2, 3, 4), torch.randn(1, 2, 5)
    out = direction_features(frame, snippet)
    assert out.shape == (1, 2, 3, 9) and torch.equal(out[0, 1, 2, 4:], snippet[0, 1])
