import numpy as np
import pytest
import torch

from posegan.conditioning import pose_features
from posegan.networks import (Discriminator, DiscriminatorConfig, Generator,
                              GeneratorConfig, conv_parameter_count, heatmap_pyramid,
                              image_to_uint8, load_checkpoint, save_checkpoint)
from posegan.pose import K, Pose

TOY_G = dict(output_resolution=16, channel_base=256, channel_max=32, w_dim=32,
             z_dim=16, mapping_depth=2)
TOY_D = dict(input_resolution=16, channel_base=256, channel_max=32, w_dim=32,
             cmap_dim=32, mapping_depth=2)


def make_pose(seed, ref=16):
    rng = np.random.default_rng(seed)
    return Pose(keypoints=rng.uniform(0, ref, (K, 2)),
                visibility=np.ones(K, dtype=bool), reference_resolution=ref)


@pytest.fixture(scope="module")
def toy_g():
    torch.manual_seed(0)
    return Generator(GeneratorConfig(**TOY_G))


@pytest.fixture(scope="module")
def toy_d():
    torch.manual_seed(1)
    return Discriminator(DiscriminatorConfig(**TOY_D))


class TestGenerate:
    def test_output_shape_and_range_contract(self, toy_g):
        poses = [make_pose(0), make_pose(1)]
        heat = heatmap_pyramid(poses, toy_g.cfg.scales)
        img = toy_g(torch.randn(2, 16), pose_features(poses), heat)
        assert img.shape == (2, 3, 16, 16)

    def test_heatmaps_causally_affect_output(self, toy_g):
        pose = make_pose(2)
        w = toy_g.mapping(torch.randn(1, 16), pose_features(pose))
        with_person = toy_g.synthesis(w, heatmap_pyramid([pose], toy_g.cfg.scales))
        without = toy_g.synthesis(w, heatmap_pyramid([pose], toy_g.cfg.scales, zero=True))
        assert (with_person - without).abs().max() > 0

    def test_deterministic_forward(self, toy_g):
        pose = make_pose(3)
        z = torch.randn(1, 16)
        heat = heatmap_pyramid([pose], toy_g.cfg.scales)
        a = toy_g(z, pose_features(pose), heat)
        b = toy_g(z, pose_features(pose), heat)
        assert (a == b).all()

    def test_gradient_wrt_w_matches_finite_difference(self):
        torch.manual_seed(4)
        g = Generator(GeneratorConfig(**TOY_G)).double()
        pose = make_pose(4)
        heat = [h.double() for h in heatmap_pyramid([pose], g.cfg.scales)]
        w = torch.randn(1, 32, dtype=torch.float64, requires_grad=True)
        pix = g.synthesis(w, heat)[0, 0, 3, 5]
        (grad,) = torch.autograd.grad(pix, w)
        assert torch.isfinite(grad).all() and grad.abs().max() > 0
        eps = 1e-6
        for j in [0, 7, 19]:
            wp = w.detach().clone()
            wp[0, j] += eps
            wm = w.detach().clone()
            wm[0, j] -= eps
            fd = (g.synthesis(wp, heat)[0, 0, 3, 5] - g.synthesis(wm, heat)[0, 0, 3, 5]) / (2 * eps)
            assert fd.item() == pytest.approx(grad[0, j].item(), rel=1e-2, abs=1e-8)

    def test_pyramid_mismatch_rejected(self, toy_g):
        pose = make_pose(5)
        w = torch.randn(1, 32)
        with pytest.raises(ValueError):
            toy_g.synthesis(w, heatmap_pyramid([pose], [4, 8]))

    def test_per_scale_latent_equal_entries_match_single_w(self, toy_g):
        pose = make_pose(6)
        w = toy_g.mapping(torch.randn(1, 16), pose_features(pose))
        heat = heatmap_pyramid([pose], toy_g.cfg.scales)
        single = toy_g.synthesis(w, heat)
        per_scale = toy_g.synthesis([w] * len(toy_g.cfg.scales), heat)
        assert (single == per_scale).all()

    def test_spatial_noise_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(use_spatial_noise=True)


class TestDiscriminate:
    def test_scalar_finite_logit(self, toy_g, toy_d):
        pose = make_pose(7)
        img = torch.randn(1, 3, 16, 16)
        heat = heatmap_pyramid([pose], [16])[0]
        logit = toy_d(img, heat, pose_features(pose))
        assert logit.shape == (1,)
        assert torch.isfinite(logit).all()

    def test_pose_conditioning_is_live(self, toy_d):
        img = torch.randn(1, 3, 16, 16)
        p1, p2 = make_pose(8), make_pose(9)
        l1 = toy_d(img, heatmap_pyramid([p1], [16])[0], pose_features(p1))
        l2 = toy_d(img, heatmap_pyramid([p2], [16])[0], pose_features(p2))
        assert (l1 - l2).abs().item() > 0

    def test_batching_consistency(self, toy_d):
        poses = [make_pose(i) for i in range(4)]
        imgs = torch.randn(4, 3, 16, 16)
        heat = heatmap_pyramid(poses, [16])[0]
        feats = pose_features(poses)
        batched = toy_d(imgs, heat, feats)
        singles = torch.cat([toy_d(imgs[i:i + 1], heat[i:i + 1], feats[i:i + 1])
                             for i in range(4)])
        assert torch.allclose(batched, singles, atol=1e-5)

    def test_resolution_mismatch_rejected(self, toy_d):
        pose = make_pose(10)
        with pytest.raises(ValueError):
            toy_d(torch.randn(1, 3, 8, 8), heatmap_pyramid([pose], [8])[0],
                  pose_features(pose))


class TestParameterContracts:
    def test_channel_multiplier_ratio(self):
        base = conv_parameter_count(Generator(GeneratorConfig(output_resolution=32)))
        wide = conv_parameter_count(Generator(GeneratorConfig(output_resolution=32,
                                                              channel_multiplier=2)))
        assert wide / base >= 3.9

    def test_large_model_parameter_counts(self):
        g = Generator(GeneratorConfig(output_resolution=128, channel_multiplier=2))
        d = Discriminator(DiscriminatorConfig(input_resolution=128, channel_multiplier=2))
        n_g = sum(p.numel() for p in g.parameters())
        n_d = sum(p.numel() for p in d.parameters())
        assert abs(n_g - 85.4e6) / 85.4e6 < 0.10
        assert abs(n_d - 98.2e6) / 98.2e6 < 0.10

    def test_all_parameters_receive_adversarial_gradient(self, toy_g, toy_d):
        torch.manual_seed(5)
        poses = [make_pose(20), make_pose(21)]
        z = torch.randn(2, 16)
        heat = heatmap_pyramid(poses, toy_g.cfg.scales)
        toy_g.zero_grad(set_to_none=True)
        toy_d.zero_grad(set_to_none=True)
        fake = toy_g(z, pose_features(poses), heat)
        logit = toy_d(fake, heat[-1], pose_features(poses))
        loss = torch.nn.functional.softplus(-logit).mean() + \
            torch.nn.functional.softplus(logit.detach() * 0 + logit).mean()
        loss.backward()
        for name, p in list(toy_g.named_parameters()) + list(toy_d.named_parameters()):
            assert p.grad is not None and p.grad.abs().sum() > 0, name
        toy_g.zero_grad(set_to_none=True)
        toy_d.zero_grad(set_to_none=True)


class TestCheckpointAndImages:
    def test_checkpoint_roundtrip(self, tmp_path, toy_g, toy_d):
        save_checkpoint(tmp_path / "ckpt", toy_g, toy_d, step=5)
        g2, d2, _, _ = load_checkpoint(tmp_path / "ckpt")
        pose = make_pose(11)
        z = torch.randn(1, 16)
        heat = heatmap_pyramid([pose], toy_g.cfg.scales)
        assert (toy_g(z, pose_features(pose), heat) ==
                g2(z, pose_features(pose), heat)).all()

    def test_image_quantization(self):
        img = torch.tensor([[[-1.0, 1.0], [0.0, 2.0]]]).expand(3, 2, 2)
        arr = image_to_uint8(img)
        assert arr[0, 0, 0] == 0 and arr[0, 1, 0] == 255
        assert arr[1, 0, 0] == 128  # round(127.5)
        assert arr[1, 1, 0] == 255  # clamped
