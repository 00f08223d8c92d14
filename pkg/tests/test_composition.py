import numpy as np
import pytest
import torch

from posegan.composition import (
    PerceptualLoss, _as_ws, _crop_patch, animate, compose, person_crop,
    render_scene_only, render_subject_only,
)
from posegan.evaluation import RandomConvEmbedder
from posegan.networks import Generator, GeneratorConfig, heatmap_pyramid
from posegan.pose import K, Pose

TOY_G = dict(output_resolution=16, channel_base=256, channel_max=32,
             w_dim=32, z_dim=16, mapping_depth=2, mapping_embed_dim=32)


@pytest.fixture(scope="module")
def generator():
    torch.manual_seed(0)
    return Generator(GeneratorConfig(**TOY_G)).eval()


def _w(generator, seed):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(1, 16, generator=g)
    return generator.mapping(z, torch.zeros(1, 54))


def _pose(res=16, seed=0):
    rng = np.random.default_rng(seed)
    kp = rng.uniform(2, res - 2, size=(K, 2))
    return Pose(keypoints=kp, visibility=np.ones(K, dtype=bool),
                reference_resolution=res)


class TestRenderVariants:
    def test_scene_only_ignores_pose(self, generator):
        w = _w(generator, 1)
        out = render_scene_only(generator, w)
        assert out.shape == (1, 3, 16, 16)
        # invariant to which pose would have been used: heatmaps are zeroed
        heat0 = heatmap_pyramid([_pose(seed=3)], generator.cfg.scales, zero=True)
        direct = generator.synthesis(w, heat0)
        assert torch.equal(out, direct)

    def test_subject_only_zeroed_constant(self, generator):
        w = _w(generator, 2)
        pose = _pose(seed=1)
        out = render_subject_only(generator, w, pose)
        full = generator.synthesis(w, heatmap_pyramid([pose], generator.cfg.scales))
        assert out.shape == full.shape
        assert not torch.equal(out, full)

    def test_as_ws_broadcast_and_validation(self, generator):
        n = len(generator.cfg.scales)
        w = torch.randn(1, 32)
        ws = _as_ws(generator, w)
        assert len(ws) == n and all(torch.equal(x, w) for x in ws)
        ws = _as_ws(generator, [torch.randn(32) for _ in range(n)])
        assert all(x.shape == (1, 32) for x in ws)
        with pytest.raises(ValueError):
            _as_ws(generator, [w] * (n + 1))


class TestPersonCrop:
    def test_hand_computed_box(self):
        kp = np.zeros((K, 2))
        vis = np.zeros(K, dtype=bool)
        kp[0], kp[1], kp[2] = (10.0, 20.0), (30.0, 60.0), (20.0, 40.0)
        vis[:3] = True
        box = person_crop(Pose(keypoints=kp, visibility=vis,
                               reference_resolution=256), margin=0.1)
        # box (10,20)-(30,60), margins 2 and 4
        assert box == pytest.approx((8.0, 16.0, 32.0, 64.0))

    def test_clamped_to_frame(self):
        kp = np.zeros((K, 2))
        vis = np.zeros(K, dtype=bool)
        kp[0], kp[1] = (1.0, 1.0), (255.0, 255.0)
        vis[:2] = True
        box = person_crop(Pose(keypoints=kp, visibility=vis,
                               reference_resolution=256), margin=0.1)
        assert box == pytest.approx((0.0, 0.0, 256.0, 256.0))

    def test_invisible_keypoints_ignored(self):
        kp = np.zeros((K, 2))
        vis = np.zeros(K, dtype=bool)
        kp[0], kp[1] = (10.0, 10.0), (20.0, 20.0)
        kp[5] = (200.0, 200.0)
        vis[:2] = True
        box = person_crop(Pose(keypoints=kp, visibility=vis,
                               reference_resolution=256))
        assert box[2] < 30.0

    def test_no_visible_keypoints_raises(self):
        kp = np.zeros((K, 2))
        with pytest.raises(ValueError):
            person_crop(Pose(keypoints=kp, visibility=np.zeros(K, dtype=bool),
                             reference_resolution=256))


class TestCropPatch:
    def test_output_size_and_content(self):
        img = torch.zeros(3, 16, 16)
        img[:, 4:8, 4:8] = 1.0
        patch = _crop_patch(img, (4.0, 4.0, 8.0, 8.0), 16)
        assert patch.shape == (1, 3, 64, 64)
        assert patch.mean().item() == pytest.approx(1.0)

    def test_resolution_rescaling(self):
        # box given in 256-coords against a 16px image scales by 1/16
        img = torch.zeros(3, 16, 16)
        img[:, :, 8:] = 1.0
        patch = _crop_patch(img, (128.0, 0.0, 256.0, 256.0), 256)
        assert patch.mean().item() == pytest.approx(1.0)


class TestPerceptualLoss:
    def test_zero_for_identical_inputs(self):
        loss = PerceptualLoss(RandomConvEmbedder(seed=0))
        x = torch.randn(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))
        assert loss(x, x).item() == 0.0
        assert loss(x, x + 0.5).item() > 0.0


class TestCompose:
    def _latents(self, generator, seed):
        return _w(generator, seed), _w(generator, seed + 1)

    def test_steps_zero_returns_scene_init(self, generator):
        wp, wscene = self._latents(generator, 11)
        pose = _pose(seed=2)
        loss = PerceptualLoss(RandomConvEmbedder(seed=0))
        ws, composite, history = compose(generator, wp, wscene, pose, loss, steps=0)
        assert history == []
        assert all(torch.equal(w, wscene) for w in ws)
        expected = generator.synthesis(wscene, heatmap_pyramid([pose], generator.cfg.scales))
        assert torch.equal(composite, expected[0])

    def test_loss_decreases(self, generator):
        torch.manual_seed(4)
        wp, wscene = self._latents(generator, 13)
        pose = _pose(seed=5)
        loss = PerceptualLoss(RandomConvEmbedder(seed=0))
        ws, composite, history = compose(generator, wp, wscene, pose, loss,
                                         steps=40, lr=0.05)
        assert len(history) == 40
        assert min(history[-5:]) < history[0]
        assert composite.shape == (3, 16, 16)
        assert all(w.requires_grad is False for w in ws)

    def test_same_source_is_near_fixed_point(self, generator):
        # person and scene from the same latent: the init already matches
        # both targets, so the initial loss is ~0 and stays tiny
        torch.manual_seed(5)
        w = self._latents(generator, 17)[0]
        pose = _pose(seed=6)
        loss = PerceptualLoss(RandomConvEmbedder(seed=0))
        _, _, history = compose(generator, w, w, pose, loss, steps=5, lr=0.05)
        assert history[0] == pytest.approx(0.0, abs=1e-8)


class TestAnimate:
    def test_frame_count_and_purity(self, generator):
        poses = [_pose(seed=s) for s in range(4)]
        z = torch.randn(1, 16, generator=torch.Generator().manual_seed(8))
        frames1 = animate(generator, poses, z=z)
        frames2 = animate(generator, poses, z=z)
        assert len(frames1) == 4
        assert all(torch.equal(a, b) for a, b in zip(frames1, frames2))
        assert all(f.shape == (3, 16, 16) for f in frames1)

    def test_latent_fixed_across_frames(self, generator):
        # frame i must equal a direct render with the w inferred from pose 0
        poses = [_pose(seed=s) for s in range(3)]
        z = torch.randn(1, 16, generator=torch.Generator().manual_seed(9))
        frames = animate(generator, poses, z=z)
        from posegan.conditioning import pose_features
        w = generator.mapping(z, pose_features(poses[0]))
        for pose, frame in zip(poses, frames):
            direct = generator.synthesis(w, heatmap_pyramid([pose], generator.cfg.scales))
            assert torch.equal(frame, direct[0])

    def test_w_override_skips_mapping(self, generator):
        poses = [_pose(seed=1)]
        w = torch.randn(32)
        frame = animate(generator, poses, w=w)[0]
        direct = generator.synthesis(w[None], heatmap_pyramid([poses[0]], generator.cfg.scales))
        assert torch.equal(frame, direct[0])

    def test_empty_sequence_raises(self, generator):
        with pytest.raises(ValueError):
            animate(generator, [])

    def test_requires_z_or_w(self, generator):
        with pytest.raises(ValueError):
            animate(generator, [_pose()])
