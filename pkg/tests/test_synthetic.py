import numpy as np
import pytest

import mdsf.synthetic as S
from mdsf.errors import ConfigError, GenerationError, TrainingError
from mdsf.losses import LossConfig


def box_mask(scene, margin=2):
    n = scene.image.shape[-1]
    keep = np.ones((n, n), bool)
    for cx, cy, w, h in scene.boxes * n:
        keep[max(int(cy - h) - margin, 0):int(cy + h) + margin + 1, max(int(cx - w) - margin, 0):int(cx + w) + margin + 1] = False
    return keep


class TestScenes:
    def test_deterministic(self):
        a, b = S.generate_scene(S.SceneConfig(seed=11)), S.generate_scene(S.SceneConfig(seed=11))
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.boxes, b.boxes)
        np.testing.assert_array_equal(a.classes, b.classes)

    def test_seeds_differ(self):
        assert not np.array_equal(S.generate_scene(S.SceneConfig(seed=1)).image, S.generate_scene(S.SceneConfig(seed=2)).image)

    @pytest.mark.parametrize("seed", range(5))
    def test_noise_free_peak_at_centre(self, seed):
        sc = S.generate_scene(S.SceneConfig(n_targets=1, speckle=0.0, contrast=10.0, background=0.05, seed=seed))
        n = sc.image.shape[-1]
        iy, ix = np.unravel_index(np.argmax(sc.image[0]), (n, n))
        cx, cy = sc.boxes[0, :2] * n
        assert (ix + 0.5, iy + 0.5) == (cx, cy)

    def test_background_mean(self):
        means = []
        for seed in range(100):
            sc = S.generate_scene(S.SceneConfig(seed=seed))
            means.append(sc.image[0][box_mask(sc)].mean())
        assert abs(np.mean(means) - 0.1) <= 0.01

    def test_boxes_inside(self):
        for seed in range(20):
            b = S.generate_scene(S.SceneConfig(seed=seed)).boxes
            assert np.all(b[:, :2] - b[:, 2:] / 2 >= 0) and np.all(b[:, :2] + b[:, 2:] / 2 <= 1)

    def test_range(self):
        img = S.generate_scene(S.SceneConfig(contrast=20.0)).image
        assert img.min() >= 0 and img.max() <= 1

    def test_targets_do_not_fit(self):
        with pytest.raises(GenerationError):
            S.generate_scene(S.SceneConfig(size=8, min_extent=10, max_extent=12))
        with pytest.raises(GenerationError):
            S.generate_scene(S.SceneConfig(size=16, n_targets=30))

    @pytest.mark.parametrize("kw", [{"contrast": 0.0}, {"speckle": 1.5}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            S.SceneConfig(**kw)

    def test_save_load(self, tmp_path):
        sc = S.generate_scene(S.SceneConfig(seed=3))
        img, ann = sc.save(tmp_path / "scene")
        lines = ann.read_text().splitlines()
        assert len(lines) == len(sc.boxes) and len(lines[0].split()) == 5
        back = S.SyntheticScene.load(tmp_path / "scene")
        np.testing.assert_array_equal(back.image, sc.image)
        np.testing.assert_array_equal(back.boxes, sc.boxes)
        np.testing.assert_array_equal(back.classes, sc.classes)


class TestModel:
    def test_cell_count(self):
        logits, boxes, levels = S.ToyMambaDSF()(S.generate_scene().image)
        assert logits.shape == (64 + 16 + 4, 3) and boxes.shape == (84, 4)
        assert [lv.shape[1:] for lv in levels] == [(8, 8), (4, 4), (2, 2)]

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            S.ToyMambaDSF()(np.zeros((1, 48, 48)))

    def test_parameter_budget(self):
        assert sum(p.data.size for p in S.ToyMambaDSF().parameters()) <= 20_000

    def test_forward_finite(self, rng):
        logits, boxes, _ = S.ToyMambaDSF(S.ModelConfig(seed=5))(rng.uniform(size=(1, 32, 32)))
        assert np.all(np.isfinite(logits.data)) and np.all(np.isfinite(boxes.data))

    def test_unknown_ablation(self):
        with pytest.raises(ConfigError):
            S.ModelConfig(disable=frozenset({"decoder"}))

    def test_greedy_match_distinct(self):
        pred = np.array([[0.1, 0.1, 0.1, 0.1], [0.5, 0.5, 0.1, 0.1], [0.9, 0.9, 0.1, 0.1]])
        # both targets prefer prediction 1; the closer one wins it, the other falls back
        gt = np.array([[0.55, 0.5, 0.1, 0.1], [0.49, 0.5, 0.1, 0.1]])
        np.testing.assert_array_equal(S.greedy_match(pred, gt), [2, 1])


class TestTraining:
    def test_zero_lr_flat(self):
        hist = S.smoke_train(steps=4, lr=0.0, size=32)
        assert len({r.total for r in hist}) == 1

    def test_deterministic(self):
        a = S.smoke_train(steps=5, size=32, seed=2)
        b = S.smoke_train(steps=5, size=32, seed=2)
        assert [r.as_dict() for r in a] == [r.as_dict() for r in b]

    def test_steps_validated(self):
        with pytest.raises(ConfigError):
            S.smoke_train(steps=0)

    def test_nan_names_term(self, monkeypatch):
        real = S.total_loss

        def poisoned(*args, **kw):
            total, rep = real(*args, **kw)
            rep.l1 = float("nan")
            return total, rep

        monkeypatch.setattr(S, "total_loss", poisoned)
        with pytest.raises(TrainingError, match="non-finite l1 loss at step 0"):
            S.smoke_train(steps=3, size=32)

    def test_coherence_term_drives_alignment(self):
        on = S.smoke_train(steps=60, size=32, loss_cfg=LossConfig(lambda_c=1.0))
        off = S.smoke_train(steps=60, size=32, loss_cfg=LossConfig(lambda_c=0.0))
        assert on[0].csc == off[0].csc
        assert on[-1].csc < 0.5 * on[0].csc
        assert on[-1].csc < off[-1].csc

    @pytest.mark.parametrize("part", sorted(S.ABLATIONS))
    def test_ablations_run(self, part):
        hist = S.smoke_train(steps=2, size=32, disable=[part])
        assert np.isfinite(hist[-1].total)
