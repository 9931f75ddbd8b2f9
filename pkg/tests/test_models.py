import numpy as np
import pytest

from convinr import (Block, ModelSpec, build_model, capture_bn_stats,
                     make_coordinate_grid, mse_loss, model_backward,
                     model_forward, seeded_rng)
from convinr.models import Model
from checks import fd_gradient, rel_err


class TestCoordinateGrid:
    def test_single_pixel_is_origin(self):
        grid = make_coordinate_grid(1, 1)
        assert np.array_equal(grid[0, 0], np.zeros(2, np.float32))

    def test_two_pixel_centers(self):
        grid = make_coordinate_grid(1, 2)
        assert np.allclose(grid[0, :, 0], [-0.5, 0.5])
        assert np.allclose(grid[0, :, 1], [0.0, 0.0])

    def test_full_resolution_scan(self):
        grid = make_coordinate_grid(768, 512)
        assert float(grid.min()) > -1.0 and float(grid.max()) < 1.0
        assert np.all(np.diff(grid[0, :, 0]) > 0)
        assert np.all(np.diff(grid[:, 0, 1]) > 0)

    def test_rotation_symmetry(self):
        grid = make_coordinate_grid(12, 7)
        assert np.allclose(grid, -grid[::-1, ::-1], atol=1e-7)

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            make_coordinate_grid(0, 5)


class TestBuildModel:
    def test_conv_inr_parameter_count(self):
        spec = ModelSpec("conv-inr", depth=10, width=32, kernel=3,
                         in_channels=2, out_channels=3)
        model = build_model(spec, seeded_rng(0))
        expected = (3 * 3 * 2 * 32 + 32) + 9 * (3 * 3 * 32 * 32 + 32) \
            + (3 * 3 * 32 * 3 + 3) + 10 * (2 * 32)
        assert model.param_count == expected

    def test_same_seed_bit_identical(self):
        spec = ModelSpec("conv-inr", depth=4, width=8)
        m1 = build_model(spec, seeded_rng(7))
        m2 = build_model(spec, seeded_rng(7))
        for (n1, a1), (n2, a2) in zip(m1.parameters(), m2.parameters()):
            assert n1 == n2 and np.array_equal(a1, a2)

    def test_lecun_bounds_and_mean(self):
        spec = ModelSpec("conv-inr", depth=3, width=32)
        model = build_model(spec, seeded_rng(3))
        w = model.blocks[1].main.weights  # fan_in = 9 * 32 = 288
        bound = np.sqrt(3.0 / 288)
        assert w.size >= 9216
        assert float(np.abs(w).max()) <= bound
        assert abs(float(w.mean())) < 0.05 * bound * 2

    def test_siren_init_ranges(self):
        spec = ModelSpec("siren", depth=3, width=64, omega0=30.0)
        model = build_model(spec, seeded_rng(4))
        first = model.blocks[0].main.weights
        assert float(np.abs(first).max()) <= 1.0 / 2  # fan_in = 2
        hidden = model.blocks[1].main.weights
        assert float(np.abs(hidden).max()) <= np.sqrt(6.0 / 64) / 30.0
        assert model.blocks[1].act == "sine" and model.blocks[1].omega == 30.0

    def test_bias_and_bn_defaults(self):
        model = build_model(ModelSpec("conv-inr", depth=2, width=4), seeded_rng(5))
        for block in model.blocks:
            assert not block.main.bias.any()
        bn = model.blocks[0].bn_main
        assert np.all(bn.gamma == 1) and not bn.beta.any()

    def test_family_structure(self):
        for family, has_bn, act in [("mlp", False, "relu"),
                                    ("pe-mlp", False, "relu"),
                                    ("siren", False, "sine"),
                                    ("conv-inr", True, "relu")]:
            model = build_model(ModelSpec(family, depth=2, width=6), seeded_rng(1))
            hidden = model.blocks[0]
            assert (hidden.bn_main is not None) == has_bn
            assert hidden.act == act
            out = model.blocks[-1]
            assert out.bn_main is None and out.act is None
            k = 3 if family == "conv-inr" else 1
            assert all(b.main.k == k for b in model.blocks)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec("mlp", kernel=3)
        with pytest.raises(ValueError):
            ModelSpec("mlp", decoration="sr")
        with pytest.raises(ValueError):
            ModelSpec("conv-inr", kernel=4)
        with pytest.raises(ValueError):
            ModelSpec("conv-inr", depth=0)
        with pytest.raises(ValueError):
            ModelSpec("nope")


class TestModelForward:
    def test_zero_weight_model_emits_output_bias(self):
        spec = ModelSpec("conv-inr", depth=1, width=4, out_channels=3)
        model = build_model(spec, seeded_rng(6))
        for _, arr in model.parameters():
            arr[:] = 0
        model.blocks[-1].main.bias[:] = np.array([0.1, 0.2, 0.3], np.float32)
        pred, _ = model_forward(model, make_coordinate_grid(5, 5), "train")
        assert np.allclose(pred, np.array([0.1, 0.2, 0.3], np.float32), atol=1e-7)

    def test_mlp_is_pixelwise(self):
        model = build_model(ModelSpec("mlp", depth=3, width=8), seeded_rng(8))
        grid = make_coordinate_grid(6, 5)
        pred, _ = model_forward(model, grid, "train")
        rng = np.random.default_rng(0)
        perm = rng.permutation(6 * 5)
        shuffled = grid.reshape(-1, 2)[perm].reshape(6, 5, 2).copy()
        pred_shuffled, _ = model_forward(model, shuffled, "train")
        assert np.array_equal(pred.reshape(-1, 3)[perm], pred_shuffled.reshape(-1, 3))

    def test_train_eval_agree_after_capture(self):
        model = build_model(ModelSpec("conv-inr", depth=3, width=8), seeded_rng(9))
        grid = make_coordinate_grid(12, 12)
        capture_bn_stats(model, grid)
        pred_train, _ = model_forward(model, grid, "train")
        pred_eval, _ = model_forward(model, grid, "eval")
        assert np.max(np.abs(pred_train - pred_eval)) <= 1e-6

    def test_mlp_is_k1_conv_inr_without_bn(self):
        mlp = build_model(ModelSpec("mlp", depth=3, width=8), seeded_rng(10))
        conv = Model(ModelSpec("conv-inr", depth=3, width=8, kernel=1),
                     [Block(main=b.main.copy(), bn_main=None, act=b.act,
                            omega=b.omega) for b in mlp.blocks],
                     precision=32)
        grid = make_coordinate_grid(9, 9)
        a, _ = model_forward(mlp, grid, "train")
        b, _ = model_forward(conv, grid, "train")
        assert np.array_equal(a, b)

    def test_channel_mismatch_rejected(self):
        model = build_model(ModelSpec("mlp", depth=1, width=4), seeded_rng(11))
        with pytest.raises(ValueError):
            model_forward(model, np.zeros((4, 4, 3), np.float32), "train")


class TestModelBackward:
    def test_zero_cotangent(self):
        model = build_model(ModelSpec("conv-inr", depth=2, width=4), seeded_rng(12))
        grid = make_coordinate_grid(6, 6)
        pred, caches = model_forward(model, grid, "train")
        grads = model_backward(model, caches, np.zeros_like(pred))
        assert all(not g.any() for g in grads.values())

    def test_eval_cache_rejected(self):
        model = build_model(ModelSpec("conv-inr", depth=2, width=4), seeded_rng(13))
        grid = make_coordinate_grid(6, 6)
        pred, caches = model_forward(model, grid, "eval")
        with pytest.raises(ValueError):
            model_backward(model, caches, np.zeros_like(pred))

    @pytest.mark.parametrize("family", ["mlp", "pe-mlp", "siren", "conv-inr"])
    def test_loss_gradient_finite_differences(self, family):
        spec = ModelSpec(family, depth=2, width=4, pe_octaves=3, out_channels=2)
        model = build_model(spec, seeded_rng(14), precision=64)
        grid = make_coordinate_grid(4, 4, np.float64)
        target = np.random.default_rng(1).uniform(0, 1, (4, 4, 2))

        def objective():
            pred, _ = model_forward(model, grid, "train")
            return mse_loss(pred, target)[0]

        pred, caches = model_forward(model, grid, "train")
        _, grad = mse_loss(pred, target)
        grads = model_backward(model, caches, grad)
        for name, arr in model.parameters():
            fd = fd_gradient(objective, arr)
            assert rel_err(grads[name], fd, floor=1e-3) <= 1e-4, name
