import numpy as np
import pytest

from convinr import (Block, BnParams, ConvKernel, EXPAND_RATIO, block_backward,
                     block_forward, block_params, positional_encode)
from checks import (fd_gradient, fresh_bn, make_block, plain_block,
                    random_kernel, random_tensor, rel_err)


class TestBlockForward:
    def test_zero_extra_branches_match_plain_block(self):
        rng = np.random.default_rng(20)
        block = make_block(rng, "sr")
        for kern, bn in block.branches:
            kern.weights[:] = 0
            kern.bias[:] = 0
            bn.beta[:] = 0
        plain = Block(main=block.main, bn_main=block.bn_main, act=block.act)
        x = random_tensor(rng, 6, 6, 3)
        y_sr, _ = block_forward(block, x, "train")
        y_plain, _ = block_forward(plain, x, "train")
        assert np.array_equal(y_sr, y_plain)

    def test_identity_pointwise_chain_matches_plain_block(self):
        rng = np.random.default_rng(21)
        block = make_block(rng, "wr", cin=3, cout=4)
        c, mid = 4, 4 * EXPAND_RATIO
        # embed then project: the chain composes to the identity map
        w1 = np.zeros((1, 1, c, mid), np.float32)
        w2 = np.zeros((1, 1, mid, c), np.float32)
        for i in range(c):
            w1[0, 0, i, i] = 1.0
            w2[0, 0, i, i] = 1.0
        eps = block.pw_chain[0][1].eps
        block.pw_chain = [
            (ConvKernel(w1, np.zeros(mid, np.float32)), BnParams.identity(mid, np.float32, eps)),
            (ConvKernel(w2, np.zeros(c, np.float32)), BnParams.identity(c, np.float32, eps))]
        plain = Block(main=block.main, bn_main=block.bn_main, act=block.act)
        x = random_tensor(rng, 6, 6, 3)
        # identity statistics are an eval-mode notion
        y_wr, _ = block_forward(block, x, "eval")
        y_plain, _ = block_forward(plain, x, "eval")
        assert np.max(np.abs(y_wr - y_plain)) <= 1e-6

    def test_gate_coefficients_bounded_and_saturable(self):
        rng = np.random.default_rng(22)
        block = make_block(rng, "dr")
        x = random_tensor(rng, 6, 6, 3)
        _, cache = block_forward(block, x, "train")
        coeff = cache["coeff"]
        assert np.all(coeff > 0) and np.all(coeff < 1)
        # saturating the gate recovers the undecorated block
        block.gate_fc2.weights[:] = 0
        block.gate_fc2.bias[:] = 20.0
        plain = Block(main=block.main, bn_main=block.bn_main, act=block.act)
        y_dr, cache = block_forward(block, x, "train")
        y_plain, _ = block_forward(plain, x, "train")
        assert np.min(cache["coeff"]) > 1 - 1e-4
        assert np.max(np.abs(y_dr - y_plain)) <= 1e-4

    def test_channel_mismatch_rejected(self):
        rng = np.random.default_rng(23)
        block = plain_block(rng)
        with pytest.raises(ValueError):
            block_forward(block, random_tensor(rng, 4, 4, 2), "train")

    def test_eval_mode_returns_no_cache(self):
        rng = np.random.default_rng(24)
        block = plain_block(rng)
        y, cache = block_forward(block, random_tensor(rng, 4, 4, 3), "eval")
        assert cache is None
        with pytest.raises(ValueError):
            block_backward(block, cache, np.zeros_like(y))


class TestBlockValidation:
    def test_sr_branch_shape_must_match_main(self):
        rng = np.random.default_rng(90)
        with pytest.raises(ValueError):
            Block(main=random_kernel(rng, 3, 3, 4),
                  bn_main=fresh_bn(4), act="relu", decoration="sr",
                  branches=[(random_kernel(rng, 1, 3, 4), fresh_bn(4)),
                            (random_kernel(rng, 3, 3, 4), fresh_bn(4))])

    def test_wr_chain_must_expand_by_four(self):
        rng = np.random.default_rng(91)
        with pytest.raises(ValueError):
            Block(main=random_kernel(rng, 3, 3, 4),
                  bn_main=fresh_bn(4), act="relu", decoration="wr",
                  pw_chain=[(random_kernel(rng, 1, 4, 8), fresh_bn(8)),
                            (random_kernel(rng, 1, 8, 4), fresh_bn(4))])

    def test_dr_requires_both_gate_kernels(self):
        rng = np.random.default_rng(92)
        with pytest.raises(ValueError):
            Block(main=random_kernel(rng, 3, 3, 4), bn_main=fresh_bn(4),
                  act="relu", decoration="dr",
                  gate_fc1=random_kernel(rng, 1, 4, 16), gate_fc2=None)

    def test_decorations_require_batchnorm(self):
        rng = np.random.default_rng(93)
        with pytest.raises(ValueError):
            Block(main=random_kernel(rng, 3, 3, 4), bn_main=None,
                  act="relu", decoration="dr",
                  gate_fc1=random_kernel(rng, 1, 4, 16),
                  gate_fc2=random_kernel(rng, 1, 16, 4))


class TestBlockBackward:
    def test_zero_cotangent_zero_grads(self):
        rng = np.random.default_rng(25)
        for decoration in ("none", "sr", "wr", "dr"):
            block = make_block(rng, decoration)
            x = random_tensor(rng, 5, 5, 3)
            y, cache = block_forward(block, x, "train")
            gx, grads = block_backward(block, cache, np.zeros_like(y))
            assert not gx.any()
            assert all(not g.any() for g in grads.values())

    def test_plain_block_matches_manual_chain(self):
        from convinr import (activation_backward, batchnorm_backward,
                             conv2d_backward, conv2d_forward, batchnorm_forward)
        rng = np.random.default_rng(26)
        block = plain_block(rng)
        x = random_tensor(rng, 5, 5, 3)
        y, cache = block_forward(block, x, "train")
        gy = random_tensor(rng, 5, 5, 4)
        gx, grads = block_backward(block, cache, gy)

        z = conv2d_forward(x, block.main)
        h, stats = batchnorm_forward(z, block.bn_main.gamma, block.bn_main.beta,
                                     block.bn_main.eps, "train")
        gh = activation_backward(gy, h, "relu")
        gz, gg, gb = batchnorm_backward(gh, z, block.bn_main.gamma,
                                        block.bn_main.eps, stats=stats)
        gx2, gw, gbias = conv2d_backward(gz, x, block.main)
        assert np.array_equal(gx, gx2)
        assert np.array_equal(grads["main.w"], gw)
        assert np.array_equal(grads["bn.gamma"], gg)
        assert np.array_equal(grads["bn.beta"], gb)
        assert np.array_equal(grads["main.b"], gbias)

    @pytest.mark.parametrize("decoration", ["none", "sr", "wr", "dr"])
    def test_finite_differences(self, decoration):
        rng = np.random.default_rng(27)
        block = make_block(rng, decoration, cin=2, cout=3, dtype=np.float64)
        x = random_tensor(rng, 6, 6, 2, np.float64)
        cot = random_tensor(rng, 6, 6, 3, np.float64)

        def objective():
            y, _ = block_forward(block, x, "train")
            return float(np.sum(cot * y))

        y, cache = block_forward(block, x, "train")
        assert np.min(np.abs(cache["pre"])) > 1e-4  # clear of the relu kink
        gx, grads = block_backward(block, cache, cot)
        assert rel_err(gx, fd_gradient(objective, x)) <= 1e-5
        for name, arr in block_params(block):
            assert rel_err(grads[name], fd_gradient(objective, arr)) <= 1e-5, name


class TestPositionalEncode:
    def test_origin_encodes_to_zeros_and_ones(self):
        grid = np.zeros((1, 1, 2), np.float32)
        enc = positional_encode(grid, 4)
        assert enc.shape == (1, 1, 16)
        assert np.array_equal(enc[0, 0, :8], np.zeros(8, np.float32))
        assert np.array_equal(enc[0, 0, 8:], np.ones(8, np.float32))

    def test_known_angle(self):
        grid = np.zeros((1, 1, 2), np.float32)
        grid[0, 0, 0] = 1.0
        enc = positional_encode(grid, 1)
        # octave 0 of the x axis sees the angle pi
        assert abs(enc[0, 0, 0]) <= 1e-6
        assert abs(enc[0, 0, 2] + 1.0) <= 1e-6

    def test_channel_count_for_ten_octaves(self):
        grid = np.zeros((2, 3, 2), np.float32)
        assert positional_encode(grid, 10).shape == (2, 3, 40)

    def test_bounded(self):
        rng = np.random.default_rng(28)
        grid = random_tensor(rng, 8, 8, 2)
        enc = positional_encode(grid, 6)
        assert np.all(enc >= -1.0) and np.all(enc <= 1.0)

    def test_wrong_channels_rejected(self):
        with pytest.raises(ValueError):
            positional_encode(np.zeros((2, 2, 3), np.float32), 4)


class TestAffinity:
    def test_eval_blocks_scale_linearly_without_bias(self):
        # with bias and beta zeroed and no activation, frozen-stats blocks
        # are linear maps; doubling the input doubles the output
        rng = np.random.default_rng(29)
        for decoration in ("none", "sr", "wr"):
            block = make_block(rng, decoration)
            block.act = None
            block.main.bias[:] = 0
            block.bn_main.beta[:] = 0
            block.bn_main.mu[:] = 0
            for kern, bn in block.branches + block.pw_chain:
                kern.bias[:] = 0
                bn.beta[:] = 0
                bn.mu[:] = 0
            x = random_tensor(rng, 5, 5, 3)
            y1, _ = block_forward(block, x, "eval")
            y2, _ = block_forward(block, 2 * x, "eval")
            assert np.max(np.abs(y2 - 2 * y1)) <= 1e-5
