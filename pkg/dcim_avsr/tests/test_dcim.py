#!python
# -*- Python -*-

import logging
import unittest

import numpy as np

from dcim_avsr import tensor as T
from dcim_avsr.conformer import ConformerBlock, ConformerBlockConfig, lengths_to_mask
from dcim_avsr.dcim import (Adapter, DCIMLayer, DCIMMode, adapter_param_count, intermediate_tap,
                            run_dcim_stack, tap_layers)
from dcim_avsr.errors import AlignmentError, ConfigError, ShapeError
from dcim_avsr.gradcheck import check_gradients
from dcim_avsr.tests.helpers import randomize


logger = logging.getLogger(__name__)

DIM = 8


def _blocks(seed=0, n=1):
    cfg = ConformerBlockConfig(dim=DIM, n_heads=2, conv_kernel=3, ff_expansion=2)
    rng = np.random.default_rng(seed)
    return [ConformerBlock(cfg, rng) for _ in range(n)], [ConformerBlock(cfg, rng) for _ in range(n)]


def _streams(seed=1, t=6):
    rng = np.random.default_rng(seed)
    return (T.Tensor(rng.standard_normal((2, t, DIM))), T.Tensor(rng.standard_normal((2, t, DIM))),
            lengths_to_mask([t, t - 2], t))


def _perturbed(x, seed):
    return T.Tensor(x.data + np.random.default_rng(seed).standard_normal(x.shape))


class TestAdapter(unittest.TestCase):
    def test_zero_init(self):
        ada = Adapter(DIM, 4, DIM, np.random.default_rng(0))
        out = ada(T.Tensor(np.random.default_rng(1).standard_normal((2, 3, DIM)) * 100.0))
        assert not np.any(out.data)

    def test_count(self):
        assert Adapter.count(256, 180, 256) == 46260 + 32580 + 46336 == 125176
        assert Adapter(256, 180, 256, np.random.default_rng(0)).param_count() == 125176
        assert Adapter(256, 256, 360, np.random.default_rng(0)).param_count() == Adapter.count(256, 256, 360)

    def test_dim_mismatch(self):
        with self.assertRaises(ShapeError):
            Adapter(DIM, 4, DIM, np.random.default_rng(0))(T.Tensor(np.zeros((1, 2, DIM + 1))))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        ada = Adapter(DIM, 4, DIM, rng)
        randomize(ada, rng)
        x = T.Tensor(rng.standard_normal((2, 3, DIM)), requires_grad=True)
        w = T.Tensor(rng.standard_normal((2, 3, DIM)))
        report = check_gradients(lambda: T.sum(T.mul(ada(x), w)), [x, ada.l1.weight, ada.l2.bias, ada.l3.weight])
        assert report.passed, str(report)


class TestModes(unittest.TestCase):
    def test_names(self):
        assert DCIMMode.from_name('dual') == DCIMMode()
        assert DCIMMode.from_name('v2a').direction == 'v_to_a'
        assert DCIMMode.from_name('a2v').direction == 'a_to_v'
        assert not DCIMMode.from_name('no-purify').purification
        assert not DCIMMode.from_name('no-complete').completion
        assert DCIMMode.from_name('last2').layers == 'last_two'
        assert len(set(repr(DCIMMode.from_name(n)) for n in DCIMMode.NAMES)) == 6
        with self.assertRaises(ConfigError):
            DCIMMode.from_name('cross-attention')

    def test_completion_directions(self):
        assert DCIMMode(direction='v_to_a').completes('audio')
        assert not DCIMMode(direction='v_to_a').completes('visual')
        assert DCIMMode(direction='a_to_v').completes('visual')
        assert not DCIMMode(direction='a_to_v').completes('audio')
        assert not DCIMMode(completion=False).completes('audio')

    def test_adapter_counts(self):
        per_layer = 2 * Adapter.count(DIM, 4, DIM)
        assert adapter_param_count(DCIMMode(), 5, DIM, 4) == 5 * per_layer
        assert adapter_param_count(DCIMMode(layers='last_two'), 5, DIM, 4) == 2 * per_layer
        assert adapter_param_count(DCIMMode(purification=False, completion=False), 5, DIM, 4) == 0
        assert adapter_param_count(DCIMMode(), 5, DIM, 4, sharing='per_path') == 10 * per_layer
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(0))
        assert layer.param_count() == per_layer


class TestLayer(unittest.TestCase):
    def test_two_shared_adapters(self):
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(0))
        assert layer.adapter('attn', 'self') is layer.adapter('attn', 'cross')
        assert layer.adapter('conv', 'self') is layer.adapter('conv', 'cross')
        assert layer.adapter('attn', 'self') is not layer.adapter('conv', 'self')
        assert len(layer._children) == 2

    def test_per_path_adapters(self):
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(0), sharing='per_path')
        assert layer.adapter('attn', 'self') is not layer.adapter('attn', 'cross')
        assert len(layer._children) == 4

    def test_last_two_scope(self):
        active = [DCIMLayer(DIM, 4, DCIMMode(layers='last_two'), i, 5, np.random.default_rng(0)).active
                  for i in range(5)]
        assert active == [False, False, False, True, True]

    def test_zero_init_is_decoupled(self):
        a_blocks, v_blocks = _blocks()
        x_a, x_v, mask = _streams()
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(3))
        y_a, y_v, taps = layer(a_blocks[0], v_blocks[0], x_a, x_v, mask)
        assert np.array_equal(y_a.data, a_blocks[0](x_a, mask)[0].data)
        assert np.array_equal(y_v.data, v_blocks[0](x_v, mask)[0].data)
        assert not np.any(taps['audio'].data)

    def test_decoupled_mode(self):
        a_blocks, v_blocks = _blocks()
        x_a, x_v, mask = _streams()
        layer = DCIMLayer(DIM, 4, DCIMMode(purification=False, completion=False), 0, 5, np.random.default_rng(3))
        assert layer.param_count() == 0
        y_a, y_v, taps = layer(a_blocks[0], v_blocks[0], x_a, x_v, mask)
        assert taps == {'audio': None, 'visual': None}
        y_a2, _, _ = layer(a_blocks[0], v_blocks[0], x_a, _perturbed(x_v, 4), mask)
        assert np.array_equal(y_a.data, y_a2.data)
        assert np.array_equal(y_a.data, a_blocks[0](x_a, mask)[0].data)

    def test_dual_mode_couples_streams(self):
        a_blocks, v_blocks = _blocks()
        x_a, x_v, mask = _streams()
        rng = np.random.default_rng(5)
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, rng)
        randomize(layer, rng)
        y_a, y_v, _ = layer(a_blocks[0], v_blocks[0], x_a, x_v, mask)
        y_a2, _, _ = layer(a_blocks[0], v_blocks[0], x_a, _perturbed(x_v, 6), mask)
        _, y_v2, _ = layer(a_blocks[0], v_blocks[0], _perturbed(x_a, 7), x_v, mask)
        assert np.max(np.abs(y_a.data - y_a2.data)) > 1e-6
        assert np.max(np.abs(y_v.data - y_v2.data)) > 1e-6

    def test_one_way_modes(self):
        a_blocks, v_blocks = _blocks()
        x_a, x_v, mask = _streams()
        for direction, quiet in (('v_to_a', 'visual'), ('a_to_v', 'audio')):
            rng = np.random.default_rng(8)
            layer = DCIMLayer(DIM, 4, DCIMMode(direction=direction), 0, 5, rng)
            randomize(layer, rng)
            base = layer(a_blocks[0], v_blocks[0], x_a, x_v, mask)
            if quiet == 'visual':
                moved = layer(a_blocks[0], v_blocks[0], _perturbed(x_a, 9), x_v, mask)
                assert np.max(np.abs(base[1].data - moved[1].data)) <= 1e-12
                assert np.max(np.abs(base[0].data - moved[0].data)) > 1e-6
            else:
                moved = layer(a_blocks[0], v_blocks[0], x_a, _perturbed(x_v, 9), mask)
                assert np.max(np.abs(base[0].data - moved[0].data)) <= 1e-12

    def test_alignment_error(self):
        a_blocks, v_blocks = _blocks()
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(0))
        x_a = T.Tensor(np.zeros((1, 6, DIM)))
        x_v = T.Tensor(np.zeros((1, 5, DIM)))
        with self.assertRaises(AlignmentError):
            layer(a_blocks[0], v_blocks[0], x_a, x_v, np.zeros((1, 6), dtype=bool))

    def test_downsampling_block_rejected(self):
        cfg = ConformerBlockConfig(dim=DIM, n_heads=2, conv_kernel=3, ff_expansion=2, conv_stride=2)
        block = ConformerBlock(cfg, np.random.default_rng(0))
        _, v_blocks = _blocks()
        x_a, x_v, mask = _streams()
        layer = DCIMLayer(DIM, 4, DCIMMode(), 0, 5, np.random.default_rng(0))
        with self.assertRaises(ConfigError):
            layer(block, v_blocks[0], x_a, x_v, mask)

    def test_gradient(self):
        rng = np.random.default_rng(10)
        a_blocks, v_blocks = _blocks(11)
        layer = DCIMLayer(DIM, 4, DCIMMode(), 1, 5, rng)
        randomize(layer, rng)
        x_a = T.Tensor(rng.standard_normal((2, 5, DIM)), requires_grad=True)
        x_v = T.Tensor(rng.standard_normal((2, 5, DIM)), requires_grad=True)
        mask = lengths_to_mask([5, 3], 5)
        wa, wv = (T.Tensor(rng.standard_normal((2, 5, DIM))) for _ in range(2))

        def loss():
            y_a, y_v, _ = layer(a_blocks[0], v_blocks[0], x_a, x_v, mask)
            return T.add(T.sum(T.mul(y_a, wa)), T.sum(T.mul(y_v, wv)))
        params = [layer.adapter('attn', 'self').l1.weight, layer.adapter('conv', 'self').l3.weight,
                  v_blocks[0].attn.wq.weight]
        report = check_gradients(loss, [x_a, x_v] + params, name='dcim', max_entries=12, rng=rng)
        assert report.passed, str(report)


class TestStack(unittest.TestCase):
    def test_stack_is_iterated_layers(self):
        a_blocks, v_blocks = _blocks(n=3)
        rng = np.random.default_rng(12)
        layers = [DCIMLayer(DIM, 4, DCIMMode(), i, 3, rng) for i in range(3)]
        for layer in layers:
            randomize(layer, rng)
        x_a, x_v, mask = _streams()
        s_a, s_v, taps = run_dcim_stack(layers, a_blocks, v_blocks, x_a, x_v, mask)
        i_a, i_v = x_a, x_v
        for layer, ab, vb in zip(layers, a_blocks, v_blocks):
            i_a, i_v, _ = layer(ab, vb, i_a, i_v, mask)
        assert np.array_equal(s_a.data, i_a.data)
        assert np.array_equal(s_v.data, i_v.data)
        assert len(taps) == 3

    def test_stack_size_mismatch(self):
        a_blocks, v_blocks = _blocks(n=2)
        layers = [DCIMLayer(DIM, 4, DCIMMode(), 0, 3, np.random.default_rng(0))]
        x_a, x_v, mask = _streams()
        with self.assertRaises(ConfigError):
            run_dcim_stack(layers, a_blocks, v_blocks, x_a, x_v, mask)

    def test_taps(self):
        assert tap_layers(DCIMMode(), 5) == [1, 3]
        assert tap_layers(DCIMMode(), 1) == []
        assert tap_layers(DCIMMode(layers='last_two'), 5) == [3]
        a_blocks, v_blocks = _blocks(n=5)
        layers = [DCIMLayer(DIM, 4, DCIMMode(), i, 5, np.random.default_rng(i)) for i in range(5)]
        x_a, x_v, mask = _streams()
        _, _, layer_taps = run_dcim_stack(layers, a_blocks, v_blocks, x_a, x_v, mask)
        assert len(intermediate_tap(layer_taps)) == 2
        assert len(intermediate_tap(layer_taps, 'both')) == 4
        assert intermediate_tap(layer_taps[:1]) == []
        with self.assertRaises(ConfigError):
            intermediate_tap(layer_taps, 'lips')

    def test_tap_gradient_reaches_adapter(self):
        a_blocks, v_blocks = _blocks(n=2)
        layers = [DCIMLayer(DIM, 4, DCIMMode(), i, 2, np.random.default_rng(i)) for i in range(2)]
        x_a, x_v, mask = _streams()
        with T.Tape() as tape:
            _, _, layer_taps = run_dcim_stack(layers, a_blocks, v_blocks, x_a, x_v, mask)
            (tap,) = intermediate_tap(layer_taps)
            loss = T.sum(T.mul(tap, T.Tensor(np.random.default_rng(13).standard_normal(tap.shape))))
        grads = tape.backward(loss)
        assert np.any(grads[layers[1].adapter('conv', 'self').l3.weight])


if __name__ == '__main__':
    logging.basicConfig(level=logging.DEBUG)
    unittest.main()
