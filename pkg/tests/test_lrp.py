import numpy as np
import pytest

from pifnet.errors import ConfigError
from pifnet.lrp import LrpConfig, Start, heatmap, parse_start, propagate, relprop_affine, relprop_pif
from pifnet.pif import PifLayerState, make_patch_grid
from pifnet.tensor import Rng

from oracles import bias_free_network, input_box, relevance_sums, small_conv_spec, small_pif_spec


def test_two_to_one_example():
    r = relprop_affine(np.array([[1.0, -1.0]]), np.array([[1.0, 1.0]]), np.array([[1.0]]), LrpConfig(5, 4))
    np.testing.assert_allclose(r, [[5.0, -4.0]], atol=1e-8)


def test_beta_zero_is_alpha_one():
    w = np.array([[2.0, -1.0, 0.5]])
    a = np.array([[1.0, 2.0, 2.0]])
    r = relprop_affine(w, a, np.array([[3.0]]), LrpConfig(1, 0))
    np.testing.assert_allclose(r, [[3.0 * 2 / 3, 0.0, 3.0 * 1 / 3]], atol=1e-8)


def test_negative_activations_use_opposite_weight_signs():
    # a = -1 with w = -2 contributes +2 to the positive part
    r = relprop_affine(np.array([[-2.0, 1.0]]), np.array([[-1.0, -1.0]]), np.array([[1.0]]), LrpConfig(2, 1))
    np.testing.assert_allclose(r, [[2.0, -1.0]], atol=1e-8)


@pytest.mark.parametrize("alpha,beta", [(2, 4), (1, 1), (-1, -2)])
def test_alpha_must_equal_one_plus_beta(alpha, beta):
    with pytest.raises(ConfigError):
        LrpConfig(alpha, beta)


def test_zero_denominators_give_zero_relevance():
    r = relprop_affine(np.ones((2, 3)), np.zeros((1, 3)), np.ones((1, 2)))
    np.testing.assert_array_equal(r, np.zeros((1, 3)))


@pytest.mark.parametrize("make_spec", [small_conv_spec, small_pif_spec])
@pytest.mark.parametrize("seed", range(3))
def test_bias_free_networks_conserve_relevance(make_spec, seed):
    spec = make_spec()
    net = bias_free_network(spec, seed)
    x = np.random.default_rng(seed).uniform(0.1, 1.0, size=(1,) + spec.input_shape)
    sums = relevance_sums(net, x, Start(), LrpConfig())
    assert sums[0] != 0
    np.testing.assert_allclose(sums, sums[0], rtol=0, atol=1e-6 * max(1.0, abs(sums[0])))


def test_output_start_begins_at_logit():
    spec = small_conv_spec()
    net = bias_free_network(spec, 0)
    x = np.random.default_rng(0).uniform(size=(1,) + spec.input_shape)
    p = net.forward(x).data.item()
    sums = relevance_sums(net, x, Start(), LrpConfig())
    assert sums[0] == pytest.approx(np.log(p / (1 - p)), abs=1e-9)


@pytest.mark.parametrize("bank", range(9))
def test_patch_start_is_confined_to_receptive_field(bank):
    spec = small_pif_spec()
    net = bias_free_network(spec, 1)
    layer, state = net.pif_state()
    x = np.random.default_rng(bank).uniform(0.1, 1.0, size=(1,) + spec.input_shape)
    rel = propagate(net, net.trace(x), Start(layer, 1, bank), LrpConfig())[0]
    patch = state.receptive_slices(bank)
    box = input_box(spec, layer - 1, [(s.start, s.stop - 1) for s in patch])
    inside = np.zeros(rel.shape, dtype=bool)
    inside[(Ellipsis,) + tuple(slice(max(lo, 0), hi + 1) for lo, hi in box)] = True
    assert np.abs(rel[inside]).sum() > 0
    assert np.all(rel[~inside] == 0)


def test_relprop_pif_touches_only_patch_inputs():
    state = PifLayerState.init(make_patch_grid((8, 8, 8), 4), 2, 2, 3, Rng(0))
    a = np.random.default_rng(0).uniform(size=(1, 2, 8, 8, 8))
    orig_shape, over_shape = state.output_shapes(1)
    r_orig, r_over = np.zeros(orig_shape), np.ones(over_shape)
    out = relprop_pif(state, a, [r_orig, r_over])
    mask = np.zeros_like(out, dtype=bool)
    mask[(Ellipsis,) + state.receptive_slices(8)] = True
    assert np.all(out[~mask] == 0) and out[mask].any()


def test_heatmap_zero_input_is_zero():
    spec = small_conv_spec()
    net = bias_free_network(spec, 0)
    hm = heatmap(net, np.zeros(spec.input_shape))
    assert hm.volume.shape == spec.input_shape[1:]
    assert np.all(hm.volume == 0)


def test_heatmap_is_deterministic():
    spec = small_pif_spec()
    net = bias_free_network(spec, 2)
    v = np.random.default_rng(2).uniform(size=spec.input_shape[1:])
    a, b = heatmap(net, v), heatmap(net, v)
    assert a.checksum == b.checksum
    np.testing.assert_array_equal(a.volume, b.volume)


def test_parse_start():
    net = bias_free_network(small_pif_spec(), 0)
    assert parse_start("output").is_output
    assert parse_start("4:2") == Start(4, 2)
    assert parse_start("pif:patch3:filter0", net) == Start(6, 0, 3)
    for bad in ("layer4", "pif:3", ""):
        with pytest.raises(ConfigError):
            parse_start(bad, net)


def test_start_out_of_range():
    spec = small_pif_spec()
    net = bias_free_network(spec, 0)
    x = np.ones((1,) + spec.input_shape)
    with pytest.raises(ConfigError):
        propagate(net, net.trace(x), Start(6, 5), LrpConfig())
    with pytest.raises(ConfigError):
        propagate(net, net.trace(x), Start(0, 0, bank=1), LrpConfig())
