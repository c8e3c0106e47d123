from dataclasses import replace

import numpy as np
import pytest

from biqc.ansatz import AnsatzConfig
from biqc.model import (
    VARIANTS,
    BiqcConfig,
    apply_ablation,
    biqc_backward,
    biqc_forward,
    circuit_budget,
    init_params,
    param_shapes,
)
from oracles import generic_params, model_fd_check

SMALL = BiqcConfig(image_h=8, image_w=8, ansatz=AnsatzConfig(2, 1, 1))


def _images(rng, n, h=8, w=8):
    return rng.uniform(-np.pi / 2, np.pi / 2, (n, h, w))


def test_patch_size_rule():
    assert BiqcConfig(image_h=32, image_w=32).patch_size == 4
    assert BiqcConfig(image_h=33, image_w=40).patch_size == 32
    assert BiqcConfig(image_h=224, image_w=224).patch_size == 32
    assert BiqcConfig(image_h=64, image_w=64, patch_size=8).patch_size == 8


@pytest.mark.parametrize(
    "variant,dim", [("none", 24), ("Ab-EVC", 4), ("Ab-OFC", 20), ("Ab-HSF", 16), ("Ab-Quantum", 24)]
)
def test_fusion_dims(variant, dim):
    cfg = apply_ablation(BiqcConfig(), variant)
    assert cfg.fusion_dim == dim
    out = biqc_forward(cfg, init_params(cfg, 0), np.zeros((2, 8, 8)))
    assert out.fused.shape == (2, dim)


def test_ablation_structure():
    hsf = apply_ablation(BiqcConfig(), "Ab-HSF")
    assert not hsf.uses_quantum and hsf.num_patches == 0
    assert not any(k.startswith(("theta", "enc", "attn")) for k in param_shapes(hsf))
    evc = apply_ablation(BiqcConfig(), "Ab-EVC")
    assert not evc.uses_cnn and not evc.uses_attention_patch and evc.uses_metric_patch
    q = param_shapes(apply_ablation(BiqcConfig(), "Ab-Quantum"))
    assert q["mlp1.weight"] == (4, 8) and q["mlp2.weight"] == (4, 4)
    assert not any(k.startswith("theta") for k in q)
    with pytest.raises(ValueError, match="unknown"):
        apply_ablation(BiqcConfig(), "Ab-XYZ")


def test_param_shapes_from_config():
    params = init_params(BiqcConfig(), 3)
    assert {k: v.shape for k, v in params.items()} == param_shapes(BiqcConfig())
    assert params["theta0"].shape == (3, 4, 3)
    assert params["enc0.weight"].shape == (8, 16)
    assert params["enc1.weight"].shape == (8, 4)


def test_zero_image_zero_head_is_half():
    cfg = BiqcConfig()
    params = init_params(cfg, 0)
    params["head.weight"][:] = 0
    assert biqc_forward(cfg, params, np.zeros((8, 8))).prob[0] == 0.5


def test_hsf_ablation_has_no_quantum_inputs():
    cfg = apply_ablation(BiqcConfig(), "Ab-HSF")
    trace = biqc_forward(cfg, init_params(cfg, 0), np.zeros((8, 8)))
    assert trace.records == [] and trace.h_metric is None and trace.h_attention is None
    assert trace.counter.circuits == 0


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    x = _images(rng, 3)
    params = init_params(BiqcConfig(), 1)
    a, b = biqc_forward(BiqcConfig(), params, x), biqc_forward(BiqcConfig(), params, x)
    assert np.array_equal(a.prob, b.prob) and np.array_equal(a.fused, b.fused)
    assert a.metric_regions == b.metric_regions and a.attention_regions == b.attention_regions


def test_batch_equals_single_samples():
    rng = np.random.default_rng(2)
    x = _images(rng, 4)
    params = init_params(BiqcConfig(), 2)
    batch = biqc_forward(BiqcConfig(), params, x).prob
    singles = [biqc_forward(BiqcConfig(), params, img).prob[0] for img in x]
    assert np.allclose(batch, singles, atol=1e-14)


def test_trace_contents():
    rng = np.random.default_rng(4)
    trace = biqc_forward(BiqcConfig(), init_params(BiqcConfig(), 0), _images(rng, 2))
    assert trace.z_lsf.shape == (2, 16, 2, 2) and trace.attention_map.shape == (2, 2, 2)
    assert all(r.inside(8, 8) for r in trace.attention_regions + trace.metric_regions)
    assert np.all((trace.prob > 0) & (trace.prob < 1))
    assert np.all((trace.gate > 0) & (trace.gate < 1))


def test_logit_clamp_keeps_probability_open():
    cfg = apply_ablation(BiqcConfig(), "Ab-HSF")
    params = init_params(cfg, 0)
    params["head.bias"][:] = 1e4
    p = biqc_forward(cfg, params, np.zeros((8, 8))).prob[0]
    assert 0 < p < 1


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_gradient(variant):
    cfg = apply_ablation(SMALL, variant)
    rng = np.random.default_rng(11)
    x, y = _images(rng, 3), np.array([0.0, 1.0, 1.0])
    assert model_fd_check(cfg, generic_params(cfg, 5), x, y) < 1e-3


def test_patch_modes_gradients():
    rng = np.random.default_rng(12)
    x, y = _images(rng, 2), np.array([1.0, 0.0])
    for mode in ("metric", "attention"):
        cfg = replace(SMALL, patch_mode=mode)
        assert cfg.num_patches == 1
        assert model_fd_check(cfg, generic_params(cfg, 6), x, y) < 1e-3


def test_two_block_gradient():
    cfg = BiqcConfig(ansatz=AnsatzConfig(2, 2, 1))
    rng = np.random.default_rng(13)
    assert model_fd_check(cfg, generic_params(cfg, 7), _images(rng, 2), np.array([1.0, 0.0])) < 1e-3


def test_matched_label_gives_small_gradients():
    cfg = apply_ablation(SMALL, "Ab-HSF")
    params = init_params(cfg, 0)
    params["head.bias"][:] = 40.0
    trace = biqc_forward(cfg, params, np.zeros((1, 8, 8)), grad=True)
    grads = biqc_backward(cfg, params, trace, [1.0])
    assert max(np.max(np.abs(g)) for g in grads.values()) < 1e-12


def test_backward_rejects_mismatched_trace():
    params = init_params(BiqcConfig(), 0)
    trace = biqc_forward(BiqcConfig(), params, np.zeros((1, 8, 8)))
    with pytest.raises(ValueError, match="Jacobians"):
        biqc_backward(BiqcConfig(), params, trace, [1.0])
    hsf = apply_ablation(BiqcConfig(), "Ab-HSF")
    with pytest.raises(ValueError):
        biqc_backward(hsf, init_params(hsf, 0), trace, [1.0])


def test_circuit_count_independent_of_resolution():
    counts = []
    for h, patch in ((32, 32), (224, 32)):
        cfg = BiqcConfig(image_h=h, image_w=h, patch_size=patch)
        trace = biqc_forward(cfg, init_params(cfg, 0), np.zeros((2, h, h)), grad=True)
        counts.append((trace.circuits_per_sample(), trace.counter.gates / 2, circuit_budget(cfg)["circuits"]))
    assert counts[0] == counts[1]
    assert counts[0][0] == counts[0][2] == 2 * 2 * (1 + 2 * 44)


def test_noise_zero_matches_noiseless_bitwise():
    rng = np.random.default_rng(5)
    x = _images(rng, 3)
    params = init_params(BiqcConfig(), 0)
    quiet = biqc_forward(BiqcConfig(), params, x).prob
    zero = replace(BiqcConfig(), ansatz=AnsatzConfig(noise_level=0.0))
    rngs = [np.random.default_rng(i) for i in range(3)]
    assert np.array_equal(biqc_forward(zero, params, x, rngs=rngs).prob, quiet)


def test_noise_reproducible_and_bounded():
    rng = np.random.default_rng(6)
    x = _images(rng, 3)
    noisy = replace(BiqcConfig(), ansatz=AnsatzConfig(noise_level=0.1))
    params = init_params(noisy, 0)
    run = lambda: biqc_forward(noisy, params, x, rngs=[np.random.default_rng([7, i]) for i in range(3)])
    a, b = run(), run()
    assert np.array_equal(a.prob, b.prob)
    clean = biqc_forward(BiqcConfig(), params, x)
    assert np.max(np.abs(a.h_metric - clean.h_metric)) > 0
    with pytest.raises(ValueError, match="generator"):
        biqc_forward(noisy, params, x)


def test_input_validation():
    params = init_params(BiqcConfig(), 0)
    with pytest.raises(ValueError, match="normalized"):
        biqc_forward(BiqcConfig(), params, np.full((8, 8), 2.0))
    with pytest.raises(ValueError, match="shape"):
        biqc_forward(BiqcConfig(), params, np.zeros((9, 8)))
    with pytest.raises(ValueError, match="parameter"):
        biqc_forward(apply_ablation(BiqcConfig(), "Ab-HSF"), params, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        BiqcConfig(patch_mode="neither")
    with pytest.raises(ValueError, match="does not fit"):
        BiqcConfig(image_h=8, image_w=8, patch_size=16)
