import math

import numpy as np
import pytest

from mmfusion.core import ParameterStore, Tensor, grad_check, ops
from mmfusion.interp import ObservationBatch, init_interp_params, interpolate, reference_grid
from mmfusion.models import (EARLY, LATE, TEXT_ONLY, TFIDF_1NN, TS_ONLY, USE_GRU, WE_CNN,
                             WSE_GRU, Batch, FusionModel, FusionSpec, SentenceBatch,
                             TextEncoderSpec, bce_loss, encode_text, forward_early,
                             forward_late, forward_ts, gru_run, gru_sequence, init_dense,
                             init_gru, init_text_encoder)
from mmfusion.series import ChannelSeries, EpisodeRecord


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def gru_oracle(x, W, U, b):
    """Direct recurrence: z, r gates, candidate, h = (1 - z) h + z cand, h0 = 0."""
    H = U.shape[0]
    h = np.zeros(H)
    for x_t in x:
        a = x_t @ W + b
        z = sigmoid(a[:H] + h @ U[:, :H])
        r = sigmoid(a[H:2 * H] + h @ U[:, H:2 * H])
        cand = np.tanh(a[2 * H:] + (r * h) @ U[:, 2 * H:])
        h = (1 - z) * h + z * cand
    return h


def gru_store(rng, n_in, H, prefix="pred.gru", scale=1.0):
    store = ParameterStore()
    store.add(prefix + ".W", rng.normal(size=(n_in, 3 * H)) * scale)
    store.add(prefix + ".U", rng.normal(size=(H, 3 * H)) * scale)
    store.add(prefix + ".b", rng.normal(size=3 * H) * scale)
    return store


# --- GRU ---------------------------------------------------------------------------

def test_gru_all_zero_gives_zero_state():
    store = ParameterStore()
    for n, shape in (("pred.gru.W", (2, 9)), ("pred.gru.U", (3, 9)), ("pred.gru.b", (9,))):
        store.add(n, np.zeros(shape))
    np.testing.assert_array_equal(gru_sequence(np.zeros((4, 2)), store).data, 0.0)


def test_gru_empty_sequence_returns_initial_state():
    store = gru_store(np.random.default_rng(0), 2, 3)
    np.testing.assert_array_equal(gru_sequence(np.zeros((0, 2)), store).data, np.zeros(3))


def test_gru_matches_recurrence_oracle():
    rng = np.random.default_rng(1)
    store = gru_store(rng, 4, 5)
    x = rng.normal(size=(3, 4))
    ref = gru_oracle(x, *(store[f"pred.gru.{k}"].data for k in "WUb"))
    np.testing.assert_allclose(gru_sequence(x, store).data, ref, rtol=1e-13)


def test_gru_mask_freezes_padded_steps():
    rng = np.random.default_rng(2)
    store = gru_store(rng, 2, 3)
    x = rng.normal(size=(2, 5, 2))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=float)
    out = gru_run(store, "pred.gru", Tensor(x), mask=mask).data
    W, U, b = (store[f"pred.gru.{k}"].data for k in "WUb")
    np.testing.assert_allclose(out[0], gru_oracle(x[0, :3], W, U, b), rtol=1e-13)
    np.testing.assert_allclose(out[1], gru_oracle(x[1], W, U, b), rtol=1e-13)


# --- text encoders ---------------------------------------------------------------------

def encoder(variant, input_dim, rng, **kw):
    spec = TextEncoderSpec(variant, input_dim, **kw)
    store = ParameterStore()
    init_text_encoder(spec, store, rng)
    return spec, store


def test_tfidf_encoder_with_zero_weights_is_zero():
    spec, store = encoder(TFIDF_1NN, 10, np.random.default_rng(3))
    for n in store.names():
        store[n].data[...] = 0.0
    out = encode_text(spec, np.random.default_rng(4).random((2, 10)), store).data
    assert out.shape == (2, 128)
    np.testing.assert_array_equal(out, 0.0)


def test_sentence_gru_on_empty_sequence_uses_zero_state():
    spec, store = encoder(USE_GRU, 4, np.random.default_rng(5), hidden=6)
    feats = SentenceBatch.from_sequences([np.zeros((0, 4))], 4)
    out = encode_text(spec, feats, store).data
    ref = np.maximum(store["text.enc.b"].data, 0.0)
    np.testing.assert_array_equal(out[0], ref)


def test_cnn_constant_rows_pool_equals_single_window():
    rng = np.random.default_rng(6)
    spec, store = encoder(WE_CNN, 3, rng, kernels=5, width=2)
    row = rng.normal(size=3)
    feats = np.tile(row, (1, 6, 1))
    out = encode_text(spec, feats, store).data
    K, b = store["text.conv.K"].data, store["text.conv.b"].data
    window = np.maximum(np.einsum("we,wek->k", np.tile(row, (2, 1)), K) + b, 0.0)
    ref = np.maximum(window @ store["text.enc.W"].data + store["text.enc.b"].data, 0.0)
    np.testing.assert_allclose(out[0], ref, rtol=1e-13)


@pytest.mark.parametrize("variant, feats", [
    (TFIDF_1NN, np.zeros((2, 3, 4))),
    (WE_CNN, np.zeros((2, 4))),
    (USE_GRU, np.zeros((2, 4))),
])
def test_feature_variant_mismatch(variant, feats):
    spec, store = encoder(variant, 4, np.random.default_rng(7))
    with pytest.raises(ValueError):
        encode_text(spec, feats, store)


def test_encoders_are_pure_and_finite():
    rng = np.random.default_rng(8)
    cases = [
        (TFIDF_1NN, rng.random((3, 7))),
        (WE_CNN, rng.normal(size=(3, 5, 4))),
        (USE_GRU, SentenceBatch.from_sequences([rng.normal(size=(n, 4)) for n in (1, 3, 0)], 4)),
        (WSE_GRU, SentenceBatch.from_sequences([rng.normal(size=(n, 4)) for n in (2, 2, 1)], 4)),
    ]
    for variant, feats in cases:
        spec, store = encoder(variant, 7 if variant == TFIDF_1NN else 4, rng)
        a, b = encode_text(spec, feats, store).data, encode_text(spec, feats, store).data
        assert a.shape == (3, 128) and np.all(np.isfinite(a))
        assert a.tobytes() == b.tobytes()


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        TextEncoderSpec("bert", 10)


# --- fusion heads ------------------------------------------------------------------------

def pred_store(rng, D, H, text_dim, proj_dim=3, mode=LATE):
    store = ParameterStore()
    init_interp_params(store, D, reference_grid(12, 5))
    init_gru(store, rng, "pred.gru", 3 * D, H)
    init_dense(store, rng, "pred.head", H + (text_dim if mode == LATE else 0), 1)
    store["pred.head.b"].data[...] = rng.normal()
    if mode == EARLY:
        init_dense(store, rng, "pred.early.proj", text_dim, proj_dim)
        store["pred.early.proj.b"].data[...] = rng.normal(size=proj_dim)
        store.set("pred.early.W_text", rng.normal(size=(proj_dim, 3 * H)))
    return store


def test_late_zero_head_gives_half():
    rng = np.random.default_rng(9)
    store = pred_store(rng, 2, 4, 5)
    store["pred.head.W"].data[...] = 0.0
    store["pred.head.b"].data[...] = 0.0
    assert forward_late(rng.normal(size=(6, 5)), rng.normal(size=5), store).item() == 0.5


def test_late_matches_composed_oracle():
    rng = np.random.default_rng(10)
    store = pred_store(rng, 2, 4, 5)
    block, v = rng.normal(size=(6, 5)), rng.normal(size=5)
    h = gru_oracle(block.T, *(store[f"pred.gru.{k}"].data for k in "WUb"))
    logit = np.concatenate([h, v]) @ store["pred.head.W"].data[:, 0] + store["pred.head.b"].data[0]
    assert forward_late(block, v, store).item() == pytest.approx(sigmoid(logit), rel=1e-13)


def test_late_with_zero_text_side_equals_ts_only():
    rng = np.random.default_rng(11)
    store = pred_store(rng, 2, 4, 5)
    store["pred.head.W"].data[4:] = 0.0
    block = rng.normal(size=(6, 5))
    ts_store = ParameterStore()
    ts_store.update(store, "pred.gru.")
    ts_store.add("pred.head.W", store["pred.head.W"].data[:4].copy())
    ts_store.add("pred.head.b", store["pred.head.b"].data.copy())
    late = forward_late(block, np.zeros(5), store).item()
    assert late == forward_ts(block, ts_store).item()


def test_early_zero_projection_reduces_to_ts_only():
    rng = np.random.default_rng(12)
    store = pred_store(rng, 2, 4, 5, mode=EARLY)
    block, v = rng.normal(size=(6, 5)), rng.normal(size=5)
    store["pred.early.proj.W"].data[...] = 0.0
    store["pred.early.proj.b"].data[...] = 0.0
    assert forward_early(block, v, store).item() == forward_ts(block, store).item()


def test_early_single_step_is_concatenated_gru_step():
    rng = np.random.default_rng(13)
    store = pred_store(rng, 2, 4, 5, mode=EARLY)
    block, v = rng.normal(size=(6, 1)), rng.normal(size=5)
    proj = v @ store["pred.early.proj.W"].data + store["pred.early.proj.b"].data
    W = np.vstack([store["pred.gru.W"].data, store["pred.early.W_text"].data])
    x = np.concatenate([block[:, 0], proj])[None]
    h = gru_oracle(x, W, store["pred.gru.U"].data, store["pred.gru.b"].data)
    ref = sigmoid(h @ store["pred.head.W"].data[:, 0] + store["pred.head.b"].data[0])
    assert forward_early(block, v, store).item() == pytest.approx(ref, rel=1e-13)


def test_early_matches_concatenated_input_oracle():
    rng = np.random.default_rng(14)
    store = pred_store(rng, 2, 4, 5, mode=EARLY)
    block, v = rng.normal(size=(6, 7)), rng.normal(size=5)
    proj = v @ store["pred.early.proj.W"].data + store["pred.early.proj.b"].data
    W = np.vstack([store["pred.gru.W"].data, store["pred.early.W_text"].data])
    x = np.hstack([block.T, np.tile(proj, (7, 1))])
    h = gru_oracle(x, W, store["pred.gru.U"].data, store["pred.gru.b"].data)
    ref = sigmoid(h @ store["pred.head.W"].data[:, 0] + store["pred.head.b"].data[0])
    assert forward_early(block, v, store).item() == pytest.approx(ref, rel=1e-13)


# --- batched model -------------------------------------------------------------------------

def make_batch(rng, B=4, D=2, T=5, text_dim=6):
    recs = []
    for i in range(B):
        chans = tuple(ChannelSeries.from_unsorted(rng.uniform(0, 12, n), rng.normal(size=n))
                      for n in rng.integers(0, 5, D))
        recs.append(EpisodeRecord(str(i), chans, (), "", i % 2))
    grid = reference_grid(12, T)
    return Batch(np.array([i % 2 for i in range(B)], float),
                 obs=ObservationBatch.from_records(recs, D), grid=grid,
                 text=rng.random((B, text_dim)))


@pytest.mark.parametrize("mode", [TEXT_ONLY, TS_ONLY, EARLY, LATE])
def test_model_probabilities_in_open_interval(mode):
    rng = np.random.default_rng(15)
    batch = make_batch(rng)
    model = FusionModel(FusionSpec(mode, 2, hidden=4, text=TextEncoderSpec(TFIDF_1NN, 6)))
    store = ParameterStore()
    if mode in (EARLY, LATE):
        init_text_encoder(model.spec.text, store, rng)
    model.init_params(store, rng, grid=batch.grid)
    p = model.forward(store, batch).data
    assert p.shape == (4,) and np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(model.predict(store, batch, batch_size=3), p, rtol=1e-14)


def test_batched_late_equals_single_block_forward():
    rng = np.random.default_rng(16)
    batch = make_batch(rng)
    model = FusionModel(FusionSpec(LATE, 2, hidden=4, text=TextEncoderSpec(TFIDF_1NN, 6)))
    store = ParameterStore()
    init_text_encoder(model.spec.text, store, rng)
    model.init_params(store, rng, grid=batch.grid)
    p = model.forward(store, batch).data
    blocks = interpolate(batch.obs, batch.grid, store).data
    emb = encode_text(model.spec.text, batch.text, store).data
    for i in range(4):
        assert p[i] == pytest.approx(forward_late(blocks[i], emb[i], store).item(), rel=1e-12)


def test_text_modes_require_encoder_spec():
    with pytest.raises(ValueError):
        FusionSpec(LATE, 2)
    with pytest.raises(ValueError):
        FusionSpec("mid", 2)


@pytest.mark.parametrize("mode", [EARLY, LATE])
def test_fusion_gradients_through_interpolation(mode):
    rng = np.random.default_rng(17)
    batch = make_batch(rng, B=3)
    model = FusionModel(FusionSpec(mode, 2, hidden=4, text=TextEncoderSpec(TFIDF_1NN, 6,
                                                                          embed_dim=5)))
    store = ParameterStore()
    init_text_encoder(model.spec.text, store, rng)
    store.freeze("text.")
    model.init_params(store, rng, grid=batch.grid)
    report = grad_check(lambda: bce_loss(model.forward(store, batch), batch.labels), store)
    assert report.passed, str(report)


# --- loss ---------------------------------------------------------------------------------

@pytest.mark.parametrize("y", [0.0, 1.0])
def test_bce_at_half_is_ln2(y):
    assert bce_loss(Tensor([0.5]), [y]).item() == pytest.approx(math.log(2), abs=1e-15)


def test_bce_closed_forms():
    assert bce_loss(Tensor([0.8]), [0.0]).item() == pytest.approx(math.log(5), rel=1e-12)
    assert bce_loss(Tensor([1.0, 0.0]), [1.0, 0.0]).item() == pytest.approx(0.0, abs=1e-11)
    assert np.isfinite(bce_loss(Tensor([0.0]), [1.0]).item())


def test_bce_is_mean_over_batch():
    p, y = np.array([0.2, 0.7, 0.9]), np.array([0.0, 1.0, 0.0])
    ref = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert bce_loss(Tensor(p), y).item() == pytest.approx(ref, rel=1e-14)


def test_gru_gradient_matches_finite_differences():
    rng = np.random.default_rng(18)
    store = gru_store(rng, 3, 4, scale=0.5)
    x = rng.normal(size=(2, 5, 3))
    report = grad_check(lambda: ops.sum(ops.square(gru_run(store, "pred.gru", Tensor(x)))),
                        store)
    assert report.passed, str(report)
