import numpy as np
import pytest

from dada import autodiff as ad
from dada.errors import ConfigError, ParseError
from dada.models import (
    MlpConfig,
    MlpParams,
    ModelBundle,
    discriminate,
    features,
    init_bundle,
    load_bundle,
    mlp_forward,
    predict,
    predict_labels,
    save_bundle,
)


def small_bundle(K=3, seed=5, activation="tanh"):
    return init_bundle(K, seed, extractor_hidden=(6,), feature_dim=4, predictor_hidden=(5,),
                       discriminator_hidden=(5,), activation=activation)


def test_same_seed_gives_identical_bundles():
    a, b = init_bundle(2, 7), init_bundle(2, 7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 12345])
def test_discriminators_start_different(seed):
    b = init_bundle(2, seed)
    assert not np.array_equal(b.D1.layers[0][0].data, b.D2.layers[0][0].data)


def test_uniform_init_respects_fan_in_bound():
    b = init_bundle(4, 3)
    for net in b.networks().values():
        for w, bias in net.layers:
            assert np.abs(w.data).max() <= np.sqrt(6.0 / w.shape[0])
            np.testing.assert_array_equal(bias.data, 0.0)


def test_zero_extractor_gives_zero_features():
    b = small_bundle()
    for w, bias in b.G.layers:
        w.data = np.zeros_like(w.data)
        bias.data = np.zeros_like(bias.data)
    np.testing.assert_array_equal(features(b, np.random.default_rng(0).normal(size=(3, 2))).data, 0.0)


def test_batch_independence():
    b = small_bundle()
    x = np.random.default_rng(1).normal(size=(7, 2))
    full = predict(b, features(b, x)).data
    for i in range(len(x)):
        np.testing.assert_allclose(predict(b, features(b, x[i:i + 1])).data, full[i:i + 1], rtol=1e-13)


def test_output_widths_for_three_classes():
    b = small_bundle(K=3)
    f = features(b, np.zeros((2, 2)))
    assert predict(b, f).shape == (2, 3)
    assert discriminate(b, "D1", f).shape == (2, 6)
    assert discriminate(b, "D2", f).shape == (2, 6)


def test_discriminators_have_equal_parameter_counts():
    b = init_bundle(3, 0)
    ref = MlpParams.init(MlpConfig(16, (32,), 6))
    assert b.D1.num_parameters() == b.D2.num_parameters() == ref.num_parameters()
    assert {id(p) for p in b.D1.parameters()}.isdisjoint(id(p) for p in b.D2.parameters())


def test_predict_labels_is_argmax_of_softmax():
    b = small_bundle()
    x = np.random.default_rng(2).normal(size=(20, 2))
    logits = predict(b, features(b, x))
    np.testing.assert_array_equal(predict_labels(b, x), np.argmax(ad.softmax(logits).data, axis=1))


def test_forward_gradcheck():
    b = small_bundle()
    x = np.random.default_rng(3).normal(size=(4, 2))
    c = np.random.default_rng(4).normal(size=(4, 4))
    assert ad.grad_check(lambda t: ad.reduce_sum(ad.mul(features(b, t), c)), x) < 1e-5


def test_discriminate_gradcheck():
    b = small_bundle()
    feat = np.random.default_rng(5).normal(size=(4, 4))
    c = np.random.default_rng(6).normal(size=(4, 6))
    assert ad.grad_check(lambda t: ad.reduce_sum(ad.mul(discriminate(b, "D2", t), c)), feat) < 1e-5


def test_wrong_input_width():
    with pytest.raises(ConfigError):
        mlp_forward(small_bundle().G, np.zeros((2, 3)))


def test_bad_configs():
    with pytest.raises(ConfigError):
        MlpConfig(2, (0,), 3)
    with pytest.raises(ConfigError):
        MlpConfig(2, (4,), 3, activation="sigmoid")
    with pytest.raises(ConfigError):
        init_bundle(1, 0)
    with pytest.raises(ConfigError):
        init_bundle(2, -1)


def test_bundle_rejects_inconsistent_dims():
    b = small_bundle(K=3)
    with pytest.raises(ConfigError):
        ModelBundle(b.G, b.F, b.D1, b.D2, K=2)
    wrong_d = MlpParams.init(MlpConfig(4, (7,), 6))
    with pytest.raises(ConfigError):
        ModelBundle(b.G, b.F, b.D1, wrong_d, K=3)


def test_copy_is_independent():
    b = small_bundle()
    c = b.copy()
    c.G.layers[0][0].data = c.G.layers[0][0].data + 1.0
    assert not np.array_equal(b.G.layers[0][0].data, c.G.layers[0][0].data)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_save_load_round_trip(tmp_path, activation):
    b = small_bundle(activation=activation)
    path = tmp_path / "m.bin"
    save_bundle(b, path)
    loaded = load_bundle(path)
    assert loaded.K == b.K
    for name in ("G", "F", "D1", "D2"):
        assert getattr(loaded, name).config.dims == getattr(b, name).config.dims
        assert getattr(loaded, name).config.activation == activation
    for pa, pb in zip(b.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE")
    with pytest.raises(ParseError):
        load_bundle(bad)
    good = tmp_path / "m.bin"
    save_bundle(small_bundle(), good)
    trunc = tmp_path / "t.bin"
    trunc.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_bundle(trunc)
