import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgbp.errors import ContaminationError, InsufficientDataError, InvalidSpecError
from ppgbp.models import (
    Adam,
    Checkpoint,
    EarlyStopping,
    ModelSpec,
    Network,
    TrainConfig,
    finetune_final_layer,
    gradient_check,
    init,
    parameter_shapes,
    personal_split,
    personalize,
    predict,
    train,
)
from ppgbp.segmentation import LabeledWindow, WindowSet

L = 64
LINEAR = ModelSpec("linear", 1, L)
MLP = ModelSpec("mlp", 1, L, hidden=(16, 8))
CNN = ModelSpec("cnn1d", 1, L, conv=((4, 5, 2), (6, 3, 1)), dense=(8,))
QUICK = TrainConfig(epochs=8, batch_size=16, seed=0)


def toy_set(subjects, n=20, seed=0, coupled=True):
    """Windows whose amplitude of a second harmonic encodes SBP."""
    rng = np.random.default_rng(seed)
    t = np.arange(L) / L
    out = []
    for sid in subjects:
        for k in range(n):
            sbp = rng.uniform(100, 150)
            dbp = 0.5 * sbp + rng.normal(0, 2)
            a = (sbp - 125) / 25 if coupled else rng.uniform(-1, 1)
            x = np.sin(2 * np.pi * 3 * t) + a * np.sin(2 * np.pi * 6 * t) + 0.05 * rng.normal(size=L)
            out.append(LabeledWindow(sid, x[None], sbp, dbp, 70.0, 0.0, float(k)))
    return WindowSet(out)


@pytest.fixture(scope="module")
def toy():
    return toy_set(["A", "B", "C", "D"]), toy_set(["E"], seed=1), toy_set(["F"], seed=2)


def naive_conv(x, w, b, stride):
    """x (C, L), w (F, C, K): valid strided cross-correlation + ReLU."""
    f, c, k = w.shape
    lo = (x.shape[1] - k) // stride + 1
    out = np.zeros((lo, f))
    for i in range(lo):
        seg = x[:, i * stride:i * stride + k]
        for j in range(f):
            out[i, j] = np.sum(seg * w[j]) + b[j]
    return np.maximum(out, 0)


class TestArchitecture:
    def test_shapes(self):
        s = parameter_shapes(CNN)
        assert s["conv0.weight"] == (4, 1, 5) and s["conv1.weight"] == (6, 4, 3)
        assert s["dense0.weight"] == (6, 8) and s["out.weight"] == (8, 2)

    def test_conv_matches_naive(self, rng):
        spec = ModelSpec("cnn1d", 3, 30, conv=((3, 4, 3),), dense=())
        p = init(spec, 1)
        p.tensors["conv0.bias"] = rng.normal(size=3)
        x = rng.normal(size=(3, 30))
        net = Network(spec)
        h = net.forward_std(p, x[None], upto=1)[0]
        assert np.allclose(h, naive_conv(x, p["conv0.weight"], p["conv0.bias"], 3))

    def test_output_shape_and_units(self, rng):
        p = init(CNN, 0)
        p.target_mean = np.array([120.0, 70.0])
        p.target_scale = np.array([10.0, 5.0])
        out = Network(CNN).predict(p, rng.normal(size=(5, 1, L)))
        z = Network(CNN).forward_std(p, rng.normal(size=(5, 1, L)))
        assert out.shape == (5, 2) and z.shape == (5, 2)
        s, d = predict(CNN, p, np.zeros((1, L)))
        assert (s, d) == pytest.approx((120.0, 70.0))

    @pytest.mark.parametrize("spec", [ModelSpec("rnn", 1, L), ModelSpec("cnn1d", 1, 8, conv=((4, 9, 1),)),
                                      ModelSpec("cnn1d", 2, L), ModelSpec("cnn1d", 1, L, pooling="avg")])
    def test_invalid_specs(self, spec):
        with pytest.raises(InvalidSpecError):
            init(spec)

    def test_wrong_input_shape(self):
        with pytest.raises(ValueError):
            Network(LINEAR).predict(init(LINEAR), np.zeros((2, 1, L + 1)))

    def test_init_deterministic(self):
        a, b = init(CNN, 4), init(CNN, 4)
        assert all(np.array_equal(a[k], b[k]) for k in a.names())

    def test_spec_roundtrip(self):
        assert ModelSpec.from_dict(CNN.to_dict()) == CNN


class TestGradients:
    @pytest.mark.parametrize("spec", [LINEAR, MLP, CNN,
                                      ModelSpec("cnn1d", 3, L, conv=((3, 5, 2),), pooling="max"),
                                      ModelSpec("cnn1d", 1, L, conv=((3, 5, 2),), pooling="flatten")])
    def test_backprop_matches_finite_differences(self, spec, rng):
        p = init(spec, 3)
        x = rng.normal(size=(spec.input_channels, L))
        assert gradient_check(spec, p, x, [130.0, 80.0], seed=1, per_tensor=40) < 1e-4


class TestAdam:
    def test_against_formula(self):
        g_seq = [np.array([0.5, -1.0]), np.array([0.1, 0.2]), np.array([-0.3, 0.0])]
        x = {"w": np.array([1.0, 2.0]), "frozen": np.array([3.0])}
        opt = Adam(["w"], lr=0.01)
        m = v = np.zeros(2)
        ref = np.array([1.0, 2.0])
        for t, g in enumerate(g_seq, 1):
            opt.step(x, {"w": g, "frozen": np.array([9.0])})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(x["w"], ref, atol=1e-15)
        assert x["frozen"][0] == 3.0

    def test_first_step_size_is_lr(self):
        x = {"w": np.zeros(3)}
        Adam(["w"], lr=0.05).step(x, {"w": np.array([1e-3, -7.0, 2.0])})
        assert np.allclose(np.abs(x["w"]), 0.05, rtol=1e-4)


class TestTraining:
    @pytest.mark.parametrize("spec", [LINEAR, MLP, CNN])
    def test_loss_descends(self, spec, toy):
        trn, val, _ = toy
        _, hist = train(spec, trn, val, QUICK)
        assert hist[-1]["train_loss"] < hist[0]["train_loss"]

    def test_learns_coupled_signal(self, toy):
        trn, val, tst = toy
        ckpt, _ = train(MLP, trn, val, TrainConfig(epochs=40, batch_size=16))
        err = np.abs(ckpt.predict(tst.inputs()) - tst.labels()).mean(axis=0)
        base = np.abs(trn.labels().mean(axis=0) - tst.labels()).mean(axis=0)
        assert err[0] < 0.5 * base[0]

    def test_deterministic(self, toy):
        trn, val, _ = toy
        a, _ = train(CNN, trn, val, QUICK)
        b, _ = train(CNN, trn, val, QUICK)
        assert a.to_json() == b.to_json()

    def test_contamination(self, toy):
        trn, _, _ = toy
        with pytest.raises(ContaminationError):
            train(LINEAR, trn, trn.select(["A"]), QUICK)

    def test_empty(self, toy):
        trn, val, _ = toy
        with pytest.raises(InsufficientDataError):
            train(LINEAR, trn, WindowSet([]), QUICK)

    def test_mean_regressor_mse_equals_variance(self, toy):
        trn, val, _ = toy
        ckpt, hist = train(ModelSpec("mean", 1, L), trn, val, QUICK)
        y = trn.labels()
        assert hist[0]["train_loss"] == pytest.approx(np.mean(y.var(axis=0)), abs=1e-9)
        assert np.allclose(ckpt.params["mean"], y.mean(axis=0))

    def test_checkpoint_roundtrip(self, toy, tmp_path):
        trn, val, _ = toy
        ckpt, _ = train(CNN, trn, val, QUICK)
        ckpt.save(tmp_path / "c.json")
        back = Checkpoint.load(tmp_path / "c.json")
        assert back.to_json() == ckpt.to_json()
        assert np.array_equal(back.predict(val.inputs()), ckpt.predict(val.inputs()))

    def test_config_hash_changes(self):
        assert TrainConfig(lr=1e-3).hash() != TrainConfig(lr=2e-3).hash()
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"learning_rate": 1})


class TestFinetune:
    def test_freezes_trunk(self, toy):
        trn, val, tst = toy
        base, _ = train(CNN, trn, val, QUICK)
        tuned, _ = finetune_final_layer(base, tst, val, QUICK)
        for k in base.params.names():
            same = np.array_equal(base.params[k], tuned.params[k])
            assert same == (not k.startswith("out."))

    def test_mean_has_no_head(self, toy):
        trn, val, _ = toy
        base, _ = train(ModelSpec("mean", 1, L), trn, val, QUICK)
        with pytest.raises(InvalidSpecError):
            finetune_final_layer(base, trn, val, QUICK)

    def test_personal_split(self):
        ws = toy_set(["Z"], n=11)
        tune, rest = personal_split(ws, 0.2)
        assert len(tune) == 3 and len(rest) == 8
        assert max(w.source_offset for w in tune) < min(w.source_offset for w in rest)

    def test_personal_split_rejects_mixed(self, toy):
        with pytest.raises(ValueError):
            personal_split(toy[0], 0.2)

    def test_personalize(self, toy):
        trn, val, _ = toy
        base, _ = train(LINEAR, trn, val, QUICK)
        subj = toy_set(["Q"], n=10, seed=5)
        ckpt, held = personalize(base, subj, 0.2, QUICK, trainset=trn)
        assert len(held) == 8 and ckpt.metadata["n_personal"] == 2


class TestEarlyStopping:
    def test_counts_misses(self):
        es = EarlyStopping(2)
        assert es.update(1, 5.0) and not es.update(2, 5.0)
        assert not es.should_stop
        es.update(3, 6.0)
        assert es.should_stop and es.best_epoch == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200), st.floats(0.01, 0.99))
def test_personal_split_sizes(n, frac):
    import math
    ws = WindowSet([LabeledWindow("P", np.zeros((1, 4)), 120, 70, 60, 0, float(i)) for i in range(n)])
    if n < 2:
        with pytest.raises(InsufficientDataError):
            personal_split(ws, frac)
        return
    tune, rest = personal_split(ws, frac)
    assert len(tune) == min(math.ceil(frac * n), n - 1)
    assert len(tune) + len(rest) == n


def test_guard_can_be_waived_for_leak_demos(toy):
    trn, _, _ = toy
    ckpt, _ = train(LINEAR, trn, trn.select(["A"]), QUICK, check=False)
    assert ckpt.metadata["n_val"] == 20
