import numpy as np
import pytest

from vissm import blocks as B
from vissm import data as D
from vissm import tensor as T
from vissm import training as TR
from vissm.data import DetectionDataset
from vissm.rng import SplitMix64
from vissm.tensor import Tensor


def tiny_bundle(seed=1, train=24, val=12, test=8):
    return D.make_dataset(seed=seed, train_count=train, val_count=val, test_count=test)


def tiny_model(seed=5, family="vssd"):
    cfg = B.ModelConfig(family=family, image_h=32, image_w=32, patch=8,
                        embed_dim=8, depth=1, state_dim=2)
    return B.build_model(cfg, seed=seed)


# -- loss and optimizer ------------------------------------------------------------


def test_cross_entropy_matches_log_softmax():
    rng = SplitMix64(1)
    logits = rng.normal_array((4, 2))
    labels = np.array([0, 1, 1, 0])
    loss = TR.cross_entropy(Tensor(logits), labels).item()
    probs = TR.softmax(logits)
    expected = -np.mean(np.log(probs[np.arange(4), labels]))
    assert abs(loss - expected) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = SplitMix64(2)
    probs = TR.softmax(rng.normal_array((6, 2)) * 10)
    assert np.max(np.abs(probs.sum(axis=-1) - 1.0)) < 1e-12


def test_adam_first_step_is_signed_unit_step():
    # with bias correction the first update is lr * g / (|g| + eps)
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    opt = TR.Adam({"p": p}, TR.TrainConfig(lr=0.1))
    p.grad = np.array([0.5, -0.25, 1.0])
    before = p.data.copy()
    opt.step(0.1)
    expected = before - 0.1 * np.sign(p.grad)
    assert np.max(np.abs(p.data - expected)) < 1e-6


def test_adam_second_step_matches_hand_rolled_update():
    # oracle: run the published update rule by hand for two steps
    cfg = TR.TrainConfig(lr=0.05)
    p = Tensor(np.array([0.7]), requires_grad=True)
    opt = TR.Adam({"p": p}, cfg)
    g1, g2 = np.array([0.3]), np.array([-0.2])

    x = 0.7
    m = v = 0.0
    for t, g in ((1, 0.3), (2, -0.2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)

    p.grad = g1
    opt.step(0.05)
    p.grad = g2
    opt.step(0.05)
    assert abs(p.data[0] - x) < 1e-12


def test_cosine_schedule_endpoints():
    assert TR.cosine_lr(1e-3, 0, 100) == pytest.approx(1e-3)
    assert TR.cosine_lr(1e-3, 100, 100) == pytest.approx(0.0, abs=1e-18)
    assert TR.cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)


# -- training loop ------------------------------------------------------------------


def test_single_step_descends_on_one_sample():
    model = tiny_model()
    img = D.synth_real(3, 32, 32)[None]
    label = np.array([0])

    def loss_of():
        with T.no_grad():
            return TR.cross_entropy(B.forward(model, img), label).item()

    before = loss_of()
    logits = B.forward(model, img)
    loss = TR.cross_entropy(logits, label)
    for p in model.params.values():
        p.zero_grad()
    T.backward(loss)
    TR.Adam(model.params, TR.TrainConfig()).step(1e-4)
    assert loss_of() < before


def test_zero_lr_training_is_a_no_op():
    model = tiny_model()
    snapshot = {k: p.data.copy() for k, p in model.params.items()}
    bundle = tiny_bundle()
    TR.train(model, bundle, cfg=TR.TrainConfig(lr=0.0, epochs=1, seed=3))
    for name, p in model.params.items():
        assert np.array_equal(p.data, snapshot[name]), name


def test_equal_seeds_reproduce_loss_history():
    bundle = tiny_bundle()
    cfg = TR.TrainConfig(epochs=2, seed=9)
    _, s1 = TR.train(tiny_model(), bundle, cfg=cfg)
    _, s2 = TR.train(tiny_model(), bundle, cfg=cfg)
    assert s1.loss_history == s2.loss_history
    assert s1.val_history == s2.val_history


def test_resume_midway_matches_uninterrupted(tmp_path):
    bundle = tiny_bundle()
    cfg = TR.TrainConfig(epochs=4, seed=13)
    m_full, s_full = TR.train(tiny_model(seed=8), bundle, cfg=cfg)

    # sliced run: first two epochs of the same 4-epoch schedule, then resume
    state_path = tmp_path / "state.npz"
    TR.train(tiny_model(seed=8), bundle, cfg=cfg, state_path=state_path, run_until=2)
    m_res = tiny_model(seed=8)
    state, optimizer, best = TR.load_train_state(state_path, m_res, cfg)
    assert state.epoch == 2
    m_res, s_res = TR.train(m_res, bundle, cfg=cfg, resume=(state, optimizer, best))

    assert s_res.loss_history == s_full.loss_history
    assert s_res.val_history == s_full.val_history
    for name in m_full.params:
        assert np.array_equal(m_res.params[name].data, m_full.params[name].data)


def test_divergence_raises_numeric_error():
    model = tiny_model()
    # poison the parameters so the forward pass overflows
    model.params["head.weight"].data[...] = 1e308
    model.params["patch.proj"].data[...] = 1e308
    bundle = tiny_bundle()
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(T.NumericError):
        TR.train(model, bundle, cfg=TR.TrainConfig(epochs=1, seed=1))


def test_best_epoch_restoration():
    bundle = tiny_bundle(train=40, val=20)
    model = tiny_model(seed=11)
    _, state = TR.train(model, bundle, cfg=TR.TrainConfig(epochs=3, seed=5))
    assert state.best_epoch >= 0
    assert state.best_val_acc == max(state.val_history)


# -- evaluation ---------------------------------------------------------------------


def subset(tag, images, labels):
    return DetectionDataset(np.asarray(images), np.asarray(labels, bool), tag, "test")


def test_constant_model_accuracy_equals_prevalence():
    imgs = np.zeros((10, 32, 32))
    always_real = lambda batch: np.zeros(len(batch), dtype=int)
    rep = TR.evaluate(always_real, [subset("real", imgs, np.zeros(10)),
                                    subset("fake", imgs, np.ones(10))])
    assert rep.per_subset == {"real": 1.0, "fake": 0.0}


def test_mean_accuracy_is_unweighted():
    imgs = np.zeros((4, 32, 32))
    half_right = lambda batch: np.array([0, 0, 1, 1])
    rep = TR.evaluate(half_right, [subset("a", imgs, [0, 0, 0, 0]),
                                   subset("b", imgs, [0, 0, 1, 1])])
    assert rep.per_subset["a"] == 0.5
    assert rep.per_subset["b"] == 1.0
    assert rep.mean_accuracy == 0.75


def test_evaluate_permutation_invariant():
    bundle = tiny_bundle()
    ds = bundle.test_subsets[1]
    rng = SplitMix64(31)
    perm = list(range(len(ds)))
    rng.shuffle(perm)
    shuffled = DetectionDataset(ds.images[perm], ds.labels[perm], ds.subset_tag, "test")
    fn = lambda batch: D.analytic_g1_detector(batch).astype(int)
    a = TR.evaluate(fn, [ds]).per_subset[ds.subset_tag]
    b = TR.evaluate(fn, [shuffled]).per_subset[ds.subset_tag]
    assert a == b


def test_analytic_oracle_reaches_one_on_g1():
    bundle = tiny_bundle(test=32)
    g1 = next(ds for ds in bundle.test_subsets if ds.subset_tag == "G1_checkerboard")
    real = next(ds for ds in bundle.test_subsets if ds.subset_tag == "real")
    fn = lambda batch: D.analytic_g1_detector(batch).astype(int)
    rep = TR.evaluate(fn, [real, g1])
    assert rep.per_subset["G1_checkerboard"] == 1.0
    assert rep.per_subset["real"] == 1.0


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError):
        TR.evaluate(lambda b: np.zeros(len(b)), [])


def test_report_serialization_roundtrip():
    rep = TR.EvalReport(per_subset={"real": 1.0, "G1_checkerboard": 0.5},
                        mean_accuracy=0.75, seeds=[1], model_summary={"kind": "x"})
    text = TR.report_to_json(rep)
    assert '"mean_accuracy": 0.75' in text
    csv_text = TR.report_to_csv(rep)
    assert "mean,0.750000" in csv_text


# -- feature export -----------------------------------------------------------------


def test_export_features_shape_and_determinism(tmp_path):
    model = tiny_model()
    bundle = tiny_bundle(test=6)
    ds = bundle.test_subsets[0]
    path_a = tmp_path / "a.csv"
    path_b = tmp_path / "b.csv"
    n = TR.export_features(model, ds.images, [ds.subset_tag] * len(ds), ds.labels, path_a)
    TR.export_features(model, ds.images, [ds.subset_tag] * len(ds), ds.labels, path_b)
    assert n == len(ds)
    assert path_a.read_bytes() == path_b.read_bytes()
    header = path_a.read_text().splitlines()[0].split(",")
    assert header[:2] == ["subset_tag", "label"]
    assert len(header) == 2 + model.cfg.embed_dim
    assert len(path_a.read_text().splitlines()) == 1 + len(ds)


def test_export_features_length_mismatch(tmp_path):
    model = tiny_model()
    with pytest.raises(ValueError):
        TR.export_features(model, np.zeros((3, 32, 32)), ["a"], [0, 1, 0],
                           tmp_path / "x.csv")


# -- cross-generator experiment (miniature) -----------------------------------------------


def test_cross_generator_experiment_grid_complete():
    out = TR.cross_generator_experiment(
        families=["vssd"], seeds=[1, 2], train_count=24, val_count=12,
        test_count=8, train_cfg=TR.TrainConfig(epochs=1, seed=0),
        preset_overrides=dict(embed_dim=8, depth=1, state_dim=2, patch=8),
    )
    assert len(out["results"]) == 2  # family x seed grid
    for row in out["results"]:
        assert set(row["per_subset"]) == {"real", "G1_checkerboard",
                                          "G2_ringing", "G3_gridnoise"}
    agg = out["aggregates"]["vssd"]
    assert 0.0 <= agg["in_distribution"]["mean"] <= 1.0
    assert "sd" in agg["out_of_distribution"]


def test_cross_generator_requires_seeds():
    with pytest.raises(ValueError):
        TR.cross_generator_experiment(families=["vssd"], seeds=[])
