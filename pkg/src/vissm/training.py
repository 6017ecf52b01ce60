"""Training loop, evaluation protocol, and the cross-generator experiment.

Training minimizes softmax cross-entropy with Adam under a cosine-decayed
learning rate; the checkpoint kept is the one with the best validation
accuracy. Everything is a pure function of (inputs, seed): batch order comes
from the splitmix stream, so two runs with equal seeds produce bit-identical
parameters and loss histories, and a serialized TrainState resumes the
exact trajectory.

Evaluation mirrors the per-subset accuracy protocol: one accuracy per test
subset plus their unweighted mean.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import blocks as B
from . import tensor as T
from .data import DatasetBundle, DetectionDataset, make_dataset
from .rng import SplitMix64, hash_combine
from .tensor import NumericError, Tensor


# -- losses -----------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices."""
    labels = np.asarray(labels, dtype=np.intp)
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # constant shift
    z = T.sub(logits, shift)
    lse = T.log(T.sum_(T.exp(z), axis=-1))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = T.sum_(T.mul(z, Tensor(onehot)), axis=-1)
    return T.mean(T.sub(lse, picked))


# -- optimizer -------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 32
    epochs: int = 5
    seed: int = 0


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def cosine_lr(base: float, step: int, total: int) -> float:
    """Cosine decay from base to 0 over ``total`` steps."""
    if total <= 0:
        return base
    frac = min(max(step / total, 0.0), 1.0)
    return base * 0.5 * (1.0 + np.cos(np.pi * frac))


# -- train state -----------------------------------------------------------------


@dataclass
class TrainState:
    """Everything needed to resume training mid-run at an epoch boundary."""

    epoch: int
    step: int
    total_steps: int
    rng_state: tuple
    best_val_acc: float
    best_epoch: int
    loss_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)


def save_train_state(state: TrainState, optimizer: Adam, model: B.Model, path,
                     best_params: dict | None = None) -> None:
    arrays = {}
    for name, arr in optimizer.m.items():
        arrays["m/" + name] = arr
    for name, arr in optimizer.v.items():
        arrays["v/" + name] = arr
    for name, p in model.params.items():
        arrays["p/" + name] = p.data
    for name, arr in (best_params or {}).items():
        arrays["b/" + name] = arr
    meta = dict(asdict(state))
    meta["rng_state"] = list(state.rng_state)
    meta["adam_t"] = optimizer.t
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_train_state(path, model: B.Model, cfg: TrainConfig):
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        optimizer = Adam(model.params, cfg)
        optimizer.t = meta.pop("adam_t")
        best_params = {}
        for name, p in model.params.items():
            p.data[...] = blob["p/" + name]
            optimizer.m[name][...] = blob["m/" + name]
            optimizer.v[name][...] = blob["v/" + name]
            if "b/" + name in blob:
                best_params[name] = blob["b/" + name].copy()
    meta["rng_state"] = tuple(meta["rng_state"])
    state = TrainState(**meta)
    return state, optimizer, best_params


# -- training loop -----------------------------------------------------------------


def _accuracy(model: B.Model, ds: DetectionDataset, batch: int = 64) -> float:
    correct = 0
    for lo in range(0, len(ds), batch):
        preds = B.predict(model, ds.images[lo:lo + batch])
        correct += int(np.sum(preds == ds.labels[lo:lo + batch].astype(np.intp)))
    return correct / len(ds)


def train(model: B.Model, bundle_or_train, val: DetectionDataset | None = None,
          cfg: TrainConfig | None = None, resume=None, state_path=None,
          run_until: int | None = None):
    """Fit the model; keeps the parameters of the best validation epoch.

    Returns (model, TrainState). ``run_until`` stops at an earlier epoch
    boundary without shortening the learning-rate schedule (for sliced runs);
    ``resume`` takes the (state, optimizer, best_params) triple from
    load_train_state and continues the exact uninterrupted trajectory.
    """
    if isinstance(bundle_or_train, DatasetBundle):
        train_ds = bundle_or_train.train
        val = bundle_or_train.val
    else:
        train_ds = bundle_or_train
    if val is None:
        raise ValueError("a validation split is required for best-epoch selection")
    cfg = cfg or TrainConfig()

    n = len(train_ds)
    steps_per_epoch = -(-n // cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch

    if resume is not None:
        state, optimizer, saved_best = resume
        rng = SplitMix64(0)
        rng.set_state(state.rng_state)
        if state.total_steps != total_steps:
            raise ValueError("resume schedule does not match the requested run")
        best_params = saved_best or {k: p.data.copy() for k, p in model.params.items()}
        start_epoch = state.epoch
    else:
        optimizer = Adam(model.params, cfg)
        rng = SplitMix64(hash_combine(cfg.seed, 0x747261696E))
        state = TrainState(epoch=0, step=0, total_steps=total_steps,
                           rng_state=rng.get_state(), best_val_acc=-1.0, best_epoch=-1)
        best_params = {k: p.data.copy() for k, p in model.params.items()}
        start_epoch = 0

    stop_epoch = cfg.epochs if run_until is None else min(run_until, cfg.epochs)
    labels_int = train_ds.labels.astype(np.intp)
    for epoch in range(start_epoch, stop_epoch):
        order = list(range(n))
        rng.shuffle(order)
        for lo in range(0, n, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            logits = B.forward(model, train_ds.images[idx])
            loss = cross_entropy(logits, labels_int[idx])
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericError(f"training loss diverged at step {state.step}")
            for p in model.params.values():
                p.zero_grad()
            T.backward(loss)
            optimizer.step(cosine_lr(cfg.lr, state.step, total_steps))
            state.loss_history.append(loss_val)
            state.step += 1
        val_acc = _accuracy(model, val)
        state.val_history.append(val_acc)
        state.epoch = epoch + 1
        state.rng_state = rng.get_state()
        if val_acc > state.best_val_acc:
            state.best_val_acc = val_acc
            state.best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        if state_path is not None:
            save_train_state(state, optimizer, model, state_path, best_params)

    for name, p in model.params.items():
        p.data[...] = best_params[name]
    return model, state


# -- evaluation ---------------------------------------------------------------------


@dataclass
class EvalReport:
    per_subset: dict
    mean_accuracy: float
    seeds: list
    model_summary: dict
    schema: str = "vissm.eval_report/1"


def evaluate(model_or_predict, subsets: list, seeds=None, model_summary=None,
             batch: int = 64) -> EvalReport:
    """Per-subset accuracy plus the unweighted mean over subsets.

    Accepts a Model or any callable mapping an image batch to integer
    labels (e.g. the analytic reference detector).
    """
    if not subsets:
        raise ValueError("no test subsets given")
    if callable(model_or_predict) and not isinstance(model_or_predict, B.Model):
        predict_fn = model_or_predict
        summary = model_summary or {"kind": "callable"}
    else:
        model = model_or_predict
        predict_fn = lambda imgs: B.predict(model, imgs)
        summary = model_summary or {"kind": "model", **asdict(model.cfg)}
    per_subset = {}
    for ds in subsets:
        if len(ds) == 0:
            raise ValueError(f"empty test subset {ds.subset_tag!r}")
        correct = 0
        for lo in range(0, len(ds), batch):
            preds = np.asarray(predict_fn(ds.images[lo:lo + batch]))
            correct += int(np.sum(preds.astype(bool) == ds.labels[lo:lo + batch]))
        per_subset[ds.subset_tag] = correct / len(ds)
    mean_acc = float(np.mean(list(per_subset.values())))
    return EvalReport(per_subset=per_subset, mean_accuracy=mean_acc,
                      seeds=list(seeds or []), model_summary=summary)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(asdict(report), indent=2, sort_keys=True) + "\n"


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subset", "accuracy"])
    for tag in sorted(report.per_subset):
        writer.writerow([tag, f"{report.per_subset[tag]:.6f}"])
    writer.writerow(["mean", f"{report.mean_accuracy:.6f}"])
    return buf.getvalue()


# -- cross-generator experiment ----------------------------------------------------------


def cross_generator_experiment(families: list, seeds: list,
                               train_count: int = 1000, val_count: int = 200,
                               test_count: int = 500, strength: float = 0.8,
                               train_generator: str = "G1_checkerboard",
                               train_cfg: TrainConfig | None = None,
                               preset_overrides: dict | None = None,
                               progress=None) -> dict:
    """Train on one generator, test on all of them, across families and seeds.

    Returns a bundle with the per-(family, seed, subset) accuracy grid and
    per-family aggregates: in-distribution accuracy (mean of the real subset
    and the training generator's subset) and out-of-distribution accuracy
    (mean over the other generators), each with mean and sd over seeds.
    """
    if len(seeds) < 1:
        raise ValueError("at least one seed is required")
    results = []
    for seed in seeds:
        bundle = make_dataset(seed=seed, train_count=train_count,
                              val_count=val_count, test_count=test_count,
                              strength=strength, train_generator=train_generator)
        for family in families:
            cfg = B.config_from_preset(f"desk-{family}", **(preset_overrides or {}))
            family_tag = sum(ord(ch) << (8 * i) for i, ch in enumerate(family[:8]))
            model = B.build_model(cfg, seed=hash_combine(seed, family_tag))
            tcfg = train_cfg or TrainConfig(seed=seed)
            model, state = train(model, bundle, cfg=tcfg)
            report = evaluate(model, bundle.test_subsets, seeds=[seed])
            if progress is not None:
                progress(family, seed, report)
            results.append({
                "family": family, "seed": seed,
                "per_subset": report.per_subset,
                "best_val_acc": state.best_val_acc,
                "final_loss": state.loss_history[-1],
            })

    ood_tags = [g for g in ("G1_checkerboard", "G2_ringing", "G3_gridnoise")
                if g != train_generator]
    aggregates = {}
    for family in families:
        rows = [r for r in results if r["family"] == family]
        in_dist = [np.mean([r["per_subset"]["real"],
                            r["per_subset"][train_generator]]) for r in rows]
        ood = [np.mean([r["per_subset"][t] for t in ood_tags]) for r in rows]
        aggregates[family] = {
            "in_distribution": {"mean": float(np.mean(in_dist)),
                                "sd": float(np.std(in_dist))},
            "out_of_distribution": {"mean": float(np.mean(ood)),
                                    "sd": float(np.std(ood))},
            "per_subset_mean": {
                tag: float(np.mean([r["per_subset"][tag] for r in rows]))
                for tag in rows[0]["per_subset"]
            },
        }
    return {
        "schema": "vissm.crossgen/1",
        "train_generator": train_generator,
        "seeds": list(seeds),
        "families": list(families),
        "results": results,
        "aggregates": aggregates,
    }


# -- feature export ------------------------------------------------------------------------


def export_features(model: B.Model, images: np.ndarray, tags, labels, path,
                    batch: int = 64) -> int:
    """Penultimate-layer features as CSV: subset_tag, label, f_0..f_{D-1}.

    Floats are written with repr-exact formatting so re-exports are
    byte-identical. Returns the number of rows written.
    """
    tags = list(tags)
    labels = np.asarray(labels).astype(int)
    if not (len(images) == len(tags) == len(labels)):
        raise ValueError("images, tags, and labels must have equal lengths")
    feats = []
    for lo in range(0, len(images), batch):
        feats.append(B.penultimate(model, images[lo:lo + batch]))
    feats = np.concatenate(feats) if feats else np.zeros((0, model.cfg.embed_dim))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subset_tag", "label"] +
                        [f"f_{i}" for i in range(feats.shape[1])])
        for tag, label, row in zip(tags, labels, feats):
            writer.writerow([tag, label] + [repr(float(v)) for v in row])
    return len(feats)
