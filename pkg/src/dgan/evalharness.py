"""Quantitative evaluation against the synthetic oracle and the augmentation study."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.stats import spearmanr
from torch import nn
import torch.nn.functional as F

from .core import EXPRESSIONS, RunConfig, make_rng
from .datapipe.augment import linear_augment
from .datapipe.manifest import ManifestRecord, build_pairs
from .datapipe.synthetic import SyntheticOracle
from .synthesis import augment_dataset, intensity_sweep, missing_label_plan, synthesize
from .trainer import PairedData, TrainState, train

log = logging.getLogger(__name__)

# (subject, source image, code) -> image
SynthFn = Callable[[str, np.ndarray, np.ndarray], np.ndarray]

ABLATION_REGIMES = {
    "standard-only": {"lambda_diff": 0.0, "use_diff_d": False},
    "diff-only": {"lambda_standard": 0.0, "use_standard_d": False},
    "both": {},
}


def as_synth_fn(model) -> SynthFn:
    if isinstance(model, TrainState):
        return lambda subject, x, code: synthesize(model, x, code)
    return model


def _pairs_to_score(oracle: SyntheticOracle, subjects, labels):
    if not subjects:
        raise ValueError("no test subjects")
    labels = list(labels or oracle.labels)
    return sorted(subjects), labels


def transfer_accuracy(model, oracle: SyntheticOracle, test_subjects: Sequence[str],
                      labels: Sequence[str] | None = None) -> float:
    """Fraction of (subject, label) syntheses from neutral that the oracle probe accepts."""
    synth = as_synth_fn(model)
    subjects, labels = _pairs_to_score(oracle, test_subjects, labels)
    hits = 0
    for s in subjects:
        x = oracle.render(s, oracle.code("neutral"))
        for label in labels:
            hits += oracle.probe(synth(s, x, oracle.code(label)), s, label)
    return hits / (len(subjects) * len(labels))


def identity_error(model, oracle: SyntheticOracle, test_subjects: Sequence[str],
                   labels: Sequence[str] | None = None) -> float:
    """Mean per-pixel L1 between each synthesis and the oracle's ground-truth target render."""
    synth = as_synth_fn(model)
    subjects, labels = _pairs_to_score(oracle, test_subjects, labels)
    errs = []
    for s in subjects:
        x = oracle.render(s, oracle.code("neutral"))
        for label in labels:
            code = oracle.code(label)
            errs.append(np.abs(synth(s, x, code) - oracle.render(s, code)).mean())
    return float(np.mean(errs))


def sweep_spearman(state: TrainState, oracle: SyntheticOracle, subjects: Sequence[str], label: str,
                   steps: int = 10) -> dict[str, float]:
    """Spearman rho between commanded intensity and oracle-measured magnitude, per subject."""
    idx = oracle.labels.index(label)
    out = {}
    for s in sorted(subjects):
        x = oracle.render(s, oracle.code("neutral"))
        frames = intensity_sweep(state, x, idx, steps)
        mags = [oracle.magnitude(f, s, label) for f in frames]
        rho = spearmanr(np.arange(steps), mags).statistic
        out[s] = float(rho) if np.isfinite(rho) else 0.0
    return out


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class EvalRow:
    config: str
    seed: int
    fold: int
    transfer_acc: float | None = None
    identity_err: float | None = None
    classifier_acc: float | None = None

    def __post_init__(self):
        for name in ("transfer_acc", "classifier_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.identity_err is not None and self.identity_err < 0:
            raise ValueError("identity_err must be >= 0")


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    # trained models etc.; not serialized
    artifacts: dict = field(default_factory=dict, compare=False, repr=False)

    CSV_HEADER = ("config", "seed", "fold", "transfer_acc", "identity_err", "classifier_acc")

    @property
    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.rows})

    @property
    def fold_count(self) -> int:
        return len({r.fold for r in self.rows})

    def select(self, config: str, seed: int | None = None) -> list[EvalRow]:
        return [r for r in self.rows if r.config == config and (seed is None or r.seed == seed)]

    def mean(self, config: str, metric: str, seed: int | None = None) -> float:
        vals = [getattr(r, metric) for r in self.select(config, seed) if getattr(r, metric) is not None]
        return float(np.mean(vals)) if vals else math.nan

    def summary_table(self) -> str:
        configs = list(dict.fromkeys(r.config for r in self.rows))
        lines = [f"{'config':<16}{'transfer_acc':>22}{'identity_err':>22}{'classifier_acc':>22}"]
        for c in configs:
            cells = []
            for metric in self.CSV_HEADER[3:]:
                vals = [getattr(r, metric) for r in self.select(c) if getattr(r, metric) is not None]
                cells.append(f"{np.mean(vals):.4f} +- {np.std(vals):.4f}" if vals else "-")
            lines.append(f"{c:<16}" + "".join(f"{x:>22}" for x in cells))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def emit_report(report: EvalReport, path: str | Path) -> None:
    """CSV at ``path`` plus a mean +- std text table next to it (``.txt``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EvalReport.CSV_HEADER)
        for r in report.rows:
            w.writerow([r.config, r.seed, r.fold, _fmt(r.transfer_acc), _fmt(r.identity_err),
                        _fmt(r.classifier_acc)])
    path.with_suffix(".txt").write_text(report.summary_table(), encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != EvalReport.CSV_HEADER:
            raise ValueError(f"unexpected report header {header}")
        for row in reader:
            opt = [None if x == "" else float(x) for x in row[3:]]
            rows.append(EvalRow(row[0], int(row[1]), int(row[2]), *opt))
    return EvalReport(rows)


# ---------------------------------------------------------------- ablation

def regime_config(base: RunConfig, regime: str, seed: int) -> RunConfig:
    fields = {"lambda_diff": base.lambda_diff, "lambda_standard": base.lambda_standard,
              "use_standard_d": True, "use_diff_d": True}
    fields.update(ABLATION_REGIMES[regime])
    return base.replace(seed=seed, **fields)


def run_ablation(base: RunConfig, train_records: Sequence[ManifestRecord], oracle: SyntheticOracle,
                 test_subjects: Sequence[str], seeds: Sequence[int],
                 regimes: Sequence[str] = tuple(ABLATION_REGIMES),
                 progress: Callable[[str], None] | None = None) -> EvalReport:
    """Train every regime for every seed on the same pairs and budget, then score it.

    Trained states are kept in ``report.artifacts[(regime, seed)]``.
    """
    missing = set(ABLATION_REGIMES) - set(regimes)
    if missing:
        raise ValueError(f"ablation needs all three regimes; missing {sorted(missing)}")
    pairs = build_pairs(train_records, oracle.labels, load_image=oracle.image_for)
    data = PairedData.from_pairs(pairs)
    report = EvalReport()
    for seed in seeds:
        for regime in regimes:
            cfg = regime_config(base, regime, seed)
            state = train(cfg, data)
            row = EvalRow(regime, seed, 0, transfer_accuracy(state, oracle, test_subjects),
                          identity_error(state, oracle, test_subjects))
            report.rows.append(row)
            report.artifacts[(regime, seed)] = state
            if progress:
                progress(f"{regime} seed={seed}: transfer={row.transfer_acc:.3f} identity={row.identity_err:.4f}")
    return report


# ---------------------------------------------------------------- classifier

@dataclass(frozen=True)
class ClassifierConfig:
    width: int = 16
    hidden: int = 64
    steps: int = 400
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0


class SmallConvNet(nn.Module):
    """Three conv/pool blocks and two fully connected layers."""

    def __init__(self, n_classes: int, image_size: int, width: int = 16, hidden: int = 64):
        super().__init__()
        chans = [3, width, 2 * width, 4 * width]
        blocks = []
        for cin, cout in zip(chans, chans[1:]):
            blocks += [nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
        self.features = nn.Sequential(*blocks)
        flat = chans[-1] * (image_size // 8) ** 2
        self.head = nn.Sequential(nn.Flatten(), nn.Linear(flat, hidden), nn.ReLU(), nn.Linear(hidden, n_classes))

    def forward(self, x):
        return self.head(self.features(x))


@dataclass
class Classifier:
    net: SmallConvNet
    vocabulary: list[str]


def _images_to_tensor(images) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def train_classifier(train_images: Sequence[np.ndarray], train_labels: Sequence[str],
                     cfg: ClassifierConfig = ClassifierConfig()) -> Classifier:
    """Cross-entropy training for a fixed number of minibatch steps."""
    if len(train_images) == 0:
        raise ValueError("empty training set")
    vocabulary = sorted(set(train_labels))
    if len(vocabulary) < 2:
        raise ValueError(f"training set has a single class {vocabulary}")
    x = _images_to_tensor(train_images)
    y = torch.tensor([vocabulary.index(lbl) for lbl in train_labels])
    g = make_rng(cfg.seed)
    net = SmallConvNet(len(vocabulary), x.shape[-1], cfg.width, cfg.hidden)
    for p in net.parameters():
        if p.dim() > 1:
            nn.init.kaiming_uniform_(p, nonlinearity="relu", generator=g)
        else:
            nn.init.zeros_(p)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    net.train()
    n = len(y)
    order, cursor = torch.randperm(n, generator=g), 0
    for _ in range(cfg.steps):
        bs = min(cfg.batch_size, n)
        if cursor + bs > n:
            order, cursor = torch.randperm(n, generator=g), 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        loss = F.cross_entropy(net(x[idx]), y[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return Classifier(net, vocabulary)


@torch.no_grad()
def predict(clf: Classifier, images: Sequence[np.ndarray]) -> list[str]:
    clf.net.eval()
    out = []
    x = _images_to_tensor(images)
    for i in range(0, len(x), 256):
        out.extend(clf.net(x[i:i + 256]).argmax(1).tolist())
    return [clf.vocabulary[i] for i in out]


def classify(clf: Classifier, image: np.ndarray) -> str:
    return predict(clf, [image])[0]


# ---------------------------------------------------------------- k-fold study

@dataclass(frozen=True)
class Example:
    subject_id: str
    label: str
    image: np.ndarray = field(repr=False, compare=False)
    generated: bool = False


def subject_folds(subjects: Sequence[str], k: int, seed: int = 0) -> list[list[str]]:
    """Sorted subjects, shuffled by ``seed``, dealt round-robin into ``k`` disjoint folds."""
    subjects = sorted(set(subjects))
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(subjects):
        raise ValueError(f"k={k} exceeds the number of subjects ({len(subjects)})")
    perm = np.random.default_rng(seed).permutation(len(subjects))
    folds = [[] for _ in range(k)]
    for i, j in enumerate(perm):
        folds[i % k].append(subjects[j])
    return [sorted(f) for f in folds]


def dgan_fill(state: TrainState, examples: Sequence[Example], subjects: Sequence[str],
              vocabulary: Sequence[str] = EXPRESSIONS) -> list[Example]:
    """Generated examples for every label missing from each listed subject."""
    store = {f"{e.subject_id}/{i}": e for i, e in enumerate(examples)}
    records = [ManifestRecord(e.subject_id, e.label, 1.0, key, e.generated) for key, e in store.items()]
    plan = missing_label_plan(records, vocabulary, subjects)
    result = augment_dataset(state, records, plan, lambda r: store[r.image_path].image, vocabulary)
    return [Example(r.subject_id, r.label_name, result.images[r.image_path], True) for r in result.records]


def dgan_expand(state: TrainState, neutrals: Sequence[Example],
                vocabulary: Sequence[str] = EXPRESSIONS) -> list[Example]:
    """Every label generated from each unlabeled neutral face (an outside subject pool)."""
    out = []
    for e in neutrals:
        for i, label in enumerate(vocabulary):
            code = np.zeros(len(vocabulary))
            code[i] = 1.0
            out.append(Example(e.subject_id, label, synthesize(state, e.image, code), True))
    return out


def kfold_evaluate(examples: Sequence[Example], augmentation_mode: str = "none", k: int = 10,
                   dgan_state: TrainState | None = None, seed: int = 0, seed_index: int = 0,
                   clf_cfg: ClassifierConfig = ClassifierConfig(), config_name: str | None = None,
                   vocabulary: Sequence[str] = EXPRESSIONS,
                   extra_neutrals: Sequence[Example] = ()) -> EvalReport:
    """Subject-independent k-fold accuracy with the training split optionally augmented.

    Only real images of held-out subjects are tested; generated images are made
    for training-fold subjects only. In ``dgan`` mode, ``extra_neutrals`` (neutral
    faces of subjects outside the benchmark) are expanded to every label and
    added to each training split as well.
    """
    if augmentation_mode not in ("none", "linear", "dgan"):
        raise ValueError(f"unknown augmentation mode {augmentation_mode!r}")
    if augmentation_mode == "dgan" and dgan_state is None:
        raise ValueError("dgan augmentation needs a trained state")
    real = [e for e in examples if not e.generated]
    folds = subject_folds([e.subject_id for e in real], k, seed)
    outside = []
    if augmentation_mode == "dgan" and extra_neutrals:
        if {e.subject_id for e in extra_neutrals} & {e.subject_id for e in real}:
            raise ValueError("extra neutral faces must come from subjects outside the benchmark")
        outside = dgan_expand(dgan_state, extra_neutrals, vocabulary)
    report = EvalReport()
    report.artifacts["folds"] = folds
    for fold_index, test_subjects in enumerate(folds):
        test_set = set(test_subjects)
        train_ex = [e for e in real if e.subject_id not in test_set]
        test_ex = [e for e in real if e.subject_id in test_set]
        train_subjects = sorted({e.subject_id for e in train_ex})
        assert not test_set & set(train_subjects)
        images = [e.image for e in train_ex]
        labels = [e.label for e in train_ex]
        if augmentation_mode == "linear":
            for e in train_ex:
                aug = linear_augment(e.image)
                images.extend(aug)
                labels.extend([e.label] * len(aug))
        elif augmentation_mode == "dgan":
            generated = dgan_fill(dgan_state, train_ex, train_subjects, vocabulary)
            assert all(g.subject_id not in test_set for g in generated)
            generated += outside
            images.extend(g.image for g in generated)
            labels.extend(g.label for g in generated)
        run_seed = seed + fold_index * 1000 + seed_index
        clf = train_classifier(images, labels, ClassifierConfig(**{**clf_cfg.__dict__, "seed": run_seed}))
        preds = predict(clf, [e.image for e in test_ex])
        acc = float(np.mean([p == e.label for p, e in zip(preds, test_ex)]))
        report.rows.append(EvalRow(config_name or augmentation_mode, seed, fold_index, classifier_acc=acc))
    return report


def mean_accuracy(report: EvalReport) -> float:
    return float(np.mean([r.classifier_acc for r in report.rows]))


def build_augmentation_benchmark(n_subjects: int = 30, drop: int = 2, seed: int = 0, size: int = 64,
                                 min_intensity: float = 0.6, max_rotation: float = 4.0, max_shift: int = 2,
                                 labels: Sequence[str] = EXPRESSIONS, prefix: str = "m"):
    """Expression-recognition benchmark with gaps: each subject lacks ``drop`` non-neutral labels.

    Every image gets a random expression intensity in [min_intensity, 1] and a
    small random head movement (rotation and integer shift) so that, as with
    real captures, no two images share an exact pose. Returns (examples, oracle).
    """
    from .datapipe.augment import shift_rotate
    from .datapipe.synthetic import sample_identities

    rng = np.random.default_rng(seed)
    oracle = SyntheticOracle(sample_identities(n_subjects, rng, prefix), labels, size)
    expressive = [lbl for lbl in labels if lbl != "neutral"]
    if not 0 <= drop <= len(expressive):
        raise ValueError(f"cannot drop {drop} of {len(expressive)} labels")
    examples = []
    for s in oracle.subjects:
        missing = set(rng.choice(expressive, drop, replace=False).tolist())
        for label in labels:
            if label in missing:
                continue
            intensity = 1.0 if label == "neutral" else float(rng.uniform(min_intensity, 1.0))
            img = oracle.render(s, oracle.code(label, intensity))
            angle = float(rng.uniform(-max_rotation, max_rotation))
            dx, dy = (int(v) for v in rng.integers(-max_shift, max_shift + 1, 2))
            if angle or dx or dy:
                img = shift_rotate(img, angle, dx, dy)
            examples.append(Example(s, label, img))
    return examples, oracle


def build_neutral_pool(n_subjects: int, seed: int = 1, size: int = 64, max_rotation: float = 4.0,
                       max_shift: int = 2, prefix: str = "u") -> list[Example]:
    """Unlabeled neutral faces of fresh identities, with the same head movement as the benchmark."""
    from .datapipe.augment import shift_rotate
    from .datapipe.synthetic import sample_identities

    rng = np.random.default_rng(seed)
    oracle = SyntheticOracle(sample_identities(n_subjects, rng, prefix), EXPRESSIONS, size)
    pool = []
    for s in oracle.subjects:
        img = oracle.render(s, np.zeros(len(EXPRESSIONS)))
        angle = float(rng.uniform(-max_rotation, max_rotation))
        dx, dy = (int(v) for v in rng.integers(-max_shift, max_shift + 1, 2))
        pool.append(Example(s, "neutral", shift_rotate(img, angle, dx, dy)))
    return pool
