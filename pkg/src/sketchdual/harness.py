"""Experiment orchestration: config, splits, pipeline stages, metrics, reports."""

import glob
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import cnn as cnn_mod
from .fusion import (
    SEQ_LEN,
    FeatureConfig,
    FusionConfig,
    FusionParams,
    TrainConfig,
    build_feature_sequence,
    predict_batch,
    stack_sequences,
    train,
)
from .nn import load_checkpoint, save_checkpoint
from .shape import build_codebook, load_codebook, save_codebook, sketch_descriptors
from .sketch import augment, load_sketch, normalize_sketch, rasterize, split_stroke_groups, ten_crop_sequence
from .synth import synth_generate

log = logging.getLogger(__name__)

CONFIG_ENV = "SKETCHDUAL_CONFIG"
TRAIN_FRAC = 0.67
VAL_FRAC = 0.13
MIN_PER_CLASS = 5


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    # data: a directory of canonical/SVG sketches, or the synthetic generator
    data_dir: str = ""
    synth_classes: int = 5
    synth_per_class: int = 20
    synth_families: str = ""
    canvas: int = 256
    augment: bool = False
    # rasters and texture network
    raster_size: int = 72
    crop: int = 64
    line_width: float = 2.0
    cnn: str = "desk"
    texture_dim: int = 64
    cnn_epochs: int = 15
    cnn_lr: float = 0.02
    cnn_batch: int = 32
    cnn_mirror: bool = True
    texture_features: str = ""
    # shape coding
    codebook_size: int = 500
    codebook_sample: int = 50000
    codebook_iters: int = 100
    llc_k: int = 5
    llc_reg: float = 0.0
    # recurrent model and training
    hidden_texture: int = 32
    hidden_shape: int = 32
    hidden_fusion: int = 32
    lr: float = 0.002
    batch: int = 100
    epochs: int = 200
    patience: int = 10
    clip: float = 5.0
    shape: bool = True
    texture: bool = True
    time_weights: bool = False
    normalized_sum: bool = False
    threads: int = 1
    output_dir: str = ""

    def feature_config(self):
        return FeatureConfig(self.raster_size, self.crop, self.line_width, self.llc_k, self.llc_reg)

    def train_config(self):
        return TrainConfig(self.lr, self.batch, self.epochs, self.seed, self.patience, self.clip)

    def cnn_config(self, classes):
        if self.cnn == "desk":
            return cnn_mod.desk_config(classes, self.crop, self.texture_dim)
        if self.cnn == "full":
            cfg = cnn_mod.full_config(classes)
            if cfg.input_size != self.crop:
                raise ConfigError(f"cnn=full needs crop={cfg.input_size}")
            return cfg
        raise ConfigError(f"unknown cnn preset {self.cnn!r}")

    def snapshot(self):
        """Every setting that affects results (the output location does not)."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    def tags(self):
        tags = []
        if not self.shape:
            tags.append("shape=off")
        if not self.texture:
            tags.append("texture=off")
        if self.time_weights:
            tags.append("time_weights=on")
        if self.normalized_sum:
            tags.append("normalized_sum=on")
        return tags


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(kind, raw, key):
    try:
        if kind is bool:
            v = raw.lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text, overrides=None):
    """Parse ``key = value`` lines (``#`` comments) into an :class:`ExperimentConfig`."""
    types = {f.name: type(f.default) for f in fields(ExperimentConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {n}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(types[key], raw, key)
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = raw if isinstance(raw, types[key]) else _coerce(types[key], str(raw), key)
    return ExperimentConfig(**values)


def load_config(path=None, overrides=None):
    path = path or os.environ.get(CONFIG_ENV)
    text = ""
    if path:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides)


# --------------------------------------------------------------------------
# data


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def split_counts(n):
    train = int(np.floor(TRAIN_FRAC * n))
    val = int(np.floor(VAL_FRAC * n))
    return train, val, n - train - val


def split_dataset(items, seed=0, ids=None):
    """Stratified 67/13/20 split of sketch ids (default: positions) by class.

    ``items`` are sketches or their class labels.
    """
    labels = [getattr(x, "label", x) for x in items]
    ids = list(range(len(labels))) if ids is None else list(ids)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for cls in sorted(set(labels), key=str):
        members = [i for i, l in zip(ids, labels) if l == cls]
        if len(members) < MIN_PER_CLASS:
            raise ValueError(f"class {cls!r} has {len(members)} sketches; need at least {MIN_PER_CLASS}")
        members = [members[j] for j in rng.permutation(len(members))]
        a, b, _ = split_counts(len(members))
        parts[0].extend(members[:a])
        parts[1].extend(members[a : a + b])
        parts[2].extend(members[a + b :])
    return DatasetSplit(*(sorted(p) for p in parts), seed)


def load_sketch_dir(path):
    """Canonical ``*.json`` and ``*.svg`` files, sorted by name; SVG labels come from the parent dir."""
    files = sorted(glob.glob(os.path.join(path, "**", "*.json"), recursive=True))
    files += sorted(glob.glob(os.path.join(path, "**", "*.svg"), recursive=True))
    sketches, names = [], []
    for f in sorted(files):
        s = load_sketch(f)
        if s.label is None:
            s = replace(s, label=os.path.basename(os.path.dirname(f)))
        sketches.append(s)
        names.append(os.path.relpath(f, path))
    if not sketches:
        raise ValueError(f"no sketches found under {path}")
    return sketches, names


def codebook_sample(sketches, sample, seed):
    """Random stroke descriptors from every stroke group of ``sketches``."""
    desc = []
    for s in sketches:
        for g in split_stroke_groups(s):
            desc.append(sketch_descriptors(g))
    desc = np.concatenate(desc)
    rng = np.random.default_rng(seed)
    if len(desc) > sample:
        desc = desc[np.sort(rng.choice(len(desc), size=sample, replace=False))]
    return desc


def group_bitmaps(sketches, labels, fcfg, mirror=True):
    """Centre crops of every stroke-group raster (and their mirror images) for CNN pretraining."""
    xs, ys = [], []
    for s, y in zip(sketches, labels):
        for g in split_stroke_groups(s):
            crops = ten_crop_sequence(rasterize(g, fcfg.raster_size, fcfg.line_width), fcfg.crop)
            xs.append(crops[8])
            ys.append(y)
            if mirror:
                xs.append(crops[9])
                ys.append(y)
    return np.stack(xs), np.array(ys)


def parallel_map(fn, items, threads=1):
    """``[fn(x) for x in items]``, spread over ``threads`` workers when above one."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def featurize(sketches, codebook, cnn_params, fcfg, threads=1, textures=None):
    """Feature sequences for many sketches; order of the result follows the input."""

    def one(i):
        tex = None if textures is None else textures[i]
        return build_feature_sequence(sketches[i], codebook, cnn_params, fcfg, tex)

    return parallel_map(one, range(len(sketches)), threads)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, cols: predicted

    @property
    def total(self):
        return int(self.confusion.sum())


def confusion_matrix(true, pred, classes):
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def evaluate(params, sequences, labels):
    """Top-1 accuracy and confusion matrix of ``params`` on labelled sequences."""
    if len(sequences) == 0:
        raise ValueError("cannot evaluate an empty split")
    Xt, Xs = stack_sequences(sequences)
    pred, _ = predict_batch(Xt, Xs, params)
    cm = confusion_matrix(labels, pred, params.config.classes)
    return EvalResult(float(np.trace(cm) / cm.sum()), cm)


# --------------------------------------------------------------------------
# persistence


def codebook_hash(codebook):
    return hashlib.sha256(np.ascontiguousarray(codebook.centers, dtype="<f4").tobytes()).hexdigest()


def save_model(path, params, class_names, meta=None):
    header = {
        "fusion_config": asdict(params.config),
        "classes": list(class_names),
        **(meta or {}),
    }
    save_checkpoint(path, params.groups(), header, kind="model")


def load_model(path):
    groups, header = load_checkpoint(path, kind="model")
    config = FusionConfig(**header["fusion_config"])
    return FusionParams.from_groups(config, groups), header


@dataclass
class ExperimentReport:
    config: dict
    classes: list
    trace: list
    cnn_trace: list
    accuracy: dict
    confusion: list
    best_epoch: int
    tags: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def body(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.body() + "\n")
    with open(os.path.join(out_dir, "trace.tsv"), "w", encoding="utf-8") as fh:
        cols = list(report.trace[0]) if report.trace else []
        fh.write("\t".join(cols) + "\n")
        for row in report.trace:
            fh.write("\t".join(repr(row[c]) for c in cols) + "\n")
    with open(os.path.join(out_dir, "accuracy.tsv"), "w", encoding="utf-8") as fh:
        fh.write("split\taccuracy\n")
        for k, v in report.accuracy.items():
            fh.write(f"{k}\t{v!r}\n")
    with open(os.path.join(out_dir, "confusion.tsv"), "w", encoding="utf-8") as fh:
        fh.write("true\\pred\t" + "\t".join(report.classes) + "\n")
        for name, row in zip(report.classes, report.confusion):
            fh.write(name + "\t" + "\t".join(str(v) for v in row) + "\n")
    from .plots import write_plots

    write_plots(report, out_dir)


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport(**json.load(fh))


# --------------------------------------------------------------------------
# pipeline


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class Prepared:
    """Everything the recurrent stage needs, reusable across model ablations."""

    classes: list
    train_seqs: list
    train_labels: np.ndarray
    val_seqs: list
    val_labels: np.ndarray
    test_seqs: list
    test_labels: np.ndarray
    codebook: object
    cnn_params: object
    cnn_trace: list
    split: DatasetSplit


def load_dataset(config):
    """Normalised sketches, sorted class names and integer labels for a config."""
    if config.data_dir:
        sketches, _ = load_sketch_dir(config.data_dir)
    else:
        fams = [f.strip() for f in config.synth_families.split(",") if f.strip()] or None
        sketches = synth_generate(config.synth_classes, config.synth_per_class, config.seed, fams)
    sketches = [normalize_sketch(s, config.canvas) for s in sketches]
    classes = sorted({s.label for s in sketches}, key=str)
    index = {c: i for i, c in enumerate(classes)}
    return sketches, classes, np.array([index[s.label] for s in sketches])


def training_sketches(config, sketches, labels, split):
    """Training split, expanded by augmentation when enabled."""
    train_sk = [sketches[i] for i in split.train]
    train_y = labels[split.train]
    if config.augment:
        train_sk = [v for s in train_sk for v in augment(s)]
        train_y = np.repeat(train_y, 18)
    return train_sk, train_y


def train_codebook(config, train_sk):
    desc = codebook_sample(train_sk, config.codebook_sample, config.seed)
    return build_codebook(desc, config.codebook_size, config.codebook_iters, config.seed)


def train_cnn(config, train_sk, train_y, classes):
    xs, ys = group_bitmaps(train_sk, train_y, config.feature_config(), config.cnn_mirror)
    return cnn_mod.pretrain_texture(
        xs,
        ys,
        config.cnn_config(classes),
        config.cnn_epochs,
        config.cnn_lr,
        config.cnn_batch,
        config.seed,
    )


def read_texture_rows(path, count):
    rows, _ = cnn_mod.read_feature_file(path)
    if len(rows) != SEQ_LEN * count:
        raise ValueError(f"{path}: {len(rows)} rows for {count} sketches")
    return rows.reshape(count, SEQ_LEN, -1)


def prepare(config, split=None, codebook=None, cnn_params=None):
    """Import, split, augment, build the codebook, pretrain the CNN and featurize.

    A precomputed ``split``, ``codebook`` or ``cnn_params`` skips its stage.
    """
    fcfg = config.feature_config()
    with _Stage("import"):
        sketches, classes, labels = load_dataset(config)
    with _Stage("split"):
        if split is None:
            split = split_dataset(labels, config.seed)
        elif sorted(split.train + split.validation + split.test) != list(range(len(sketches))):
            raise ValueError("split does not partition the dataset")
    textures = None
    if config.texture_features:
        with _Stage("texture-import"):
            textures = read_texture_rows(config.texture_features, len(sketches))
    with _Stage("augment"):
        if config.augment and textures is not None:
            raise ValueError("augmentation needs the CNN; it cannot reuse imported texture rows")
        train_sk, train_y = training_sketches(config, sketches, labels, split)
    with _Stage("codebook"):
        if codebook is None:
            codebook = train_codebook(config, train_sk)
    cnn_trace = []
    if textures is None and cnn_params is None:
        with _Stage("pretrain-cnn"):
            cnn_params, cnn_trace = train_cnn(config, train_sk, train_y, len(classes))
    with _Stage("featurize"):
        def run(ids, expanded=None):
            sk = expanded if expanded is not None else [sketches[i] for i in ids]
            tex = None if textures is None else [textures[i] for i in ids]
            return featurize(sk, codebook, cnn_params, fcfg, config.threads, tex)

        tr = run(split.train, train_sk)
        va = run(split.validation)
        te = run(split.test)
    return Prepared(
        classes,
        tr,
        train_y,
        va,
        labels[split.validation],
        te,
        labels[split.test],
        codebook,
        cnn_params,
        cnn_trace,
        split,
    )


def fit_and_report(config, prep):
    """Train the fusion model on prepared features, evaluate, and assemble a report."""
    with _Stage("train"):
        texture_dim = prep.train_seqs[0].texture.shape[1]
        mcfg = FusionConfig(
            texture_dim,
            prep.codebook.size,
            len(prep.classes),
            config.hidden_texture,
            config.hidden_shape,
            config.hidden_fusion,
            config.texture,
            config.shape,
            config.time_weights,
            config.normalized_sum,
        )
        Xt, Xs = stack_sequences(prep.train_seqs)
        Vt, Vs = stack_sequences(prep.val_seqs)
        result = train((Xt, Xs, prep.train_labels), (Vt, Vs, prep.val_labels), mcfg, config.train_config())
    with _Stage("evaluate"):
        acc = {}
        for name, seqs, ys in (
            ("train", prep.train_seqs, prep.train_labels),
            ("validation", prep.val_seqs, prep.val_labels),
            ("test", prep.test_seqs, prep.test_labels),
        ):
            ev = evaluate(result.params, seqs, ys)
            acc[name] = ev.accuracy
            if name == "test":
                confusion = ev.confusion
    report = ExperimentReport(
        config=config.snapshot(),
        classes=[str(c) for c in prep.classes],
        trace=result.trace,
        cnn_trace=prep.cnn_trace,
        accuracy=acc,
        confusion=confusion.tolist(),
        best_epoch=result.best_epoch,
        tags=config.tags(),
        counts={"train": len(prep.train_seqs), "validation": len(prep.val_seqs), "test": len(prep.test_seqs)},
    )
    return report, result


def run_experiment(config, split=None, codebook=None, cnn_params=None):
    """Run every stage from a config (path, text-parsed config, or :class:`ExperimentConfig`).

    Returns ``(report, artifacts)`` where artifacts holds the trained parameters,
    codebook and CNN. When ``output_dir`` is set, the report, tables, plots and
    checkpoints are written there.
    """
    if isinstance(config, (str, os.PathLike)):
        config = load_config(config)
    prep = prepare(config, split, codebook, cnn_params)
    report, result = fit_and_report(config, prep)
    artifacts = {
        "params": result.params,
        "final_params": result.final,
        "codebook": prep.codebook,
        "cnn": prep.cnn_params,
        "prepared": prep,
    }
    if config.output_dir:
        with _Stage("write"):
            write_artifacts(config.output_dir, config, report, result.params, prep.codebook, prep.cnn_params)
    return report, artifacts


def write_artifacts(out, config, report, params, codebook, cnn_params=None):
    """Report files plus ``model.ckpt``, ``codebook.bin`` and (when trained here) ``cnn.ckpt``."""
    write_report(report, out)
    save_codebook(codebook, os.path.join(out, "codebook.bin"))
    if cnn_params is not None:
        cnn_mod.save_cnn(cnn_params, os.path.join(out, "cnn.ckpt"), {"seed": config.seed})
    save_model(
        os.path.join(out, "model.ckpt"),
        params,
        report.classes,
        {
            "seed": config.seed,
            "epoch": report.best_epoch,
            "codebook_sha256": codebook_hash(codebook),
            "config": config.snapshot(),
        },
    )


def load_model_dir(path):
    """``(params, header, codebook, cnn_params or None)`` from a directory written by a run."""
    params, header = load_model(os.path.join(path, "model.ckpt"))
    codebook = load_codebook(os.path.join(path, "codebook.bin"))
    if codebook_hash(codebook) != header.get("codebook_sha256"):
        raise ValueError(f"{path}: codebook does not match the model checkpoint")
    cnn_path = os.path.join(path, "cnn.ckpt")
    cnn_params = cnn_mod.load_cnn(cnn_path) if os.path.exists(cnn_path) else None
    return params, header, codebook, cnn_params
