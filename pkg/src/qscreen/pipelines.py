"""Experiment orchestration: feature loading, class-ratio sampling,
splits, the embedding conditions, repetition, and reporting.

Protocol choices that the underlying study leaves open are fixed here and
flagged in every report header:

* Splits are 70/15/15 train/validation/test, stratified by label.
* The data pipeline (activator cap, ratio sampling, splitting) is driven
  by `split_seed` alone, so the five repetitions see identical data and
  differ only in algorithm initialization/minibatching. Conditions with
  no algorithmic randomness (the SVM rows) therefore report a zero
  standard deviation across seeds.
* Ratio sampling happens before splitting by default (train/val/test then
  share the ratio); `ratio_before_split = false` flips that.
* Standardization, PCA, and the projected-kernel bandwidth are fitted on
  the training fold only and reused everywhere else.
* Desk-scale cap: activators are subsampled to `max_activators` (default
  200), which bounds a 1:6 run at 1400 samples.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__, featuremap, kernels, models, training
from .encoder import EncoderNetwork, load_weights, save_weights
from .featuremap import FeatureMapKind, FeatureMapSpec
from .models import metrics as compute_metrics

FEATURE_NAMES = [
    "Num_C", "Num_N", "Num_O", "Num_P", "Num_S", "Num_F", "Num_Cl", "Num_Br", "Num_I",
    "Single_Bonds", "Double_Bonds", "NumStereoE", "Num_Aromatic_Atoms", "Aromatic_Proportion",
    "NumRotatableBonds", "Total_NH_OH", "Total_N_O", "NumHydrogenAcceptors", "NumHydrogenDonors",
    "NumofHeteroatoms", "MolLogP", "MolWt", "FpDensityMorgan1", "FpDensityMorgan2",
    "FpDensityMorgan3", "MaxAbsPartialCharge", "MinAbsPartialCharge", "NumValenceElectrons",
    "BertzCT", "BalabanJ", "Chi0", "Chi1", "Chi2n", "Chi3n", "HallKierAlpha", "Ipc",
    "Kappa1", "Kappa2", "Kappa3",
]

N_FEATURES = len(FEATURE_NAMES)

PROTOCOL_NOTES = [
    "split: 70/15/15 train/val/test, stratified by label (protocol choice, not prescribed)",
    "data pipeline seeded by split_seed; repetition seeds drive model initialization only",
    "ratio sampling applied before splitting unless ratio_before_split = false",
    "standardization/PCA/kernel bandwidth fitted on the training fold only",
]


class DataError(Exception):
    """Malformed input data; CLI exit code 3."""


class ConfigError(Exception):
    """Invalid experiment configuration; CLI exit code 2."""


@dataclass(frozen=True)
class Sample:
    id: str
    features: np.ndarray
    label: int  # +1 activator, -1 inactivator
    target_name: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.shape != (N_FEATURES,) or not np.all(np.isfinite(feats)):
            raise DataError(f"sample {self.id!r} needs {N_FEATURES} finite features")
        if self.label not in (-1, 1):
            raise DataError(f"sample {self.id!r} has non-binary label {self.label!r}")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)


_LABEL_TOKENS = {"1": 1, "+1": 1, "0": -1, "-1": -1}


def load_features(path, target_name: str = "") -> list:
    """Read a feature CSV (id, label, then the 39 descriptor columns in
    canonical order). Any malformed row aborts with its row number."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    samples = []
    with open(path, newline="", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    expected = ["id", "label"] + FEATURE_NAMES
    if header != expected:
        raise DataError(
            f"{path}: header mismatch; expected id,label,{','.join(FEATURE_NAMES[:3])},... "
            f"got {','.join(header[:5])},..."
        )
    for row_no, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(expected):
            raise DataError(f"{path}:{row_no}: expected {len(expected)} columns, got {len(cells)}")
        sid, token = cells[0], cells[1]
        if token not in _LABEL_TOKENS:
            raise DataError(f"{path}:{row_no}: unknown label token {token!r}")
        try:
            feats = np.array([float(c) for c in cells[2:]])
        except ValueError as exc:
            raise DataError(f"{path}:{row_no}: non-numeric feature cell ({exc})") from exc
        if not np.all(np.isfinite(feats)):
            raise DataError(f"{path}:{row_no}: missing or non-finite feature value")
        samples.append(Sample(sid, feats, _LABEL_TOKENS[token], target_name))
    return samples


class ClassRatio(Enum):
    ONE_TO_ONE = "1:1"
    ONE_TO_SIX = "1:6"
    AS_IS = "as_is"


_RATIO_FACTOR = {ClassRatio.ONE_TO_ONE: 1, ClassRatio.ONE_TO_SIX: 6}


def sample_ratio(samples, ratio: ClassRatio, seed: int) -> list:
    """Keep every activator; draw inactivators uniformly without
    replacement to reach the requested ratio."""
    if ratio is ClassRatio.AS_IS:
        return list(samples)
    activators = [s for s in samples if s.label == 1]
    inactivators = [s for s in samples if s.label == -1]
    needed = _RATIO_FACTOR[ratio] * len(activators)
    if needed > len(inactivators):
        raise DataError(
            f"ratio {ratio.value} needs {needed} inactivators, only {len(inactivators)} available"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(inactivators), size=needed, replace=False)
    return activators + [inactivators[i] for i in sorted(chosen)]


def stratified_split(samples, fractions, seed: int):
    """Deterministic stratified train/val/test split."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ConfigError(f"split fractions must be three positives summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    buckets = ([], [], [])
    for label in (1, -1):
        group = [s for s in samples if s.label == label]
        order = rng.permutation(len(group))
        n = len(group)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        for k, i in enumerate(order):
            if k < n_train:
                buckets[0].append(group[i])
            elif k < n_train + n_val:
                buckets[1].append(group[i])
            else:
                buckets[2].append(group[i])
    return buckets


def split_xy(samples):
    X = np.stack([s.features for s in samples]) if samples else np.zeros((0, N_FEATURES))
    y = np.array([s.label for s in samples], dtype=int)
    return X, y


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)  # constant features pass through
        return cls(mean, scale)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


class Condition(Enum):
    NQE_ZZ_QCNN = "nqe_zz_qcnn"
    NQE_XYZ_QCNN = "nqe_xyz_qcnn"
    RBF_SINGLE_LAYER = "rbf_single_layer"
    QPRE1_FINETUNE_RBF = "qpre1_finetune_rbf"
    QPRE2_FROZEN = "qpre2_frozen"
    QPRE3_JOINT = "qpre3_joint"
    SVM_ZZ = "svm_zz"
    SVM_PQK_ZZ = "svm_pqk_zz"
    SVM_XYZ = "svm_xyz"
    SVM_PQK_XYZ = "svm_pqk_xyz"
    SVM_RBF = "svm_rbf"
    SVM_LINEAR = "svm_linear"


_SVM_CONDITIONS = {
    Condition.SVM_ZZ,
    Condition.SVM_PQK_ZZ,
    Condition.SVM_XYZ,
    Condition.SVM_PQK_XYZ,
    Condition.SVM_RBF,
    Condition.SVM_LINEAR,
}
_NQE_CONDITIONS = {Condition.NQE_ZZ_QCNN, Condition.NQE_XYZ_QCNN}
_QPRE_CONDITIONS = {
    Condition.QPRE1_FINETUNE_RBF,
    Condition.QPRE2_FROZEN,
    Condition.QPRE3_JOINT,
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    condition: Condition
    target: str = ""
    class_ratio: ClassRatio = ClassRatio.AS_IS
    n_qubits: int = 4
    feature_map: FeatureMapKind = FeatureMapKind.ZZ
    pca_dims: int | None = None
    seeds: tuple = (0, 1, 2, 3, 4)
    split_seed: int = 12345
    split: tuple = (0.70, 0.15, 0.15)
    ratio_before_split: bool = True
    max_activators: int = 200
    encoder_hidden: tuple = (64, 32)
    rbf_feature_dim: int = 8
    zz_layers: int = 3
    xyz_layers: int = 2
    embed_lr: float = 0.005
    embed_epochs: int = 300
    embed_batch: int = 32
    embed_patience: int = 40
    classifier_lr: float = 0.01
    classifier_epochs: int = 300
    classifier_batch: int = 32
    classifier_patience: int = 40
    svm_c: float = 1.0
    pqk_variance: str = "pooled"
    trace_max_per_class: int = 512
    pretrained_encoder_dir: str = ""
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.n_qubits < 1 or self.n_qubits > 16:
            raise ConfigError(f"n_qubits out of range: {self.n_qubits}")
        if self.condition in _NQE_CONDITIONS and self.n_qubits != 8:
            raise ConfigError("the circuit classifier is fixed at 8 qubits; set n_qubits = 8")
        if self.pqk_variance not in ("pooled", "mean_per_observable"):
            raise ConfigError(f"unknown pqk_variance {self.pqk_variance!r}")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise ConfigError("pca_dims must be >= 1 when set")

    @property
    def map_kind(self) -> FeatureMapKind:
        if self.condition in (Condition.NQE_ZZ_QCNN, Condition.SVM_ZZ, Condition.SVM_PQK_ZZ):
            return FeatureMapKind.ZZ
        if self.condition in (Condition.NQE_XYZ_QCNN, Condition.SVM_XYZ, Condition.SVM_PQK_XYZ):
            return FeatureMapKind.XYZ
        return self.feature_map

    def map_spec(self) -> FeatureMapSpec:
        layers = self.zz_layers if self.map_kind is FeatureMapKind.ZZ else self.xyz_layers
        return FeatureMapSpec(self.map_kind, self.n_qubits, layers=layers)

    def effective_pca_dims(self) -> int | None:
        """SVM quantum rows project to the circuit's input width by default;
        the XYZ map needs 2n angles, so those rows use 2n components."""
        if self.condition in (Condition.SVM_RBF, Condition.SVM_LINEAR):
            return self.pca_dims
        if self.condition in _SVM_CONDITIONS:
            return self.pca_dims if self.pca_dims is not None else self.map_spec().input_dim
        return self.pca_dims


_CONFIG_KEYS = {
    "dataset": str,
    "condition": str,
    "target": str,
    "class_ratio": str,
    "n_qubits": int,
    "feature_map": str,
    "pca_dims": "optional_int",
    "seeds": "int_list",
    "split_seed": int,
    "split": "float_list",
    "ratio_before_split": "bool",
    "max_activators": int,
    "encoder_hidden": "int_list",
    "rbf_feature_dim": int,
    "zz_layers": int,
    "xyz_layers": int,
    "embed_lr": float,
    "embed_epochs": int,
    "embed_batch": int,
    "embed_patience": int,
    "classifier_lr": float,
    "classifier_epochs": int,
    "classifier_batch": int,
    "classifier_patience": int,
    "svm_c": float,
    "pqk_variance": str,
    "trace_max_per_class": int,
    "pretrained_encoder_dir": str,
    "out_dir": str,
}


def _parse_value(key, raw):
    kind = _CONFIG_KEYS[key]
    raw = raw.strip()
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError("expected true/false")
        if kind == "optional_int":
            return None if raw.lower() == "none" else int(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "float_list":
            return tuple(float(v) for v in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    raise ConfigError(f"unhandled config key kind for {key!r}")


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    for required in ("dataset", "condition"):
        if required not in values:
            raise ConfigError(f"missing required config key {required!r}")
    try:
        values["condition"] = Condition(values["condition"])
        if "class_ratio" in values:
            values["class_ratio"] = ClassRatio(values["class_ratio"])
        if "feature_map" in values:
            values["feature_map"] = FeatureMapKind(values["feature_map"].upper())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def config_text(config: ExperimentConfig) -> str:
    """Canonical flat key-value serialization (sorted keys)."""
    out = []
    for f in sorted(fields(config), key=lambda f: f.name):
        v = getattr(config, f.name)
        if isinstance(v, Enum):
            v = v.value
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


def config_fingerprint(config: ExperimentConfig) -> str:
    return hashlib.sha256(config_text(config).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Data staging


def _cap_activators(samples, config):
    activators = [s for s in samples if s.label == 1]
    inactivators = [s for s in samples if s.label == -1]
    rng = np.random.default_rng(config.split_seed + 1)
    if len(activators) > config.max_activators:
        keep = rng.choice(len(activators), size=config.max_activators, replace=False)
        activators = [activators[i] for i in sorted(keep)]
    cap_inact = 6 * config.max_activators
    if config.class_ratio is ClassRatio.AS_IS and len(inactivators) > cap_inact:
        keep = rng.choice(len(inactivators), size=cap_inact, replace=False)
        inactivators = [inactivators[i] for i in sorted(keep)]
    return activators + inactivators


def data_splits(config: ExperimentConfig, samples=None):
    """Target filter -> desk-scale cap -> ratio -> stratified split, all
    driven by split_seed."""
    if samples is None:
        samples = load_features(config.dataset)
    if config.target:
        samples = [s for s in samples if s.target_name == config.target or not s.target_name]
    samples = _cap_activators(samples, config)
    if config.ratio_before_split:
        samples = sample_ratio(samples, config.class_ratio, config.split_seed + 2)
        train, val, test = stratified_split(samples, config.split, config.split_seed + 3)
    else:
        train, val, test = stratified_split(samples, config.split, config.split_seed + 3)
        train = sample_ratio(train, config.class_ratio, config.split_seed + 4)
        val = sample_ratio(val, config.class_ratio, config.split_seed + 5)
        test = sample_ratio(test, config.class_ratio, config.split_seed + 6)
    if not train or not val or not test:
        raise DataError(
            f"empty split (train={len(train)}, val={len(val)}, test={len(test)}); "
            "dataset too small for the requested protocol"
        )
    return train, val, test


# ---------------------------------------------------------------------------
# Condition runners (one seed each)


def _embed_rows(spec, Z):
    return [featuremap.embed(spec, z) for z in Z]


def _train_config(config, phase, seed):
    if phase == "embed":
        return training.TrainConfig(
            learning_rate=config.embed_lr,
            batch_pairs=config.embed_batch,
            max_epochs=config.embed_epochs,
            patience=config.embed_patience,
            seed=seed,
        )
    return training.TrainConfig(
        learning_rate=config.classifier_lr,
        batch_pairs=config.classifier_batch,
        max_epochs=config.classifier_epochs,
        patience=config.classifier_patience,
        seed=seed,
    )


def _svm_gamma_for_rbf(X_train):
    d = X_train.shape[1]
    var = float(np.var(X_train))
    if var <= 0:
        raise DataError("training features have zero variance; RBF bandwidth undefined")
    return 1.0 / (d * var)


def _svm_seed_run(config, splits, seed):
    """Kernel SVM rows; no algorithmic randomness, so seeds coincide."""
    (train, val, test) = splits
    X_train, y_train = split_xy(train)
    X_test, y_test = split_xy(test)
    scaler = Standardizer.fit(X_train)
    Xs_train, Xs_test = scaler.transform(X_train), scaler.transform(X_test)
    extras = {}

    k = config.effective_pca_dims()
    if k is not None:
        proj = models.pca_fit(Xs_train, k)
        Xs_train = models.pca_transform(proj, Xs_train)
        Xs_test = models.pca_transform(proj, Xs_test)

    cond = config.condition
    if cond in (Condition.SVM_RBF, Condition.SVM_LINEAR):
        if cond is Condition.SVM_RBF:
            gamma = _svm_gamma_for_rbf(Xs_train)
            extras["rbf_gamma"] = gamma
            gram = kernels.rbf_gram(Xs_train, gamma)
            rows = kernels.rbf_cross(Xs_test, Xs_train, gamma)
        else:
            gram = kernels.linear_gram(Xs_train)
            rows = kernels.linear_cross(Xs_test, Xs_train)
    else:
        spec = config.map_spec()
        states_train = _embed_rows(spec, Xs_train)
        states_test = _embed_rows(spec, Xs_test)
        if cond in (Condition.SVM_PQK_ZZ, Condition.SVM_PQK_XYZ):
            vs = np.stack([kernels.pauli_expectation_vector(s) for s in states_train])
            gamma = kernels.pqk_gamma(vs, d=Xs_train.shape[1], mode=config.pqk_variance)
            extras["pqk_gamma"] = gamma
            gram = kernels.pqk_gram(states_train, gamma)
            rows = kernels.pqk_cross(states_test, states_train, gamma)
        else:
            gram = kernels.fidelity_gram(states_train)
            rows = kernels.fidelity_cross(states_test, states_train)

    model, info = models.svm_fit(gram, y_train, C=config.svm_c)
    pred = np.where(models.svm_decision(model, rows) >= 0, 1, -1)
    result = compute_metrics(y_test, pred)
    result.update(extras)
    result["svm_dual_objective"] = info["dual_objective"]
    result["n_support"] = int(model.support.size)
    return result, {}


def _encoder_dims(config, output_dim):
    return [N_FEATURES, *config.encoder_hidden, output_dim]


def _nqe_phase(config, splits, seed, artifacts):
    """Train (or load) the fidelity-objective encoder; returns encoder and
    trace distances before/after on train and test."""
    (train, val, test) = splits
    X_train, y_train = split_xy(train)
    X_val, y_val = split_xy(val)
    X_test, y_test = split_xy(test)
    scaler = Standardizer.fit(X_train)
    spec = config.map_spec()
    dims = _encoder_dims(config, spec.input_dim)
    initial = EncoderNetwork.initialize(dims, seed=seed)
    Xs_train, Xs_val, Xs_test = (scaler.transform(X) for X in (X_train, X_val, X_test))

    before = {
        "train": training.ensemble_trace_distance(
            initial, spec, Xs_train, y_train, config.trace_max_per_class, seed=config.split_seed
        ),
        "test": training.ensemble_trace_distance(
            initial, spec, Xs_test, y_test, config.trace_max_per_class, seed=config.split_seed
        ),
    }

    if config.pretrained_encoder_dir:
        enc_path = Path(config.pretrained_encoder_dir) / f"encoder_seed{seed}.bin"
        if not enc_path.exists():
            raise DataError(f"pretrained encoder missing: {enc_path}")
        encoder = load_weights(enc_path)
        history = []
    else:
        result = training.train_embedding(
            training.Objective.NQE,
            initial,
            spec,
            Xs_train,
            y_train,
            Xs_val,
            y_val,
            _train_config(config, "embed", seed),
        )
        encoder, history = result.encoder, result.history
    after = {
        "train": training.ensemble_trace_distance(
            encoder, spec, Xs_train, y_train, config.trace_max_per_class, seed=config.split_seed
        ),
        "test": training.ensemble_trace_distance(
            encoder, spec, Xs_test, y_test, config.trace_max_per_class, seed=config.split_seed
        ),
    }
    artifacts.setdefault("histories", {})[f"nqe_seed{seed}"] = history
    artifacts.setdefault("encoders", {})[f"encoder_seed{seed}"] = encoder
    data = {
        "scaler": scaler,
        "spec": spec,
        "encoder": encoder,
        "splits_std": (Xs_train, y_train, Xs_val, y_val, Xs_test, y_test),
        "trace_before": before,
        "trace_after": after,
    }
    return data


def _nqe_seed_run(config, splits, seed, artifacts):
    phase = _nqe_phase(config, splits, seed, artifacts)
    Xs_train, y_train, Xs_val, y_val, Xs_test, y_test = phase["splits_std"]
    spec, encoder = phase["spec"], phase["encoder"]
    emb = {
        name: np.stack(
            [featuremap.embed(spec, z).amplitudes for z in encoder.forward_batch(X)]
        )
        for name, X in (("train", Xs_train), ("val", Xs_val), ("test", Xs_test))
    }
    params, history = models.qcnn_train(
        emb["train"], y_train, emb["val"], y_val, _train_config(config, "classifier", seed)
    )
    artifacts.setdefault("histories", {})[f"qcnn_seed{seed}"] = history
    p = models.qcnn_forward_batch(emb["test"], params)
    pred = np.where(p >= 0.5, 1, -1)
    result = compute_metrics(y_test, pred)
    result["trace_distance_before_train_split"] = phase["trace_before"]["train"]
    result["trace_distance_before_test_split"] = phase["trace_before"]["test"]
    result["trace_distance_after_train_split"] = phase["trace_after"]["train"]
    result["trace_distance_after_test_split"] = phase["trace_after"]["test"]
    return result, {}


def _rbf_single_layer_seed_run(config, splits, seed, artifacts):
    (train, val, test) = splits
    X_train, y_train = split_xy(train)
    X_val, y_val = split_xy(val)
    X_test, y_test = split_xy(test)
    scaler = Standardizer.fit(X_train)
    Xs_train, Xs_val, Xs_test = (scaler.transform(X) for X in (X_train, X_val, X_test))
    dims = _encoder_dims(config, config.rbf_feature_dim)
    initial = EncoderNetwork.initialize(dims, seed=seed)
    result = training.train_embedding(
        training.Objective.RBF_ALIGN,
        initial,
        None,
        Xs_train,
        y_train,
        Xs_val,
        y_val,
        _train_config(config, "embed", seed),
    )
    artifacts.setdefault("histories", {})[f"align_seed{seed}"] = result.history
    artifacts.setdefault("encoders", {})[f"encoder_seed{seed}"] = result.encoder
    encoder = result.encoder
    model, history = models.single_layer_train(
        encoder.forward_batch(Xs_train),
        y_train,
        encoder.forward_batch(Xs_val),
        y_val,
        _train_config(config, "classifier", seed),
    )
    artifacts.setdefault("histories", {})[f"head_seed{seed}"] = history
    pred = model.predict(encoder.forward_batch(Xs_test)).ravel()
    return compute_metrics(y_test, pred), {}


def _qpre_seed_run(config, splits, seed, artifacts):
    phase = _nqe_phase(config, splits, seed, artifacts)
    Xs_train, y_train, Xs_val, y_val, Xs_test, y_test = phase["splits_std"]
    encoder = phase["encoder"]
    head_config = _train_config(config, "classifier", seed)

    if config.condition is Condition.QPRE1_FINETUNE_RBF:
        result = training.train_embedding(
            training.Objective.RBF_ALIGN,
            encoder,
            None,
            Xs_train,
            y_train,
            Xs_val,
            y_val,
            _train_config(config, "embed", seed),
        )
        encoder = result.encoder
        artifacts.setdefault("histories", {})[f"finetune_seed{seed}"] = result.history
        train_encoder = False
    elif config.condition is Condition.QPRE2_FROZEN:
        train_encoder = False
    else:  # QPRE3: joint training of encoder and head
        train_encoder = True

    if train_encoder:
        model, encoder, history = models.single_layer_train(
            None,
            y_train,
            None,
            y_val,
            head_config,
            encoder=encoder,
            X_train=Xs_train,
            X_val=Xs_val,
            train_encoder=True,
        )
        pred = model.predict(encoder.forward_batch(Xs_test)).ravel()
    else:
        model, history = models.single_layer_train(
            encoder.forward_batch(Xs_train),
            y_train,
            encoder.forward_batch(Xs_val),
            y_val,
            head_config,
        )
        pred = model.predict(encoder.forward_batch(Xs_test)).ravel()
    artifacts.setdefault("histories", {})[f"head_seed{seed}"] = history
    result = compute_metrics(y_test, pred)
    result["trace_distance_before_train_split"] = phase["trace_before"]["train"]
    result["trace_distance_after_train_split"] = phase["trace_after"]["train"]
    return result, {}


def _dispatch_seed(config, splits, seed, artifacts):
    if config.condition in _SVM_CONDITIONS:
        return _svm_seed_run(config, splits, seed)
    if config.condition in _NQE_CONDITIONS:
        return _nqe_seed_run(config, splits, seed, artifacts)
    if config.condition is Condition.RBF_SINGLE_LAYER:
        return _rbf_single_layer_seed_run(config, splits, seed, artifacts)
    return _qpre_seed_run(config, splits, seed, artifacts)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class RunReport:
    condition: str
    config_fingerprint: str
    config: str
    partial: bool
    seeds: list
    per_seed: list  # dicts: {"seed", "metrics" | "error"}
    aggregate: dict
    notes: list
    artifacts: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "schema_version": 1,
            "package_version": __version__,
            "condition": self.condition,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "partial": self.partial,
            "seeds": list(self.seeds),
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "notes": list(self.notes),
            "artifacts": self.artifacts,
        }


def aggregate_metrics(per_seed) -> dict:
    """Mean and population standard deviation over successful seeds."""
    rows = [e["metrics"] for e in per_seed if "metrics" in e]
    out = {}
    if not rows:
        return out
    for key in ("accuracy", "balanced_accuracy"):
        vals = np.array([r[key] for r in rows], dtype=float)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    return out


def run_condition(config: ExperimentConfig, out_dir=None, samples=None) -> RunReport:
    """Execute the condition end to end for every seed and aggregate."""
    splits = data_splits(config, samples=samples)
    artifacts = {}
    per_seed = []
    for seed in config.seeds:
        try:
            result, _ = _dispatch_seed(config, splits, seed, artifacts)
            per_seed.append({"seed": seed, "metrics": result})
        except (DataError, ConfigError):
            raise
        except Exception as exc:  # a failed stage marks the report partial
            per_seed.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    partial = any("error" in e for e in per_seed)
    report = RunReport(
        condition=config.condition.value,
        config_fingerprint=config_fingerprint(config),
        config=config_text(config),
        partial=partial,
        seeds=list(config.seeds),
        per_seed=per_seed,
        aggregate=aggregate_metrics(per_seed),
        notes=list(PROTOCOL_NOTES),
    )
    if out_dir is not None:
        _write_artifacts(report, artifacts, Path(out_dir), config)
    return report


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def _write_artifacts(report, artifacts, out_dir, config):
    import csv as _csv
    import io

    refs = {"histories": [], "encoders": []}
    for name, history in artifacts.get("histories", {}).items():
        rel = f"history/{report.condition}_{name}.csv"
        buf = io.StringIO()
        writer = _csv.writer(buf)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
        _atomic_write(out_dir / rel, buf.getvalue())
        refs["histories"].append(rel)
    for name, encoder in artifacts.get("encoders", {}).items():
        rel = f"weights/{report.condition}_{name}.bin"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        save_weights(encoder, out_dir / rel)
        refs["encoders"].append(rel)
    report.artifacts = {k: sorted(v) for k, v in refs.items() if v}


def report_json_bytes(report: RunReport) -> bytes:
    return json.dumps(report.to_payload(), sort_keys=True, indent=2).encode("utf-8")


def render_report_text(report: RunReport) -> str:
    lines = []
    status = "PARTIAL" if report.partial else "complete"
    lines.append(f"condition: {report.condition}   status: {status}")
    lines.append(f"config fingerprint: {report.config_fingerprint}")
    for note in report.notes:
        lines.append(f"# {note}")
    lines.append("")
    header = f"{'seed':>6}  {'accuracy':>9}  {'balanced':>9}  notes"
    lines.append(header)
    lines.append("-" * len(header))
    for entry in report.per_seed:
        if "error" in entry:
            lines.append(f"{entry['seed']:>6}  {'-':>9}  {'-':>9}  FAILED: {entry['error']}")
            continue
        m = entry["metrics"]
        extra = ""
        if "trace_distance_after_train_split" in m:
            extra = (
                f"trace {m.get('trace_distance_before_train_split', float('nan')):.4f}"
                f" -> {m['trace_distance_after_train_split']:.4f}"
            )
        lines.append(
            f"{entry['seed']:>6}  {m['accuracy']:>9.4f}  {m['balanced_accuracy']:>9.4f}  {extra}"
        )
    lines.append("")
    agg = report.aggregate
    if agg:
        lines.append(
            "mean +/- std: accuracy "
            f"{agg['accuracy_mean']:.2f} +/- {agg['accuracy_std']:.2f}, "
            "balanced accuracy "
            f"{agg['balanced_accuracy_mean']:.2f} +/- {agg['balanced_accuracy_std']:.2f}"
        )
    return "\n".join(lines) + "\n"


def report_emit(report: RunReport, out_dir) -> dict:
    """Write the machine-readable and human-readable report files."""
    if not report.seeds:
        raise ValueError("refusing to emit a report with no seeds")
    out_dir = Path(out_dir)
    base = f"{report.condition}_{report.config_fingerprint[:12]}"
    json_path = out_dir / f"{base}.json"
    text_path = out_dir / f"{base}.txt"
    _atomic_write(json_path, report_json_bytes(report))
    _atomic_write(text_path, render_report_text(report))
    return {"json": str(json_path), "text": str(text_path)}


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Batteries


COVID_BATTERY_ROWS = [
    ("svm_zz", 4), ("svm_zz", 8),
    ("svm_pqk_zz", 4), ("svm_pqk_zz", 8),
    ("svm_xyz", 4), ("svm_xyz", 8),
    ("svm_pqk_xyz", 4), ("svm_pqk_xyz", 8),
    ("svm_linear", "pca"), ("svm_rbf", "pca"),
    ("svm_linear", None), ("svm_rbf", None),
]

LITPCBA_BATTERY_CONDITIONS = [
    "nqe_zz_qcnn", "nqe_xyz_qcnn", "rbf_single_layer",
    "qpre1_finetune_rbf", "qpre2_frozen", "qpre3_joint",
]


def run_covid_battery(config: ExperimentConfig, out_dir=None, samples=None) -> list:
    """One report per kernel-SVM row: quantum kernels at 4 and 8 qubits plus
    the classical baselines with and without PCA."""
    reports = []
    if samples is None:
        samples = load_features(config.dataset)
    for cond, qubits in COVID_BATTERY_ROWS:
        overrides = {"condition": Condition(cond)}
        if qubits in (4, 8):
            overrides["n_qubits"] = qubits
            overrides["pca_dims"] = None  # auto: the circuit's input width
        elif qubits == "pca":
            overrides["pca_dims"] = config.n_qubits
        else:
            overrides["pca_dims"] = None
        row_config = replace(config, **overrides)
        reports.append(run_condition(row_config, out_dir=out_dir, samples=samples))
    return reports


def run_litpcba_battery(config: ExperimentConfig, out_dir=None, samples=None) -> list:
    if samples is None:
        samples = load_features(config.dataset)
    reports = []
    for cond in LITPCBA_BATTERY_CONDITIONS:
        row = replace(config, condition=Condition(cond), n_qubits=8)
        reports.append(run_condition(row, out_dir=out_dir, samples=samples))
    return reports


def render_battery_table(reports) -> str:
    lines = []
    header = f"{'condition':<22} {'qubits/pca':>10} {'balanced accuracy':>20} {'accuracy':>16}"
    lines.append(header)
    lines.append("-" * len(header))
    for rep in reports:
        cfg = dict(
            line.split(" = ", 1) for line in rep.config.strip().splitlines() if " = " in line
        )
        dims = cfg.get("pca_dims", "none")
        qubits = cfg.get("n_qubits", "-")
        tag = f"{qubits}q/{dims}"
        agg = rep.aggregate
        if agg:
            bal = f"{agg['balanced_accuracy_mean']:.2f} +/- {agg['balanced_accuracy_std']:.2f}"
            acc = f"{agg['accuracy_mean']:.2f} +/- {agg['accuracy_std']:.2f}"
        else:
            bal = acc = "FAILED"
        flag = " (partial)" if rep.partial else ""
        lines.append(f"{rep.condition:<22} {tag:>10} {bal:>20} {acc:>16}{flag}")
    return "\n".join(lines) + "\n"
