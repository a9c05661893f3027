"""Shared fixtures: a small fast corpus and the full seed-42 evaluation corpus.

The seed-42 corpus (100 normal + 100 malicious traces, 120 s) backs the
end-to-end checks; it is generated once per session and reused, with wall
times recorded so the acceptance suite can assert the runtime budget.
"""

from __future__ import annotations

import time

import pytest

from warden.datagen import ScenarioSpec, gen_dataset
from warden.features import FeatureConfig, Scaler
from warden.ml import MlpClassifier, RnnClassifier, SvmClassifier
from warden.ml.data import build_feature_dataset, build_sequence_dataset, split


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """6 normal + 6 malicious traces, 40 s each: enough windows for unit tests."""
    out = tmp_path_factory.mktemp("corpus-small")
    manifest = gen_dataset(ScenarioSpec(n_normal=6, n_malicious=6, duration_s=40.0, seed=7), out)
    return {"dir": str(out), "manifest_path": str(out / "manifest.json"), "manifest": manifest}


@pytest.fixture(scope="session")
def corpus42(tmp_path_factory):
    """The seed-42 evaluation corpus; generation time is recorded."""
    out = tmp_path_factory.mktemp("corpus-42")
    t0 = time.monotonic()
    manifest = gen_dataset(ScenarioSpec(n_normal=100, n_malicious=100, duration_s=120.0, seed=42), out)
    return {
        "dir": str(out),
        "manifest_path": str(out / "manifest.json"),
        "manifest": manifest,
        "gen_seconds": time.monotonic() - t0,
    }


@pytest.fixture(scope="session")
def corpus42_features(corpus42):
    config = FeatureConfig()
    t0 = time.monotonic()
    dataset, vectors = build_feature_dataset(corpus42["manifest_path"], config)
    return {
        "config": config,
        "dataset": dataset,
        "vectors": vectors,
        "extract_seconds": time.monotonic() - t0,
    }


@pytest.fixture(scope="session")
def comparison42(corpus42, corpus42_features):
    """Group-aware split, scaler, and the three trained models with timings."""
    config = corpus42_features["config"]
    dataset = corpus42_features["dataset"]
    timings = {}

    train, test = split(dataset, 0.7, seed=42)
    scaler = Scaler().fit(train.X)
    X_train, X_test = scaler.transform(train.X), scaler.transform(test.X)

    t0 = time.monotonic()
    svm = SvmClassifier(seed=42).fit(X_train, train.y)
    timings["svm"] = time.monotonic() - t0

    t0 = time.monotonic()
    mlp = MlpClassifier(seed=42).fit(X_train, train.y)
    timings["mlp"] = time.monotonic() - t0

    t0 = time.monotonic()
    sequences = build_sequence_dataset(corpus42["manifest_path"], config, t_max=512)
    timings["sequence_build"] = time.monotonic() - t0
    seq_train, seq_test = split(sequences, 0.7, seed=42)

    t0 = time.monotonic()
    rnn = RnnClassifier(seed=42, vocab=config.hash_dim).fit(seq_train.sequences, seq_train.y)
    timings["rnn"] = time.monotonic() - t0

    return {
        "config": config,
        "scaler": scaler,
        "train": train,
        "test": test,
        "X_train": X_train,
        "X_test": X_test,
        "svm": svm,
        "mlp": mlp,
        "rnn": rnn,
        "seq_train": seq_train,
        "seq_test": seq_test,
        "timings": timings,
        "gen_seconds": corpus42["gen_seconds"],
        "extract_seconds": corpus42_features["extract_seconds"],
    }


def heldout_entries(corpus, test_groups, profile=None, label=None):
    """Manifest entries whose jobs landed on the test side of the split."""
    out = []
    for entry in corpus["manifest"]["entries"]:
        if entry["job_id"] not in test_groups:
            continue
        if profile is not None and entry["profile"] != profile:
            continue
        if label is not None and entry["label"] != label:
            continue
        out.append(entry)
    return out
