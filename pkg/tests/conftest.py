"""Shared fixtures: a small fast corpus for unit tests and one desk-scale
training run reused by every test that needs a converged model."""

from __future__ import annotations

from dataclasses import dataclass

import pytest
import torch

torch.set_num_threads(1)

from forgeseg import (
    CorpusConfig,
    DatasetManifest,
    ModelConfig,
    TrainConfig,
    TrainResult,
    build_desk_corpus,
    build_model,
    derive_seed,
    train,
)

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> DatasetManifest:
    """24 samples at 32x32: train 16 / val 4 / test 4, half fake."""
    config = CorpusConfig(
        n_samples=24, image_size=32, n_groups=6, n_train=16, n_test=4
    )
    out = tmp_path_factory.mktemp("tiny_corpus")
    return build_desk_corpus(config, rng_seed=11, out_dir=out)


@pytest.fixture()
def tiny_model_config() -> ModelConfig:
    return ModelConfig(input_size=(32, 32, 3), stages=3, base_channels=8, head_hidden=32)


DESK_SEED = 7
DESK_STEPS = 2000


@dataclass
class DeskRun:
    manifest: DatasetManifest
    model_config: ModelConfig
    result: TrainResult
    train_seconds: float


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory) -> DatasetManifest:
    """The default corpus: 250 samples at 64x64, 200 train / 50 test, 50% fake."""
    out = tmp_path_factory.mktemp("desk_corpus")
    return build_desk_corpus(CorpusConfig(), derive_seed(DESK_SEED, "synth"), out)


@pytest.fixture(scope="session")
def desk_run(desk_corpus, tmp_path_factory) -> DeskRun:
    """One joint training run at the full desk budget, shared across tests."""
    import time

    seed = derive_seed(DESK_SEED, "train")
    model_config = ModelConfig()
    model = build_model(model_config, rng_seed=seed)
    train_config = TrainConfig(steps=DESK_STEPS, batch_size=16, seed=seed)
    out = tmp_path_factory.mktemp("desk_run")
    t0 = time.perf_counter()
    result = train(model, desk_corpus, train_config, out_dir=out)
    return DeskRun(
        manifest=desk_corpus,
        model_config=model_config,
        result=result,
        train_seconds=time.perf_counter() - t0,
    )
