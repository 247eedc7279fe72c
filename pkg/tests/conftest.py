"""Collection of shared fixtures"""
import pytest


DEFAULT_SEED = 8966433580120847635

# Small enough for a few seconds of training on a CPU.
TINY_CONFIG = {
    "array": {"num_mics": 4, "radius": 0.05},
    "spatial": {"pairs": [[0, 2], [1, 3]], "looks": [0.0, 90.0, 180.0, 270.0]},
    "stft": {"window_len": 256, "hop": 128, "fft_size": 256},
    "network": {"repeats": 1, "blocks": 2, "bottleneck": 8, "hidden": 8},
    "kws": {
        "regions": 4,
        "kernels": 2,
        "kernel_size": 2,
        "dense": [8],
        "attention_dim": 8,
    },
    "simulation": {
        "num_utterances": 8,
        "duration_s": 0.5,
        "max_interferers": 1,
        "room_min": [4.0, 4.0, 2.5],
        "room_max": [6.0, 6.0, 3.0],
        "anechoic": True,
        "snr_range": None,
        "min_source_distance_m": 1.0,
        "max_source_distance_m": 1.5,
    },
    "training": {"epochs": 1, "batch_size": 2, "validation_fraction": 0.25},
    "seed": 3,
}


def pytest_addoption(parser):
    parser.addoption(
        "--seed",
        type=int,
        nargs="*",
        default=[DEFAULT_SEED],
        help=(
            "Seed(s) to use for random number generator fixture rng in tests. If "
            "multiple seeds are passed tests depending on rng will be run for all "
            "seeds specified."
        ),
    )


def pytest_generate_tests(metafunc):
    if "seed" in metafunc.fixturenames:
        metafunc.parametrize("seed", metafunc.config.getoption("seed"))


@pytest.fixture
def rng(seed):
    # Import numpy locally to avoid `RuntimeWarning: numpy.ndarray size changed`
    # when importing at module level
    import numpy as np

    return np.random.default_rng(seed)


@pytest.fixture
def tiny_config_dict():
    import copy

    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture
def tiny_run(tiny_config_dict):
    from mlkws.io.config import config_from_dict

    return config_from_dict(tiny_config_dict)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Balanced manifest of the tiny configuration: even utterances are positives,
    odd ones negatives. Returns the directory holding ``manifest.jsonl``."""
    import dataclasses

    from mlkws.io.config import config_from_dict, config_hash
    from mlkws.io.manifest import MANIFEST_NAME, record_to_row, write_manifest
    from mlkws.io.wav import MultiChannelWaveform, write_wav
    from mlkws.simulation.dataset import simulate_utterance

    run = config_from_dict(TINY_CONFIG)
    cfg_hash = config_hash(run, "manifest")
    out = tmp_path_factory.mktemp("tiny_manifest")
    rows = []
    for index in range(run.simulation.num_utterances):
        fraction = 1.0 if index % 2 == 0 else 0.0
        sim = dataclasses.replace(run.simulation, positive_fraction=fraction)
        record = simulate_utterance(
            dataclasses.replace(run, simulation=sim), run.seed, index
        )
        mix = f"audio/{record.id}_mix.wav"
        ref = f"audio/{record.id}_ref.wav"
        write_wav(out / mix, MultiChannelWaveform(record.mixture))
        write_wav(out / ref, MultiChannelWaveform(record.references))
        rows.append(record_to_row(record, mix, ref, cfg_hash))
    write_manifest(rows, out / MANIFEST_NAME)
    return out


@pytest.fixture(autouse=True)
def reset_logging():
    # Handlers set up by a test write into its tmp_path and captured streams.
    import logging

    yield
    logger = logging.getLogger("mlkws")
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()
