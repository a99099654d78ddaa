import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asvp.backbone import (PretrainConfig, SynthSpec, TrainSchedule, gen_synth,
                           pretrain, train, train_eval_split)
from asvp.orchestrator import RunConfig, Seeds, run, run_random_baseline

BENCHMARK_SEEDS = 5


def default_benchmark_config(mode, seed):
    """The default benchmark: 10 iterations of 100 margin-selected labels."""
    return RunConfig(mode=mode, strategy="margin", n_iters=10, batch_k=100, init_size=100,
                     seeds=Seeds(seed, seed, seed), synth=SynthSpec(seed=seed))


@pytest.fixture(scope="session")
def benchmark_suite():
    """Baseline curve + svpp + asvp ledgers on the default benchmark per seed."""
    t0 = time.perf_counter()
    out = []
    for seed in range(BENCHMARK_SEEDS):
        _, curve = run_random_baseline(default_benchmark_config("svpp", seed))
        svpp = run(default_benchmark_config("svpp", seed))
        asvp = run(default_benchmark_config("asvp", seed))
        out.append({"curve": curve, "svpp": svpp, "asvp": asvp})
    return {"runs": out, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def small_spec():
    """A fast benchmark used by module tests (the acceptance suite runs the default one)."""
    return SynthSpec(n=800, d_in=16, c_fine=6, c_coarse=3, separation=6.0,
                     fine_spread=3.0, noise=1.0, seed=1)


@pytest.fixture(scope="session")
def small_bench(small_spec):
    X, y_fine, y_coarse = gen_synth(small_spec)
    train_idx, eval_idx = train_eval_split(small_spec.n, small_spec.seed)
    net = pretrain(small_spec, small_spec.seed, PretrainConfig(epochs=30))
    return {"spec": small_spec, "X": X, "y_fine": y_fine, "y_coarse": y_coarse,
            "train_idx": train_idx, "eval_idx": eval_idx, "net": net}


def linear_probe_accuracy(net, X_train, y_train, X_eval, y_eval, classes, seed=7):
    """Head-only training on the frozen encoder, then eval accuracy."""
    from asvp.backbone import BackboneNet, Head
    from asvp.nn import uniform_fan_in

    rng = np.random.default_rng(seed)
    d = net.encoder.d_feat
    head = Head(W=uniform_fan_in(rng, d, (d, classes)), b=uniform_fan_in(rng, d, (classes,)))
    probe_net = BackboneNet(net.encoder.copy(), head)
    schedule = TrainSchedule(kind="lpft", lp_epochs=30, ft_epochs=0, lr_lp=0.5, seed=seed)
    trained, _ = train(probe_net, X_train, y_train, schedule)
    return trained.accuracy(X_eval, y_eval)
