"""Smoke test for the spikefolio_py extension.

Build and install first, e.g. `maturin develop --release` or
`pip install .` from crates/python, then run this file.
"""

import math
import os
import random
import sys
import tempfile

import spikefolio_py as sf


def planted_returns(seed, days=400, assets=5, planted=2):
    rng = random.Random(seed)
    return [
        [(0.002 if j == planted else 0.0002) + 0.01 * rng.gauss(0.0, 1.0) for j in range(assets)]
        for _ in range(days)
    ]


def check(name, ok):
    print(f"{'ok  ' if ok else 'FAIL'} {name}")
    return ok


def main():
    results = []

    alpha = 0.5
    results.append(check("surrogate peak", abs(sf.surrogate_grad(1.0, 1.0, alpha) - 1 / (math.pi * alpha)) < 1e-15))
    results.append(check("stdp at one time constant", abs(sf.stdp_delta(0.0, 20.0) - 0.01 * math.exp(-1)) < 1e-15))

    v, spikes = sf.lif_trace(0.5, 50)
    results.append(check("subthreshold LIF stays silent", spikes == [] and abs(v[-1] - 0.5) < 1e-3))

    w = sf.enforce_cardinality([0.4, 0.1, 0.3, 0.2], 2)
    results.append(check("top-2 cardinality", w == [0.4 / 0.7, 0.0, 0.3 / 0.7, 0.0]))

    w = sf.decode_counts([10, 0, 30], [0.01, 0.01, 0.01], 3)
    results.append(check("decode counts", abs(sum(w) - 1) < 1e-12 and w[1] == 0.0))

    r = planted_returns(1)
    results.append(check("sharpe of planted asset", sf.sharpe_ratio([0, 0, 1, 0, 0], r) > 0.1))
    labels = sf.ward_cluster(r, 2)
    results.append(check("ward labels", len(labels) == 5 and set(labels) == {0, 1}))
    k, scores = sf.select_cluster_count(r, 2, 4)
    results.append(check("silhouette selection", 2 <= k <= 4 and len(scores) == 3))

    zeros = [[0.0, 0.0] for _ in range(4)]
    equity, turnover = sf.backtest([(0, [1.0, 0.0]), (2, [0.0, 1.0])], zeros, 0.0025)
    results.append(check("one switch costs twice the rate", abs(1 - equity[-1] - 0.005) < 1e-15))

    net = sf.SpikingNetwork(r, population_size=20, epochs=100, steps_per_epoch=50, seed=3)
    w, total = net.infer()
    results.append(check("SNN favours planted asset", max(range(5), key=lambda i: w[i]) == 2 and total > 0))
    results.append(check("SNN loss history", len(net.loss_history) == 100))

    mlp = sf.Mlp(r, epochs=150, seed=3)
    w = mlp.predict()
    results.append(check("MLP favours planted asset", max(range(5), key=lambda i: w[i]) == 2))

    conf = os.path.join(os.path.dirname(__file__), "..", "..", "core", "fixtures", "synthetic.conf")
    with tempfile.TemporaryDirectory() as out:
        metrics = sf.run_pipeline(conf, out)
        results.append(check("pipeline metrics", "snn_sharpe_daily" in metrics))

    try:
        sf.enforce_cardinality([0.5, 0.5], 0)
        results.append(check("k = 0 rejected", False))
    except ValueError:
        results.append(check("k = 0 rejected", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
