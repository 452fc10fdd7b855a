"""
Benchmark sobre la suite sintética con sesgo de selección.

- Ablación: encoder-only, +AAM y completo, 3 semillas, N^s=16, R=3, K=5.
- Barrido de M (32 vs 512) con la variante completa.
- Barrido de N^s (2, 8, 16, 32) con la variante completa.

El entrenamiento usa como consulta todo el resto de la tarea, igual que la
evaluación, para que el AAM vea en entrenamiento el mismo lote transductivo.

Uso:
    python scripts/synthetic_bias_benchmark.py [--episodes 800] [--workers 4]
"""

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.core.logging import configure_logging  # noqa: E402
from app.schemas.episodes import SynthConfig  # noqa: E402
from app.schemas.model import EncoderConfig, ModelConfig, SamplingMode, TrainConfig, Variant  # noqa: E402
from app.services.ablation_service import train_reruns  # noqa: E402
from app.services.episode_service import synth_tasks  # noqa: E402
from app.services.evaluation_service import EvalSettings, evaluate, evaluate_sweep  # noqa: E402

SEEDS = (0, 1, 2)
SUPPORT_SWEEP = (2, 8, 16, 32)
DEFAULT_EPISODES = 800


def benchmark_configs(episodes: int):
    model = ModelConfig(d=32, h=32, heads=2, encoder=EncoderConfig(hidden=[64]), reference_size=512)
    train = TrainConfig(
        lr=3e-3, max_episodes=episodes, validation_interval=max(episodes // 16, 1), patience=6,
        min_episodes=episodes // 2, support_size=16, query_size=None, validation_query_size=None,
        validation_draws=2, sampling_mode=SamplingMode.STRATIFIED,
    )
    return model, train


def run(episodes: int, workers: int) -> dict:
    synth = SynthConfig(dim=32, task_count=40, separation=3.0, bias=0.5, prevalence=0.3, pool_size=4096)
    model, train = benchmark_configs(episodes)
    results = {"variants": {}, "reference_sizes": {}, "support_sizes": {}}

    for seed in SEEDS:
        split = synth_tasks(synth, seed)
        settings = EvalSettings(support_size=16, query_size=None, draws=5,
                                sampling_mode=SamplingMode.STRATIFIED, seed=seed, workers=workers)
        for variant in (Variant.ENCODER_ONLY, Variant.AAM, Variant.FULL):
            cfg = model.model_copy(update={"variant": variant})
            runs = train_reruns(3, split.train, split.valid, split.pool, cfg, train, seed)
            report, _ = evaluate(runs, split.test, split.pool, settings)
            results["variants"].setdefault(variant.value, []).append(report.delta_auc_pr.mean)
            if variant is Variant.FULL:
                results["reference_sizes"].setdefault("512", []).append(report.delta_auc_pr.mean)
                sweep = evaluate_sweep(runs, split.test, split.pool, settings, list(SUPPORT_SWEEP))
                for size, (r, _) in sweep.items():
                    results["support_sizes"].setdefault(str(size), []).append(r.delta_auc_pr.mean)

        cfg = model.model_copy(update={"variant": Variant.FULL, "reference_size": 32})
        runs = train_reruns(3, split.train, split.valid, split.pool, cfg, train, seed)
        report, _ = evaluate(runs, split.test, split.pool, settings)
        results["reference_sizes"].setdefault("32", []).append(report.delta_auc_pr.mean)
    return results


def support_trend_holds(rows: Dict[str, Sequence[float]], sizes: Sequence[int] = SUPPORT_SWEEP) -> bool:
    """No decreciente en N^s, salvo una inversión no mayor que el error estándar entre semillas."""
    sweep = [np.asarray(rows[str(n)], dtype=np.float64) for n in sizes]
    means = [s.mean() for s in sweep]
    stderr = [s.std(ddof=1) / np.sqrt(s.size) if s.size > 1 else 0.0 for s in sweep]
    inversions: List[int] = [i for i in range(len(sweep) - 1) if means[i + 1] < means[i]]
    if len(inversions) > 1:
        return False
    return all(means[i] - means[i + 1] <= stderr[i + 1] for i in inversions)


def checks(results: dict) -> Dict[str, bool]:
    means = {group: {key: float(np.mean(v)) for key, v in rows.items()} for group, rows in results.items()}
    v = means["variants"]
    return {
        "full >= aam": v["full"] >= v["aam"],
        "aam >= encoder-only": v["aam"] >= v["encoder-only"],
        "full - encoder-only >= 0.03": v["full"] - v["encoder-only"] >= 0.03,
        "M=512 >= M=32": means["reference_sizes"]["512"] >= means["reference_sizes"]["32"],
        "support size trend": support_trend_holds(results["support_sizes"]),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--episodes", type=int, default=DEFAULT_EPISODES)
    parser.add_argument("--workers", type=int, default=4)
    args = parser.parse_args()
    configure_logging()

    start = time.perf_counter()
    results = run(args.episodes, args.workers)
    means = {group: {key: float(np.mean(v)) for key, v in rows.items()} for group, rows in results.items()}
    status = checks(results)
    print(json.dumps({"mean_delta_auc_pr": means, "checks": status,
                      "seconds": round(time.perf_counter() - start, 1)}, indent=2, sort_keys=True))
    return 0 if all(status.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
