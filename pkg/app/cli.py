# app/cli.py

"""
Línea de comandos: featurize, train, eval, ablate, synth, embed, attn, serve.

Precedencia de configuración: flag explícito > --set clave=valor > --config > preset.
Semilla: --seed > "seed" del config > CRA_SEED > 0.

Cada comando escribe en --out el config resuelto (config.json) y un
manifest.json con el SHA-256 de cada archivo producido.

Códigos de salida: 0 ok, 1 fallo de dominio, 2 fallo de uso o de E/S.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.core.config import get_settings
from app.core.errors import (
    EXIT_OK, EXIT_USAGE, CraError, CraUsageError, EmptyInputFile, FeaturizeFailureRate, MissingPath,
)
from app.core.logging import configure_logging, log_structured
from app.core.rng import make_rng
from app.schemas.episodes import MoleculeRecord, Task
from app.schemas.features import NormStats
from app.schemas.model import Variant
from app.schemas.run import SUPPORT_SWEEP, RunConfig
from app.services import metrics_service
from app.services.ablation_service import run_reference_sweep, run_variants, write_rows
from app.services.checkpoint_service import load_checkpoint, save_checkpoint
from app.services.episode_service import (
    load_pool, load_tasks, sample_episode, sample_reference, strip_labels, synth_tasks, with_reference,
    write_pool, write_tasks,
)
from app.services.evaluation_service import EvalSettings, evaluate_sweep
from app.services.featurize_service import (
    DEFAULT_NBITS, DEFAULT_RADIUS, apply_normalize, featurize_molecule, featurize_records, fit_normalize,
    normalize_records, read_norm_stats, write_container, write_norm_stats,
)
from app.services.smiles_service import read_smiles_file
from app.services.training_service import train
from app.services.visualization_service import attention_export, embed_episode, write_attention, write_embed_csv

logger = logging.getLogger("app.cli")

FAILURE_RATE_MIN_LINES = 100
FAILURE_RATE_LIMIT = 0.01


# ============================================================================
# CONFIGURACIÓN
# ============================================================================

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_path(doc: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise CraUsageError(f"--set {dotted}: {key!r} is not a section")
        node = child
    node[keys[-1]] = value


def resolve_config(args: argparse.Namespace, flag_paths: Dict[str, str]) -> RunConfig:
    """Config de archivo, luego --set, luego flags (sólo los que vienen informados)."""
    doc: Dict[str, Any] = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise CraUsageError(f"{args.config}: the config must be a JSON object")
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise CraUsageError(f"--set expects key=value, got {item!r}")
        _set_path(doc, key.strip(), _parse_value(raw))
    for attr, dotted in flag_paths.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(doc, dotted, value)
    if getattr(args, "preset", None):
        doc["preset"] = args.preset
    if getattr(args, "variant", None):
        _set_path(doc, "model.variant", args.variant)

    config = RunConfig(**doc)
    if args.seed is not None:
        config.seed = args.seed
    elif config.seed is None:
        config.seed = get_settings().SEED or 0
    config.model.seed = config.seed
    return config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc: Any) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def finish(
    out: Path, command: str, config: RunConfig | Dict[str, Any], files: List[Path], counts: Dict[str, Any],
) -> None:
    """Escribe config.json y manifest.json (sin marcas de tiempo: reruns idénticos byte a byte)."""
    doc = config.model_dump(mode="json") if isinstance(config, RunConfig) else config
    produced = [_write_json(out / "config.json", doc), *files]
    manifest = {
        "command": command,
        "files": {p.name: _sha256(p) for p in produced},
        "counts": counts,
    }
    _write_json(out / "manifest.json", manifest)
    log_structured(logger, "info", "cli.done", command=command, out=str(out), files=len(produced))


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers(args: argparse.Namespace, config: RunConfig) -> int:
    return args.workers or config.eval.workers or get_settings().resolve_workers()


# ============================================================================
# PREPARACIÓN DE DATOS
# ============================================================================

def _all_records(tasks: Sequence[Task]) -> List[MoleculeRecord]:
    return [r for t in tasks for r in t.records]


def _apply_stats(records: Sequence[MoleculeRecord], stats: Optional[NormStats], flag: str) -> None:
    """Normaliza con estadísticas ya ajustadas (evaluación); nunca reajusta."""
    for r in records:
        if r.features is None or r.features.normalized:
            continue
        if stats is None:
            raise MissingPath(flag, "SMILES records need the training NormStats (norm_stats.json)")
        r.features = apply_normalize(r.features, stats)


def _norm_stats_for(checkpoint: str, explicit: Optional[str]) -> Optional[NormStats]:
    path = Path(explicit) if explicit else Path(checkpoint).parent / "norm_stats.json"
    if path.exists():
        return read_norm_stats(path)
    if explicit:
        raise MissingPath("--norm-stats", f"{path} does not exist")
    return None


def _training_pool(config: RunConfig, train_tasks: Sequence[Task], flag: str = "--pool") -> List[MoleculeRecord]:
    """Pool explícito o, si alcanza para M, la unión de las tareas de entrenamiento sin etiquetas."""
    if config.paths.reference_pool:
        return load_pool(config.paths.reference_pool)
    if not config.model.variant.uses_reference:
        return []
    pool = strip_labels(train_tasks)
    if len(pool) < config.model.reference_size:
        raise MissingPath(
            flag,
            f"variant {config.model.variant.value} needs {config.model.reference_size} reference molecules "
            f"and the training tasks supply only {len(pool)}",
        )
    log_structured(logger, "info", "cli.default_pool", source="train_tasks", molecules=len(pool))
    return pool


def _eval_pool(config: RunConfig, test_tasks: Sequence[Task], needs_reference: bool) -> List[MoleculeRecord]:
    if not needs_reference:
        return []
    if config.eval.reference_source == "test_domain":
        if config.paths.eval_reference_pool:
            return load_pool(config.paths.eval_reference_pool)
        return strip_labels(test_tasks)
    if config.paths.reference_pool:
        return load_pool(config.paths.reference_pool)
    if config.paths.train_tasks:
        return strip_labels(load_tasks(config.paths.train_tasks))
    raise MissingPath("--pool", "the train_pool reference source needs a reference pool or the training tasks")


def _load_models(paths: Sequence[str]) -> List[tuple]:
    if not paths:
        raise MissingPath("--checkpoint", "a trained checkpoint is required")
    return [load_checkpoint(p) for p in paths]


def _find_task(tasks: Sequence[Task], task_id: Optional[str]) -> Task:
    if task_id is None:
        if not tasks:
            raise MissingPath("--tasks", "the task file is empty")
        return tasks[0]
    for t in tasks:
        if t.task_id == task_id:
            return t
    raise MissingPath("--task", f"task {task_id!r} not found")


# ============================================================================
# COMANDOS
# ============================================================================

def cmd_featurize(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    entries, failures, lines = read_smiles_file(args.input)
    if lines == 0:
        raise EmptyInputFile(args.input)
    if failures:
        log_structured(logger, "warning", "featurize.failures", failed=len(failures), lines=lines,
                       first_line=failures[0].line_no)
    if lines >= FAILURE_RATE_MIN_LINES and len(failures) / lines > FAILURE_RATE_LIMIT:
        raise FeaturizeFailureRate(len(failures), lines)
    if not entries:
        raise FeaturizeFailureRate(len(failures), lines)

    raw = [featurize_molecule(e.graph, args.radius, args.nbits) for e in entries]
    stats = fit_normalize(raw)
    matrix = np.vstack([apply_normalize(v, stats).combined for v in raw])

    files = [out / "features.craf", out / "norm_stats.json", out / "ids.txt"]
    write_container(files[0], matrix)
    write_norm_stats(files[1], stats)
    files[2].write_text("".join(f"{e.mol_id}\n" for e in entries), encoding="utf-8")
    config = {"input": str(args.input), "radius": args.radius, "nbits": args.nbits, "normalize": "z-score"}
    finish(out, "featurize", config, files,
           {"molecules": len(entries), "failed": len(failures), "lines": lines, "dim": int(matrix.shape[1])})
    return EXIT_OK


TRAIN_FLAGS = {"tasks": "paths.train_tasks", "valid_tasks": "paths.valid_tasks", "pool": "paths.reference_pool"}


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args, TRAIN_FLAGS)
    out = _out_dir(args)
    if not config.paths.train_tasks:
        raise MissingPath("--tasks", "training needs a task file")
    train_tasks = load_tasks(config.paths.train_tasks)
    valid_tasks = load_tasks(config.paths.valid_tasks) if config.paths.valid_tasks else []
    pool = _training_pool(config, train_tasks)

    featurize_records(_all_records(train_tasks) + _all_records(valid_tasks) + pool)
    stats = normalize_records(_all_records(train_tasks), _all_records(valid_tasks) + pool)

    result = train(train_tasks, pool, config.model, config.train, valid_tasks, seed=config.seed)
    config.model = result.config

    files = [out / "checkpoint.cram", out / "curve.csv"]
    save_checkpoint(files[0], result.config, result.params)
    with open(files[1], "w", encoding="utf-8") as f:
        f.write("episode,loss,val_delta_auc_pr\n")
        for p in result.curve:
            val = "" if p.val_delta_auc_pr is None else repr(p.val_delta_auc_pr)
            f.write(f"{p.episode},{p.loss!r},{val}\n")
    if stats is not None:
        files.append(out / "norm_stats.json")
        write_norm_stats(files[-1], stats)
    finish(out, "train", config, files, {
        "episodes": result.episodes_run, "best_episode": result.best_episode,
        "best_val_delta_auc_pr": result.best_val, "baseline_val_delta_auc_pr": result.baseline_val,
        "stopped_early": result.stopped_early, "train_tasks": len(train_tasks),
    })
    return EXIT_OK


EVAL_FLAGS = {
    "tasks": "paths.test_tasks", "pool": "paths.reference_pool", "eval_pool": "paths.eval_reference_pool",
    "train_tasks": "paths.train_tasks", "draws": "eval.draws", "support_size": "eval.support_size",
    "query_size": "eval.query_size", "reference_source": "eval.reference_source",
}


def _parse_sizes(raw: Optional[str]) -> List[int]:
    if raw is None:
        return []
    if raw == "standard":
        return list(SUPPORT_SWEEP)
    try:
        sizes = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError as exc:
        raise CraUsageError(f"--support-sizes expects comma-separated integers, got {raw!r}") from exc
    if any(s < 2 for s in sizes):
        raise CraUsageError("support sizes must be >= 2")
    return sizes


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args, EVAL_FLAGS)
    out = _out_dir(args)
    if not config.paths.test_tasks:
        raise MissingPath("--tasks", "evaluation needs a task file")
    runs = _load_models(args.checkpoint)
    if config.eval.reruns != len(runs):
        log_structured(logger, "info", "eval.reruns_from_checkpoints", checkpoints=len(runs),
                       configured=config.eval.reruns)
    stats = _norm_stats_for(args.checkpoint[0], args.norm_stats)
    tasks = load_tasks(config.paths.test_tasks)
    pool = _eval_pool(config, tasks, any(cfg.variant.uses_reference for cfg, _ in runs))
    featurize_records(_all_records(tasks) + pool)
    _apply_stats(_all_records(tasks) + pool, stats, "--norm-stats")

    sizes = _parse_sizes(args.support_sizes) or config.eval.support_sizes or [config.eval_support_size]
    settings = EvalSettings(
        support_size=sizes[0], query_size=config.eval.query_size, draws=config.eval.draws,
        sampling_mode=config.train.sampling_mode, seed=config.seed, workers=_workers(args, config),
    )
    results = evaluate_sweep(runs, tasks, pool, settings, sizes)
    files: List[Path] = []
    for size, (report, episodes) in results.items():
        suffix = f"_ns{size}" if len(sizes) > 1 else ""
        files += [out / f"eval_tasks{suffix}.csv", out / f"eval_episodes{suffix}.csv", out / f"eval_summary{suffix}.json"]
        metrics_service.write_task_csv(files[-3], report)
        metrics_service.write_episode_csv(files[-2], episodes)
        metrics_service.write_summary_json(files[-1], report)
    config.model = runs[0][0]
    config.eval.reruns = len(runs)
    config.eval.support_sizes = sizes
    finish(out, "eval", config, files, {
        "tasks": len(tasks), "reruns": len(runs), "draws": config.eval.draws, "support_sizes": sizes,
    })
    return EXIT_OK


ABLATE_FLAGS = {
    "tasks": "paths.train_tasks", "valid_tasks": "paths.valid_tasks", "test_tasks": "paths.test_tasks",
    "pool": "paths.reference_pool", "reruns": "eval.reruns", "draws": "eval.draws",
}


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args, ABLATE_FLAGS)
    out = _out_dir(args)
    for flag, value in (("--tasks", config.paths.train_tasks), ("--test-tasks", config.paths.test_tasks)):
        if not value:
            raise MissingPath(flag, "ablation trains and evaluates every variant")
    train_tasks = load_tasks(config.paths.train_tasks)
    valid_tasks = load_tasks(config.paths.valid_tasks) if config.paths.valid_tasks else []
    test_tasks = load_tasks(config.paths.test_tasks)
    full = config.model_copy(deep=True)
    full.model.variant = Variant.FULL
    full.model.reference_size = min([config.model.reference_size] + list(config.ablation.reference_sizes))
    train_pool = _training_pool(full, train_tasks)
    eval_pool = _eval_pool(full, test_tasks, True) if config.eval.reference_source == "test_domain" else train_pool

    featurize_records(_all_records(train_tasks) + _all_records(valid_tasks) + _all_records(test_tasks)
                      + train_pool + eval_pool)
    normalize_records(_all_records(train_tasks), _all_records(valid_tasks) + _all_records(test_tasks)
                      + train_pool + eval_pool)

    settings = EvalSettings(
        support_size=config.eval_support_size, query_size=config.eval.query_size, draws=config.eval.draws,
        sampling_mode=config.train.sampling_mode, seed=config.seed, workers=_workers(args, config),
    )
    common = dict(
        reruns=config.eval.reruns, train_tasks=train_tasks, valid_tasks=valid_tasks, test_tasks=test_tasks,
        train_pool=train_pool, eval_pool=eval_pool, model_config=config.model, train_config=config.train,
        settings=settings,
    )
    variant_rows = run_variants(config.ablation.variants, **common)
    reference_rows = run_reference_sweep(config.ablation.reference_sizes, **common)
    files = [out / "ablation_variants.csv", out / "ablation_reference.csv"]
    write_rows(files[0], variant_rows, "variant")
    write_rows(files[1], reference_rows, "reference_size")
    finish(out, "ablate", config, files, {
        "variants": len(variant_rows), "reference_sizes": len(reference_rows),
        "skipped": sum(1 for r in reference_rows if r.status == "skipped"),
    })
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    config = resolve_config(args, {"bias": "synth.bias", "task_count": "synth.task_count", "dim": "synth.dim"})
    out = _out_dir(args)
    split = synth_tasks(config.synth, config.seed)
    files = [out / "train_tasks.jsonl", out / "valid_tasks.jsonl", out / "test_tasks.jsonl", out / "reference_pool.jsonl"]
    write_tasks(files[0], split.train)
    write_tasks(files[1], split.valid)
    write_tasks(files[2], split.test)
    write_pool(files[3], split.pool)
    finish(out, "synth", config, files, {
        "train": len(split.train), "valid": len(split.valid), "test": len(split.test), "pool": len(split.pool),
    })
    return EXIT_OK


VIS_FLAGS = {
    "tasks": "paths.test_tasks", "pool": "paths.reference_pool", "eval_pool": "paths.eval_reference_pool",
    "train_tasks": "paths.train_tasks", "support_size": "eval.support_size", "query_size": "eval.query_size",
    "reference_source": "eval.reference_source",
}


def _single_episode(args: argparse.Namespace, purpose: str):
    config = resolve_config(args, VIS_FLAGS)
    if not config.paths.test_tasks:
        raise MissingPath("--tasks", f"{purpose} needs a task file")
    if len(args.checkpoint) != 1:
        raise CraUsageError(f"{purpose} takes exactly one --checkpoint")
    model_config, params = load_checkpoint(args.checkpoint[0])
    stats = _norm_stats_for(args.checkpoint[0], args.norm_stats)
    task = _find_task(load_tasks(config.paths.test_tasks), args.task)
    pool = _eval_pool(config, [task], model_config.variant.uses_reference)
    featurize_records(task.records + pool)
    _apply_stats(task.records + pool, stats, "--norm-stats")

    rng = make_rng(config.seed, purpose, task.task_id)
    episode = sample_episode(task, rng, config.eval_support_size, config.eval.query_size,
                             config.train.sampling_mode)
    if model_config.variant.uses_reference:
        episode = with_reference(episode, sample_reference(pool, model_config.reference_size, rng))
    config.model = model_config
    return config, model_config, params, episode


def cmd_embed(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    config, model_config, params, episode = _single_episode(args, "embed")
    rows = embed_episode(episode, params, model_config)
    if not model_config.variant.uses_reference:
        log_structured(logger, "info", "embed.no_reference", variant=model_config.variant.value)
    files = [out / "embed.csv"]
    write_embed_csv(files[0], rows)
    finish(out, "embed", config, files, {
        "task_id": episode.task_id, "support": len(episode.support), "query": len(episode.query),
        "reference": len(episode.reference), "variant": model_config.variant.value, "rows": len(rows),
    })
    return EXIT_OK


def cmd_attn(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    config, model_config, params, episode = _single_episode(args, "attn")
    export = attention_export(episode, params, model_config)
    files = write_attention(out, export)
    finish(out, "attn", config, files, {
        "task_id": episode.task_id, "support": len(export.ids), "heads": len(export.heads),
    })
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    for env, value in (("CRA_CHECKPOINT", args.checkpoint), ("CRA_REFERENCE_POOL", args.pool),
                       ("CRA_NORM_STATS", args.norm_stats)):
        if value:
            os.environ[env] = value
    get_settings.cache_clear()
    if not get_settings().CHECKPOINT:
        raise MissingPath("--checkpoint", "serve needs a checkpoint (or CRA_CHECKPOINT)")
    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--out", required=True, help="Directorio de salida")
    p.add_argument("--seed", type=int, default=None)
    if config:
        p.add_argument("--config", help="RunConfig JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Sobrescribe una clave (notación con puntos)")
        p.add_argument("--preset", choices=["moleculenet", "fsmol", "custom"])
        p.add_argument("--workers", type=int, default=None, help="Workers de evaluación (por defecto CRA_WORKERS o núcleos)")


def _checkpoint_args(p: argparse.ArgumentParser, many: bool) -> None:
    p.add_argument("--checkpoint", action="append", default=[], required=True,
                   help="Checkpoint entrenado" + (" (repetible: uno por rerun)" if many else ""))
    p.add_argument("--norm-stats", dest="norm_stats", help="NormStats JSON (por defecto junto al checkpoint)")
    p.add_argument("--tasks", help="Tareas de evaluación (JSON lines)")
    p.add_argument("--pool", help="Pool de referencia de entrenamiento")
    p.add_argument("--eval-pool", dest="eval_pool", help="Pool de referencia del dominio de prueba")
    p.add_argument("--train-tasks", dest="train_tasks", help="Tareas de entrenamiento (pool por defecto)")
    p.add_argument("--reference-source", dest="reference_source", choices=["train_pool", "test_domain"])
    p.add_argument("--support-size", dest="support_size", type=int)
    p.add_argument("--query-size", dest="query_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cra", description="Few-shot molecular property prediction with CRA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="SMILES -> contenedor de features + NormStats")
    p.add_argument("--input", required=True)
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    p.add_argument("--nbits", type=int, default=DEFAULT_NBITS)
    _common(p, config=False)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="Entrenamiento episódico")
    _common(p)
    p.add_argument("--tasks")
    p.add_argument("--valid-tasks", dest="valid_tasks")
    p.add_argument("--pool")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="R reruns × K selecciones de soporte")
    _common(p)
    _checkpoint_args(p, many=True)
    p.add_argument("--draws", type=int)
    p.add_argument("--support-sizes", dest="support_sizes",
                   help="Barrido, p.ej. 2,8,16,32,64,128 ('standard' = ese mismo barrido)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Ablación de variantes y barrido de M")
    _common(p)
    p.add_argument("--tasks")
    p.add_argument("--valid-tasks", dest="valid_tasks")
    p.add_argument("--test-tasks", dest="test_tasks")
    p.add_argument("--pool")
    p.add_argument("--reruns", type=int)
    p.add_argument("--draws", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="Tareas sintéticas con sesgo de selección")
    _common(p)
    p.add_argument("--bias", type=float)
    p.add_argument("--task-count", dest="task_count", type=int)
    p.add_argument("--dim", type=int)
    p.set_defaults(func=cmd_synth)

    for name, func, help_text in (
        ("embed", cmd_embed, "Embeddings antes/después de los aumentos (PCA 2-D)"),
        ("attn", cmd_attn, "Atención del AAM entre moléculas de soporte + Tanimoto"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        _checkpoint_args(p, many=False)
        p.add_argument("--task", help="task_id (por defecto la primera tarea)")
        p.set_defaults(func=func)

    p = sub.add_parser("serve", help="API HTTP de puntaje")
    p.add_argument("--checkpoint")
    p.add_argument("--pool")
    p.add_argument("--norm-stats", dest="norm_stats")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    try:
        return args.func(args)
    except CraError as exc:
        log_structured(logger, "error", "cli.failed", command=args.command, error=type(exc).__name__, detail=exc.message)
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        log_structured(logger, "error", "cli.invalid_config", command=args.command, errors=exc.error_count())
        print(f"error: invalid configuration\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        log_structured(logger, "error", "cli.io_error", command=args.command, detail=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
