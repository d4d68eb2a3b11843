"""
Línea de comandos: generate, train, eval, solve, gap-report y serve.

Códigos de salida: 0 éxito, 2 error de uso/configuración/entrada, 3 fallo en ejecución.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from services import benchmark, env
from services.checkpoint import load_policy
from services.errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DecodeError,
    FeasibilityError,
    InstanceParseError,
    NumericFault,
    SizeGuardError,
    TrainingDivergence,
)
from services.instance import GeneratorConfig, generate_instance, load_instance, save_instance, validate_instance
from services.settings import DATA_DIR_ENV, data_dir
from services.training import RunConfig, config_error, load_run_config, train
from version import __app_name__, __version__

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

USAGE_ERRORS = (
    ConfigError,
    InstanceParseError,
    CheckpointError,
    SizeGuardError,
    DecodeError,
    FeasibilityError,
    ValueError,
)
RUNTIME_ERRORS = (NumericFault, TrainingDivergence, ContractViolation, RuntimeError, ArithmeticError, OSError)


def cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else data_dir()
    if args.out is None:
        out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise ConfigError(f"output directory does not exist: {out}")

    targets = [out / f"inst_{i:05d}.json" for i in range(args.n)]
    existing = [path for path in targets if path.exists()]
    if existing and not args.force:
        raise ConfigError(f"{len(existing)} instance files already exist in {out} (use --force to overwrite)")

    try:
        base = GeneratorConfig(
            n_customers=args.customers,
            fleet_size=args.fleet,
            n_vehicle_types=args.types,
            variant=args.variant,
            seed=args.seed,
            fleet_mode=args.fleet_mode,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    for i, path in enumerate(targets):
        inst = generate_instance(base.model_copy(update={"seed": args.seed + i}))
        violations = validate_instance(inst)
        if violations:
            logger.warning(f"[GENERATE] {path.name}: {'; '.join(violations)}")
        save_instance(path, inst)
    logger.info(f"[GENERATE] {args.n} instancias {base.variant.name} en {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = load_run_config(args.config) if args.config else RunConfig()
    overrides = {key: value for key, value in (("epochs", args.epochs), ("seed", args.seed)) if value is not None}
    if overrides:
        try:
            run = RunConfig.model_validate(
                {**run.model_dump(), "train": {**run.train.model_dump(), **overrides}}
            )
        except ValidationError as exc:
            raise config_error(exc) from exc
    out = Path(args.out) if args.out else data_dir() / "run"
    result = train(run, out, resume=args.resume)
    print(
        json.dumps(
            {
                "epochs_run": result.epochs_run,
                "initial_val_cost": result.initial_val_cost,
                "best_val_cost": result.best_val_cost,
                "best_checkpoint": str(result.best_checkpoint),
                "last_checkpoint": str(result.last_checkpoint),
                "metrics": str(result.metrics_path),
            },
            indent=2,
        )
    )
    return EXIT_OK


def _maybe_policy(method: str, checkpoint: Optional[str]):
    if method in benchmark.MODEL_METHODS:
        if not checkpoint:
            raise ConfigError(f"method '{method}' needs --checkpoint")
        return load_policy(checkpoint)
    if checkpoint:
        # Un checkpoint explícito debe existir aunque el método no lo use
        if not Path(checkpoint).is_file():
            raise CheckpointError(f"checkpoint not found: {checkpoint}")
    return None


def cmd_eval(args: argparse.Namespace) -> int:
    policy = _maybe_policy(args.method, args.checkpoint)
    instances = benchmark.load_instance_dir(args.instances)
    started = time.perf_counter()
    report = benchmark.evaluate(
        instances,
        args.method,
        reference=args.reference,
        policy=policy,
        samples=args.samples,
        seed=args.seed,
        workers=args.workers,
    )
    csv_path = Path(args.csv) if args.csv else data_dir() / f"eval_{args.method}.csv"
    json_path = Path(args.json) if args.json else csv_path.with_suffix(".json")
    benchmark.write_csv(report, csv_path)
    benchmark.write_json(report, json_path)

    summary = report.summary()
    logger.info(
        f"[EVAL] {summary['instances']} instancias, obj={summary['mean_objective']:.4f} "
        f"gap={summary['mean_gap_pct']:.2f}% ({time.perf_counter() - started:.1f}s) -> {csv_path}"
    )
    print(json.dumps({**summary, "csv": str(csv_path), "json": str(json_path)}, indent=2))
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    policy = _maybe_policy(args.method, args.checkpoint)
    inst = load_instance(args.instance)
    violations = validate_instance(inst)
    if violations:
        raise ConfigError("invalid instance: " + "; ".join(violations))

    started = time.perf_counter()
    solution = benchmark.solve_instance(inst, args.method, policy=policy, samples=args.samples, seed=args.seed)
    logger.info(
        f"[SOLVE] {inst.variant.name} N={inst.n_customers}: {args.method} obj={solution.objective:.6f} "
        f"({time.perf_counter() - started:.2f}s)"
    )
    if args.trajectory:
        Path(args.trajectory).write_text(json.dumps(env.solution_actions(solution, inst)), encoding="utf-8")
    print(json.dumps(env.solution_to_dict(solution), indent=2))
    return EXIT_OK


def cmd_gap_report(args: argparse.Namespace) -> int:
    rows = benchmark.gap_report(args.csv)
    if args.out:
        benchmark.write_gap_report(rows, args.out)
    print(benchmark.format_table(rows))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfvrp",
        description=f"{__app_name__} {__version__}: instancias, entrenamiento y evaluación",
        epilog=f"El directorio de salida por defecto es ${DATA_DIR_ENV} (o ./data).",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generar instancias sintéticas")
    p.add_argument("--n", type=int, default=100, help="número de instancias")
    p.add_argument("--customers", type=int, default=10)
    p.add_argument("--fleet", type=int, default=3, help="tamaño total de la flota")
    p.add_argument("--types", type=int, default=None, help="tipos de vehículo (por defecto min(3, fleet))")
    p.add_argument("--variant", default="cvrp", help="cvrp, o, b, l, tw o combinaciones (p. ej. obltw)")
    p.add_argument("--fleet-mode", default="hf", choices=["hf", "hc"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directorio de salida (debe existir)")
    p.add_argument("--force", action="store_true", help="sobrescribir archivos existentes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="entrenar la política")
    p.add_argument("--config", default=None, help="JSON con claves generator/model/train")
    p.add_argument("--out", default=None, help="directorio de checkpoints y métricas")
    p.add_argument("--resume", default=None, help="checkpoint desde el que continuar")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluar un método sobre un directorio de instancias")
    p.add_argument("--instances", required=True)
    p.add_argument("--method", default="sample", choices=list(benchmark.METHODS))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--reference", default="greedy", help="oracle, greedy o JSON {instance_id: objetivo}")
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="resolver una instancia y escribir la solución JSON")
    p.add_argument("instance")
    p.add_argument("--method", default="greedy", choices=list(benchmark.METHODS))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectory", default=None, help="archivo donde guardar la secuencia de acciones")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gap-report", help="agregar CSV de evaluación por variante y método")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gap_report)

    p = sub.add_parser("serve", help="levantar la API HTTP")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(message)s", stream=sys.stderr)
    if getattr(args, "types", "unset") is None:
        args.types = min(3, args.fleet)

    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        logger.error(f"error: {exc}")
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        logger.error(f"fatal: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
