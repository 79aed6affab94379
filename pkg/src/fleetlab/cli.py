"""Command-line entry point: generate / train / eval / solve / render / compare.

Config files are plain ``key = value`` text with ``#`` comments; keys mirror
the ExperimentConfig and TrainConfig fields.  Exit codes: 0 success,
2 bad input or usage, 3 I/O failure, 4 internal contract violation.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .checkpoint import config_hash
from .docio import canonical_json, sha256_hex
from .env import read_plan, write_plan
from .instances import ExperimentConfig, generate_test_set, read_instance, write_instance
from .render import render_plan
from .results import merge_results, summarize, summary_table, write_results_csv
from .solvers import SOLVERS, DrlSolver, RandomSolver, evaluate_method
from .training import TrainConfig, train as run_training
from .validation import ContractViolation, ParseError, ValidationError, require

_TRAIN_INT_KEYS = {"iterations", "batch_size", "eval_cadence", "eval_size",
                   "checkpoint_cadence", "embed_dim", "attn_dim", "seed"}
_TRAIN_FLOAT_KEYS = {"actor_lr", "critic_lr", "penalty"}


def parse_kv_file(path: Path) -> dict:
    data: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        data[key.strip()] = value.strip()
    return data


def experiment_from_kv(data: dict, seed_override=None) -> ExperimentConfig:
    mapping = dict(data)
    if "capacities" in mapping:
        mapping["capacities"] = [c for c in str(mapping["capacities"]).split(",") if c]
    if seed_override is not None:
        mapping["seed"] = seed_override
    config = ExperimentConfig.from_mapping(mapping)
    # the name becomes a directory and part of file names downstream
    require(bool(config.name), "experiment name must be non-empty")
    require(
        not any(sep in config.name for sep in ("/", "\\", "..")),
        f"experiment name {config.name!r} must not contain path separators",
    )
    return config


def train_config_from_kv(data: dict, seed_override=None) -> TrainConfig:
    kwargs: dict = {}
    for key, value in data.items():
        if key in _TRAIN_INT_KEYS:
            kwargs[key] = int(value)
        elif key in _TRAIN_FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key == "round_cap":
            kwargs[key] = None if value.lower() in ("", "none") else int(value)
        else:
            raise ParseError("unknown training config key", field=key)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


@click.group()
@click.option("--seed", type=int, default=None,
              help="Override the seed from config files.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes for evaluation.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."),
              show_default=True, help="Directory for artifacts.")
@click.option("--fixed-clock", is_flag=True,
              help="Record wall times as 0 so artifacts are byte-stable.")
@click.pass_context
def cli(ctx, seed, jobs, out_dir, fixed_clock):
    """Routing solver laboratory: heterogeneous fleet, split deliveries."""
    ctx.obj = {"seed": seed, "jobs": jobs, "out_dir": out_dir,
               "fixed_clock": fixed_clock}


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False,
                                               path_type=Path))
@click.pass_context
def generate(ctx, config_path):
    """Write the seeded test set for an experiment config, plus a manifest."""
    experiment = experiment_from_kv(parse_kv_file(config_path),
                                    seed_override=ctx.obj["seed"])
    out = ctx.obj["out_dir"] / experiment.name
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, inst in enumerate(generate_test_set(experiment)):
        name = f"instance_{k:04d}.txt"
        text = write_instance(inst)
        (out / name).write_text(text)
        entries.append({"file": name, "instance_id": inst.instance_id,
                        "sha256": sha256_hex(text)})
    manifest = {"experiment": experiment.to_mapping(), "instances": entries}
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n")
    click.echo(f"wrote {len(entries)} instances to {out}")


@cli.command("train")
@click.argument("train_config_path", type=click.Path(exists=True, dir_okay=False,
                                                     path_type=Path))
@click.argument("experiment_config_path", type=click.Path(exists=True,
                                                          dir_okay=False,
                                                          path_type=Path))
@click.pass_context
def train_cmd(ctx, train_config_path, experiment_config_path):
    """Run the A2C loop; writes training_log.txt and checkpoint.json."""
    train_config = train_config_from_kv(parse_kv_file(train_config_path),
                                        seed_override=ctx.obj["seed"])
    experiment = experiment_from_kv(parse_kv_file(experiment_config_path))
    result = run_training(train_config, experiment, ctx.obj["out_dir"],
                          fixed_clock=ctx.obj["fixed_clock"])
    click.echo(f"trained {train_config.iterations} iterations; final greedy "
               f"validation cost {result.val_history[-1][1]:.6f}")
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"log: {result.log_path}")


def _load_test_set(test_dir: Path):
    manifest_path = test_dir / "manifest.json"
    if not manifest_path.exists():
        raise ParseError(f"no manifest.json in {test_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest: {exc}") from None
    experiment = ExperimentConfig.from_mapping(manifest["experiment"])
    instances = []
    for entry in manifest["instances"]:
        text = (test_dir / entry["file"]).read_text()
        if sha256_hex(text) != entry["sha256"]:
            raise ParseError(f"checksum mismatch for {entry['file']}")
        instances.append(read_instance(text))
    return experiment, instances


def _checkpoint_solver(checkpoint: Path, experiment: ExperimentConfig) -> DrlSolver:
    solver = DrlSolver.from_checkpoint(checkpoint)
    doc = solver.checkpoint_doc_
    rebuilt = config_hash(TrainConfig(**doc["train"]), experiment)
    if rebuilt != doc["config_hash"]:
        raise ValidationError(
            "checkpoint config hash does not match this test set's experiment "
            "configuration; refusing to evaluate")
    return solver


@cli.command("eval")
@click.argument("test_dir", type=click.Path(exists=True, file_okay=False,
                                            path_type=Path))
@click.option("--methods", required=True,
              help="Comma-separated subset of: " + ",".join(sorted(SOLVERS)))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False,
                                              path_type=Path), default=None,
              help="Trained parameters (required for the drl method).")
@click.pass_context
def eval_cmd(ctx, test_dir, methods, checkpoint):
    """Run solvers over a generated test set; writes results.csv + summary.md."""
    names = [m.strip() for m in methods.split(",") if m.strip()]
    if not names:
        raise click.UsageError("--methods must name at least one method")
    unknown = [m for m in names if m not in SOLVERS]
    if unknown:
        raise click.UsageError(f"unknown methods: {', '.join(unknown)}")
    if "drl" in names and checkpoint is None:
        raise click.UsageError("--checkpoint is required for the drl method")

    experiment, instances = _load_test_set(test_dir)
    out = ctx.obj["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        if name == "drl":
            solver = _checkpoint_solver(checkpoint, experiment)
        elif name == "random":
            solver = RandomSolver(seed=ctx.obj["seed"] or 0)
        else:
            solver = SOLVERS[name]()
        method_rows, _ = evaluate_method(solver, instances, experiment.name,
                                         jobs=ctx.obj["jobs"],
                                         fixed_clock=ctx.obj["fixed_clock"])
        rows.extend(method_rows)
    (out / "results.csv").write_text(write_results_csv(rows))
    table = summary_table(summarize(rows))
    (out / "summary.md").write_text(table)
    click.echo(table, nl=False)


@cli.command()
@click.argument("instance_path", type=click.Path(exists=True, dir_okay=False,
                                                 path_type=Path))
@click.option("--method", required=True, type=click.Choice(sorted(SOLVERS)))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False,
                                              path_type=Path), default=None)
@click.pass_context
def solve(ctx, instance_path, method, checkpoint):
    """Solve one instance file and write the route plan document."""
    instance = read_instance(instance_path.read_text())
    if method == "drl":
        if checkpoint is None:
            raise click.UsageError("--checkpoint is required for the drl method")
        solver = DrlSolver.from_checkpoint(checkpoint)
    elif method == "random":
        solver = RandomSolver(seed=ctx.obj["seed"] or 0)
    else:
        solver = SOLVERS[method]()
    plan = solver.solve_one(instance)
    out = ctx.obj["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    plan_path = out / f"{instance.instance_id}.{method}.plan.txt"
    plan_path.write_text(write_plan(plan, instance))
    click.echo(f"{method} length {plan.total_length:.6f} "
               f"feasible {plan.feasible} -> {plan_path}")


@cli.command()
@click.argument("plan_path", type=click.Path(exists=True, dir_okay=False,
                                             path_type=Path))
@click.argument("out_svg", type=click.Path(dir_okay=False, path_type=Path))
def render(plan_path, out_svg):
    """Render a route plan document to SVG."""
    plan, instance = read_plan(plan_path.read_text())
    out_svg.parent.mkdir(parents=True, exist_ok=True)
    out_svg.write_text(render_plan(plan, instance))
    click.echo(f"rendered {plan.instance_id} -> {out_svg}")


@cli.command()
@click.argument("csv_paths", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
def compare(ctx, csv_paths):
    """Merge results CSVs into one per-method markdown summary."""
    rows = merge_results([p.read_text() for p in csv_paths])
    table = summary_table(summarize(rows))
    out = ctx.obj["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.md").write_text(table)
    click.echo(table, nl=False)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:  # --help and friends
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(130)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (ValidationError, ParseError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ContractViolation as exc:
        click.echo(f"contract violation: {exc}", err=True)
        sys.exit(4)
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(3)
    return 0
