"""Command-line entry points for training, export and gradient checks.

Configuration is resolved in three layers: built-in defaults, then a
JSON config file (``--config``, unknown keys rejected), then explicitly
passed flags.  Every run echoes its resolved configuration into a
sidecar JSON next to its outputs.  Exit codes: 0 success, 1 runtime
failure, 2 bad input or configuration.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
from click.core import ParameterSource

_READOUT_MAP = {"sum": "column_sum", "l1": "column_l1", "l2": "column_l2"}


def _set_threads(threads: int | None) -> None:
    """Best-effort BLAS worker cap; must run before numpy loads its
    backend, which is why the numeric modules are imported lazily."""
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _resolve(ctx: click.Context, config_path, defaults: dict) -> dict:
    resolved = dict(defaults)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config {config_path}: {exc}")
        if not isinstance(file_cfg, dict):
            raise click.UsageError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise click.UsageError(f"{config_path}: unknown config keys {unknown}")
        resolved.update(file_cfg)
    for key, value in ctx.params.items():
        if key in resolved and ctx.get_parameter_source(key) == ParameterSource.COMMANDLINE:
            resolved[key] = value
    return resolved


def _train_config(resolved: dict):
    from .model import TrainConfig

    readout = _READOUT_MAP.get(resolved["readout"])
    if readout is None:
        raise click.UsageError(f"readout must be one of {sorted(_READOUT_MAP)}")
    return TrainConfig(
        k=resolved["k"],
        num_forms=resolved["num_forms"],
        hidden_dim=resolved["hidden_dim"],
        steps=resolved["steps"],
        lr=resolved["lr"],
        batch_size=resolved["batch_size"],
        max_epochs=resolved["epochs"],
        early_stop_patience=resolved["early_stop_patience"],
        plateau_factor=resolved["plateau_factor"],
        plateau_patience=resolved["plateau_patience"],
        seed=resolved["seed"],
        readout=readout,
        optimizer=resolved["optimizer"],
        activation=resolved["activation"],
        use_head=resolved["use_head"],
        val_fraction=resolved["val_fraction"],
    )


def _write_sidecar(path: Path, resolved: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_representations(path: Path, classifier, data) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        num = classifier.form.num_forms
        writer.writerow([f"readout_{j}" for j in range(num)] + ["label"])
        for item in data.items:
            feats = classifier.features(item)
            writer.writerow([repr(float(v)) for v in feats] + [item.label])


def _run_guarded(body):
    """Map domain errors to the documented exit codes."""
    from .data import DataFormatError
    from .model import TrainingDivergence

    try:
        return body()
    except DataFormatError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (ValueError, TypeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except TrainingDivergence as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


def _train_and_dump(resolved: dict, data, out_dir: Path) -> None:
    from .model import save_classifier, train

    cfg = _train_config(resolved)
    if cfg.k != data.chain_dim:
        from .model import rechain_dataset

        data = rechain_dataset(data, cfg.k)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_sidecar(out_dir / "config.json", resolved)
    result = train(cfg, data)
    _write_jsonl(out_dir / "metrics.jsonl", result.history)
    save_classifier(result.classifier, out_dir / "checkpoint.kfc")
    _write_representations(out_dir / "representations.csv", result.classifier, data)
    click.echo(
        f"best epoch {result.best_epoch}: val loss {result.best_val_loss:.6f}, "
        f"val accuracy {result.best_val_accuracy:.4f}"
    )


def _common_train_options(fn):
    options = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="JSON config file; explicit flags override it."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--epochs", type=int, default=100, show_default=True),
        click.option("--lr", type=float, default=1e-3, show_default=True),
        click.option("--batch-size", type=int, default=16, show_default=True),
        click.option("--hidden-dim", type=int, default=16, show_default=True),
        click.option("--steps", type=int, default=5, show_default=True,
                     help="Subdivision steps per simplex edge for integration."),
        click.option("--num-forms", type=int, help="Number of forms (feature columns)."),
        click.option("--threads", type=int, default=None,
                     help="Cap BLAS worker threads (set before numeric work starts)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


_SHARED_TRAIN_DEFAULTS = {
    "seed": 0,
    "threads": None,
    "epochs": 100,
    "lr": 1e-3,
    "batch_size": 16,
    "hidden_dim": 16,
    "steps": 5,
    "optimizer": "adam",
    "activation": "relu",
    "val_fraction": 0.2,
    "early_stop_patience": 40,
    "plateau_factor": 0.5,
    "plateau_patience": 10,
}


@click.group()
def main():
    """Learnable differential k-forms over embedded simplicial complexes."""


@main.command("train-paths")
@_common_train_options
@click.option("--out", type=click.Path(file_okay=False), default="runs/paths", show_default=True)
@click.option("--readout", type=click.Choice(sorted(_READOUT_MAP)), default="sum", show_default=True)
@click.option("--k", type=int, default=1, show_default=True,
              help="Form degree; 0 swaps in the vertex-evaluation baseline.")
@click.pass_context
def train_paths(ctx, **_kwargs):
    """Train on three classes of oriented planar polylines.

    Headless by default: the per-path integrals of the learned 1-forms
    are the logits themselves."""
    defaults = {
        **_SHARED_TRAIN_DEFAULTS,
        "out": "runs/paths",
        "readout": "sum",
        "num_forms": 3,
        "k": 1,
        "use_head": False,
        "samples_per_class": 100,
        "points_per_path": 32,
        "noise": 0.02,
    }

    def body():
        resolved = _resolve(ctx, ctx.params.get("config"), defaults)
        if resolved["num_forms"] is None:
            resolved["num_forms"] = 3
        _set_threads(resolved.get("threads"))
        from .data import PathDatasetSpec, gen_paths

        spec = PathDatasetSpec(
            samples_per_class=resolved["samples_per_class"],
            points_per_path=resolved["points_per_path"],
            noise=resolved["noise"],
            seed=resolved["seed"],
        )
        _train_and_dump(resolved, gen_paths(spec), Path(resolved["out"]))

    _run_guarded(body)


@main.command("train-surfaces")
@_common_train_options
@click.option("--out", type=click.Path(file_okay=False), default="runs/surfaces", show_default=True)
@click.option("--readout", type=click.Choice(sorted(_READOUT_MAP)), default="l2", show_default=True)
@click.option("--k", type=int, default=2, show_default=True)
@click.pass_context
def train_surfaces(ctx, **_kwargs):
    """Train on triangulated sine surfaces (height varying along x vs y).

    Headless with an orientation-free column norm readout, so the two
    norms are the logits."""
    defaults = {
        **_SHARED_TRAIN_DEFAULTS,
        "out": "runs/surfaces",
        "readout": "l2",
        "num_forms": 2,
        "k": 2,
        "use_head": False,
        "samples_per_class": 100,
        "grid_size": 10,
        "noise": 0.05,
        "translation": 0.5,
    }

    def body():
        resolved = _resolve(ctx, ctx.params.get("config"), defaults)
        if resolved["num_forms"] is None:
            resolved["num_forms"] = 2
        _set_threads(resolved.get("threads"))
        from .data import SurfaceDatasetSpec, gen_surfaces

        spec = SurfaceDatasetSpec(
            grid_size=resolved["grid_size"],
            samples_per_class=resolved["samples_per_class"],
            noise=resolved["noise"],
            translation=resolved["translation"],
            seed=resolved["seed"],
        )
        _train_and_dump(resolved, gen_surfaces(spec), Path(resolved["out"]))

    _run_guarded(body)


@main.command("train-graphs")
@_common_train_options
@click.option("--dataset-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory holding the <name>_*.txt files.")
@click.option("--out", type=click.Path(file_okay=False), default="runs/graphs", show_default=True)
@click.option("--readout", type=click.Choice(sorted(_READOUT_MAP)), default="l2", show_default=True)
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@click.pass_context
def train_graphs(ctx, **_kwargs):
    """Cross-validated graph classification from TU-format text files."""
    defaults = {
        **_SHARED_TRAIN_DEFAULTS,
        "dataset_dir": None,
        "out": "runs/graphs",
        "readout": "l2",
        "num_forms": 8,
        "k": 1,
        "folds": 5,
        "use_head": True,
        "standardize": False,
        "attribute_columns": None,
    }

    def body():
        resolved = _resolve(ctx, ctx.params.get("config"), defaults)
        if resolved["num_forms"] is None:
            resolved["num_forms"] = 8
        _set_threads(resolved.get("threads"))
        from .data import parse_tu, tu_to_dataset
        from .model import kfold_cv

        raw = parse_tu(resolved["dataset_dir"])
        data = tu_to_dataset(
            raw,
            attribute_columns=resolved["attribute_columns"],
            standardize=resolved["standardize"],
        )
        cfg = _train_config(resolved)
        out_dir = Path(resolved["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_sidecar(out_dir / "config.json", resolved)
        cv = kfold_cv(cfg, data, resolved["folds"])
        rows = []
        for fold in cv.folds:
            rows.extend({**row, "fold": fold.fold} for row in fold.history)
            rows.append(
                {
                    "epoch": fold.best_epoch,
                    "split": "test",
                    "loss": float(fold.report.loss),
                    "accuracy": float(fold.report.accuracy),
                    "fold": fold.fold,
                }
            )
        _write_jsonl(out_dir / "metrics.jsonl", rows)
        report = {
            "dataset": raw.name,
            "folds": [
                {"fold": f.fold, "accuracy": f.report.accuracy, "loss": f.report.loss}
                for f in cv.folds
            ],
            "mean_accuracy": cv.mean_accuracy,
            "std_accuracy": cv.std_accuracy,
        }
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        click.echo(
            f"{raw.name}: {resolved['folds']}-fold accuracy "
            f"{cv.mean_accuracy:.4f} +- {cv.std_accuracy:.4f}"
        )

    _run_guarded(body)


@main.command("export-field")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default="field.csv", show_default=True)
@click.option("--grid-min", type=float, default=0.0, show_default=True)
@click.option("--grid-max", type=float, default=1.0, show_default=True)
@click.option("--grid-points", type=int, default=10, show_default=True)
@click.option("--threads", type=int, default=None)
@click.pass_context
def export_field(ctx, checkpoint, out, grid_min, grid_max, grid_points, threads):
    """Sample a saved form's coefficient functions on a regular grid.

    For k=1 the exported coefficients are exactly the components of the
    learned vector fields."""

    def body():
        _set_threads(threads)
        import itertools

        import numpy as np

        from .forms import load_form
        from .model import load_classifier
        from .nn import read_blob

        if grid_points < 1:
            raise ValueError("grid-points must be positive")
        if not grid_max > grid_min:
            raise ValueError("grid-max must exceed grid-min")
        header, _ = read_blob(checkpoint)
        kind = header.get("kind")
        if kind == "kform":
            form = load_form(checkpoint)
        elif kind == "kform-classifier":
            form = load_classifier(checkpoint).form
        else:
            raise ValueError(f"{checkpoint}: no k-form inside (kind={kind!r})")
        axis = np.linspace(grid_min, grid_max, grid_points)
        points = np.asarray(list(itertools.product(axis, repeat=form.n)))
        values = form.psi.forward(points)  # rows already in checkpoint layout order
        names = [f"x{d + 1}" for d in range(form.n)]
        for j in range(form.num_forms):
            for index in form.table.indices:
                suffix = "dx" + "".join(str(i) for i in index) if index else "const"
                names.append(f"alpha_{j}_{suffix}")
        out_path = Path(out)
        if out_path.parent != Path(""):
            out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row_p, row_v in zip(points, values):
                writer.writerow([repr(float(v)) for v in row_p]
                                + [repr(float(v)) for v in row_v])
        _write_sidecar(
            out_path.with_suffix(".config.json"),
            {
                "checkpoint": str(checkpoint),
                "out": str(out),
                "grid_min": grid_min,
                "grid_max": grid_max,
                "grid_points": grid_points,
            },
        )
        click.echo(f"wrote {points.shape[0]} rows to {out_path}")

    _run_guarded(body)


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--corrupt", is_flag=True, hidden=True,
              help="Negative control: sabotage one analytic gradient entry.")
@click.pass_context
def gradcheck(ctx, seed, threads, corrupt):
    """Compare analytic pipeline gradients against central differences
    for k = 0, 1, 2 with smooth activations and readouts."""

    def body():
        _set_threads(threads)
        import numpy as np

        from .model import finite_difference_error
        from . import _gradcheck_cases

        failures = 0
        for label, classifier, item in _gradcheck_cases.build_cases(seed):
            err = finite_difference_error(classifier, item, corrupt=corrupt)
            ok = err < 1e-4
            failures += not ok
            click.echo(f"{label}: max rel err {err:.3e} {'PASS' if ok else 'FAIL'}")
        if failures:
            click.echo(f"{failures} case(s) failed", err=True)
            sys.exit(1)
        click.echo("all gradient checks passed")

    _run_guarded(body)


if __name__ == "__main__":
    main()
