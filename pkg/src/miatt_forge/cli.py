"""Command-line pipeline: generate, assess, evaluate, train, report, compare, serve.

Every stage reads and writes the plain-text formats in ``formats`` and is
fully reproducible: rerunning from a manifest gives byte-identical masks,
history, and checkpoints.  ``--out`` falls back to the MIATT_FORGE_OUT
environment variable everywhere it appears.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import formats, report
from .core import MiattSet, assess_miatts, derive_ltt
from .generate import GenParams, SceneParams, generate_miatts_abductive, generate_synthetic_scene
from .laf import LafParams, ZeroDivisionPolicy, binarize, evaluate
from .learn import TrainConfig, forward, train_uttl


class CliError(click.ClickException):
    exit_code = 2


def _fail(exc: Exception) -> "CliError":
    return CliError(str(exc))


def _out_option(f):
    return click.option(
        "--out",
        envvar="MIATT_FORGE_OUT",
        required=True,
        type=click.Path(file_okay=False, path_type=Path),
        help="Output directory (defaults to $MIATT_FORGE_OUT).",
    )(f)


def _scene_options(f):
    opts = [
        click.option("--size", type=int, default=None,
                     help="Square-scene shorthand: sets width and height."),
        click.option("--width", type=int, default=None, help="Scene width in pixels."),
        click.option("--height", type=int, default=None, help="Scene height in pixels."),
        click.option("--lane-half-width", type=float, default=4.0, show_default=True),
        click.option("--lane-angle", type=float, default=0.35, show_default=True),
        click.option("--lane-offset", type=float, default=None,
                     help="Band center line offset [default: height/2]."),
        click.option("--lane-intensity", type=float, default=0.75, show_default=True),
        click.option("--background-intensity", type=float, default=0.25, show_default=True),
        click.option("--noise-sigma", type=float, default=0.05, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _gen_options(f):
    opts = [
        click.option("--n-targets", type=int, default=4, show_default=True),
        click.option("--object-coverage-range", type=float, nargs=2, default=(0.3, 0.6),
                     show_default=True),
        click.option("--nonobject-coverage-range", type=float, nargs=2, default=(0.2, 0.4),
                     show_default=True),
        click.option("--blob-seeds-per-target", type=int, default=3, show_default=True),
        click.option("--target-collective-coverage", type=float, default=0.95,
                     show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _train_options(f):
    opts = [
        click.option("--alpha", type=str, default=None,
                     help="Comma-separated per-target weights summing to 1 "
                          "[default: uniform]."),
        click.option("--learning-rate", type=float, default=0.1, show_default=True),
        click.option("--momentum", type=float, default=0.9, show_default=True),
        click.option("--max-epochs", type=int, default=2000, show_default=True),
        click.option("--eval-every", type=int, default=10, show_default=True),
        click.option("--stop-liou-min", type=float, default=0.999, show_default=True),
        click.option("--stop-lerrors-max", type=int, default=100, show_default=True),
        click.option("--prob-clamp-epsilon", type=float, default=1e-7, show_default=True),
        click.option("--patch-radius", type=int, default=3, show_default=True),
        click.option("--hidden-width", type=int, default=16, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _laf_options(f):
    opts = [
        click.option("--binarize-threshold", type=float, default=0.5, show_default=True),
        click.option("--zero-division-policy",
                     type=click.Choice([p.value for p in ZeroDivisionPolicy]),
                     default=ZeroDivisionPolicy.UNDEFINED.value, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group()
@click.version_option()
def main():
    """Multi-target labeling pipeline: generation, assessment, logical
    evaluation, training, reporting, comparison, and the annotation service."""


def _print_report(rep) -> None:
    click.echo(f"targets:      {len(rep.partial_flags)} (count_ok={rep.count_ok})")
    click.echo(f"partial:      {'all' if all(rep.partial_flags) else rep.partial_flags}")
    click.echo(f"consistent:   {rep.consistent}")
    if rep.conflicts:
        shown = ", ".join(
            f"pixel {p} (targets {i} vs {j})" for p, i, j in rep.conflicts[:20]
        )
        more = "" if len(rep.conflicts) <= 20 else f" (+{len(rep.conflicts) - 20} more)"
        click.echo(f"conflicts:    {shown}{more}")
    click.echo(
        f"coverage:     {rep.covered_pixels}/{rep.total_pixels}"
        f" = {float(rep.coverage):.6f}"
    )
    click.echo(f"passed:       {rep.passed}")


def _write_run_files(out: Path, manifest: formats.RunManifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    try:
        instance, reference = generate_synthetic_scene(manifest.scene_params)
        miatts = generate_miatts_abductive(reference, manifest.gen_params)
    except Exception as exc:
        raise _fail(exc) from exc
    formats.write_instance_pgm(out / "instance.pgm", instance)
    formats.write_mlab(out / "reference.mlab", reference)
    for i, t in enumerate(miatts):
        formats.write_mlab(out / f"miatt_{i}.mlab", t)
    formats.write_manifest(out / "manifest.json", manifest)
    rep = assess_miatts(miatts)
    click.echo(f"wrote {out}/instance.pgm, reference.mlab, "
               f"miatt_0..{len(miatts) - 1}.mlab, manifest.json")
    _print_report(rep)


@main.command("gen-data")
@_scene_options
@_gen_options
@_laf_options
@_train_options
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for scene, generation, and training streams.")
@click.option("--from-manifest", type=click.Path(exists=False, path_type=Path), default=None,
              help="Reproduce a run from an existing manifest (other flags ignored).")
@_out_option
def cmd_gen_data(size, width, height, lane_half_width, lane_angle, lane_offset,
                 lane_intensity, background_intensity, noise_sigma,
                 n_targets, object_coverage_range, nonobject_coverage_range,
                 blob_seeds_per_target, target_collective_coverage,
                 binarize_threshold, zero_division_policy,
                 alpha, learning_rate, momentum, max_epochs, eval_every,
                 stop_liou_min, stop_lerrors_max, prob_clamp_epsilon,
                 patch_radius, hidden_width, seed, from_manifest, out):
    """Generate a scene, its hidden reference, and a MIATT set; write a manifest."""
    if from_manifest is not None:
        try:
            manifest = formats.read_manifest(from_manifest)
        except formats.FileFormatError as exc:
            raise _fail(exc) from exc
        manifest = formats.RunManifest(
            manifest.scene_params, manifest.gen_params, manifest.laf_params,
            manifest.train_config, created_at=formats.RunManifest.now_timestamp(),
        )
        _write_run_files(out, manifest)
        return

    w = width if width is not None else (size if size is not None else 64)
    h = height if height is not None else (size if size is not None else 64)
    try:
        scene = SceneParams(
            width=w, height=h, lane_half_width=lane_half_width, lane_angle=lane_angle,
            lane_offset=lane_offset if lane_offset is not None else h / 2,
            lane_intensity=lane_intensity, background_intensity=background_intensity,
            noise_sigma=noise_sigma, seed=seed,
        )
        gen = GenParams(
            n_targets=n_targets,
            object_coverage_range=tuple(object_coverage_range),
            nonobject_coverage_range=tuple(nonobject_coverage_range),
            blob_seeds_per_target=blob_seeds_per_target,
            target_collective_coverage=target_collective_coverage,
            seed=seed,
        )
        laf = LafParams(
            binarize_threshold=binarize_threshold,
            zero_division_policy=ZeroDivisionPolicy(zero_division_policy),
        )
        train = TrainConfig(
            alpha=_parse_alpha(alpha), learning_rate=learning_rate, momentum=momentum,
            max_epochs=max_epochs, eval_every=eval_every, stop_liou_min=stop_liou_min,
            stop_lerrors_max=stop_lerrors_max, prob_clamp_epsilon=prob_clamp_epsilon,
            patch_radius=patch_radius, hidden_width=hidden_width, seed=seed,
        )
    except ValueError as exc:
        raise _fail(exc) from exc
    manifest = formats.RunManifest(
        scene, gen, laf, train, created_at=formats.RunManifest.now_timestamp()
    )
    _write_run_files(out, manifest)


def _parse_alpha(text):
    if text is None:
        return None
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise CliError(f"--alpha must be comma-separated numbers, got {text!r}") from None


@main.command("gen-miatts")
@click.option("--reference", "reference_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Complete reference labeling (.mlab).")
@_gen_options
@click.option("--seed", type=int, default=0, show_default=True)
@_out_option
def cmd_gen_miatts(reference_path, n_targets, object_coverage_range,
                   nonobject_coverage_range, blob_seeds_per_target,
                   target_collective_coverage, seed, out):
    """Generate a MIATT set from an existing reference labeling."""
    try:
        reference = formats.read_mlab(reference_path)
        gen = GenParams(
            n_targets=n_targets,
            object_coverage_range=tuple(object_coverage_range),
            nonobject_coverage_range=tuple(nonobject_coverage_range),
            blob_seeds_per_target=blob_seeds_per_target,
            target_collective_coverage=target_collective_coverage,
            seed=seed,
        )
        miatts = generate_miatts_abductive(reference, gen)
    except Exception as exc:
        raise _fail(exc) from exc
    out.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(miatts):
        formats.write_mlab(out / f"miatt_{i}.mlab", t)
    click.echo(f"wrote {out}/miatt_0..{len(miatts) - 1}.mlab")
    _print_report(assess_miatts(miatts))


def _read_miatts(run_dir: Path) -> MiattSet:
    paths = sorted(run_dir.glob("miatt_*.mlab"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise CliError(f"{run_dir}: no miatt_*.mlab files found")
    return MiattSet(tuple(formats.read_mlab(p) for p in paths))


@main.command("assess")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
def cmd_assess(run_dir):
    """Assess the MIATT set in RUN_DIR; exit 0 iff it passes."""
    try:
        miatts = _read_miatts(run_dir)
        rep = assess_miatts(miatts)
    except (formats.FileFormatError, ValueError) as exc:
        raise _fail(exc) from exc
    _print_report(rep)
    sys.exit(0 if rep.passed else 1)


def _laf_from_run(run_dir: Path) -> LafParams:
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        return formats.read_manifest(manifest_path).laf_params
    return LafParams()


@main.command("eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, path_type=Path),
              help="Prediction: .pgm probability map or .mlab complete labeling.")
@click.option("--binarize-threshold", type=float, default=None,
              help="Override the manifest/default threshold.")
def cmd_eval(run_dir, pred_path, binarize_threshold):
    """Evaluate a prediction against RUN_DIR's MIATT set; write metrics.json."""
    try:
        laf = _laf_from_run(run_dir)
        if binarize_threshold is not None:
            laf = LafParams(binarize_threshold, laf.zero_division_policy, laf.metric_selection)
        miatts = _read_miatts(run_dir)
        if pred_path.suffix == ".mlab":
            pred = formats.read_mlab(pred_path)
        else:
            pred = formats.read_probability_pgm(pred_path)
        counts, metrics = evaluate(pred, miatts, laf)
    except Exception as exc:
        raise _fail(exc) from exc
    out_path = run_dir / "metrics.json"
    out_path.write_text(formats.metrics_to_json(counts, metrics, laf), encoding="utf-8")
    click.echo(f"wrote {out_path}")
    for name, value in metrics.as_dict(laf.metric_selection).items():
        click.echo(f"{name}: {'n/a' if value is None else value}")


@main.command("train")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--max-epochs", type=int, default=None, help="Override the manifest budget.")
@click.option("--seed", type=int, default=None, help="Override the manifest seed.")
@click.option("--quiet", is_flag=True, help="Suppress per-record progress lines.")
def cmd_train(run_dir, max_epochs, seed, quiet):
    """Train on RUN_DIR's instance and MIATT set; write history, checkpoint,
    and the selected-epoch summary."""
    try:
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            manifest = formats.read_manifest(manifest_path)
            cfg, laf = manifest.train_config, manifest.laf_params
        else:
            cfg, laf = TrainConfig(), LafParams()
        overrides = {}
        if max_epochs is not None:
            overrides["max_epochs"] = max_epochs
        if seed is not None:
            overrides["seed"] = seed
        if overrides:
            d = formats.train_config_to_dict(cfg)
            d.update(overrides)
            cfg = formats.train_config_from_dict(d)
        instance = formats.read_instance_pgm(run_dir / "instance.pgm")
        miatts = _read_miatts(run_dir)

        def progress(record):
            if not quiet:
                liou = record.metrics.liou
                click.echo(
                    f"epoch {record.epoch:5d}  loss {record.loss:.6f}  "
                    f"LIoU {'n/a' if liou is None else f'{liou:.6f}'}  "
                    f"LErrors {record.metrics.lerrors}"
                )

        model, history = train_uttl([(instance, miatts)], cfg, laf, on_record=progress)
    except Exception as exc:
        raise _fail(exc) from exc
    formats.write_history_csv(run_dir / "history.csv", history)
    formats.write_model(run_dir / "model.json", model)
    (run_dir / "selected.json").write_text(
        formats.selected_to_json(history, laf), encoding="utf-8"
    )
    record = history.record_at(history.selected_epoch)
    click.echo(
        f"selected epoch {history.selected_epoch}: "
        f"LIoU {'n/a' if record.metrics.liou is None else record.metrics.liou}, "
        f"LErrors {record.metrics.lerrors}"
    )
    click.echo(f"wrote {run_dir}/history.csv, model.json, selected.json")


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
def cmd_report(run_dir):
    """Render history.csv as report.svg (fixed template) and report.png."""
    try:
        rows = formats.read_history_csv(run_dir / "history.csv")
        selected = None
        selected_path = run_dir / "selected.json"
        if selected_path.exists():
            selected = json.loads(selected_path.read_text(encoding="utf-8"))["selected_epoch"]
        svg = report.history_svg(rows, selected)
    except Exception as exc:
        raise _fail(exc) from exc
    (run_dir / "report.svg").write_text(svg, encoding="utf-8")
    report.history_png(rows, run_dir / "report.png", selected)
    click.echo(f"wrote {run_dir}/report.svg, report.png")


@main.command("compare")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--pred", "pred_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Prediction file; defaults to the trained checkpoint's output.")
def cmd_compare(run_dir, pred_path):
    """Emit prediction-vs-LTT and prediction-vs-target overlay images."""
    try:
        laf = _laf_from_run(run_dir)
        miatts = _read_miatts(run_dir)
        ltt = derive_ltt(miatts)
        if pred_path is not None:
            if pred_path.suffix == ".mlab":
                pred = formats.read_mlab(pred_path)
            else:
                pred = binarize(formats.read_probability_pgm(pred_path), laf.binarize_threshold)
        else:
            model_path = run_dir / "model.json"
            if not model_path.exists():
                raise CliError(f"{model_path}: no checkpoint; run train first or pass --pred")
            model = formats.read_model(model_path)
            instance = formats.read_instance_pgm(run_dir / "instance.pgm")
            pred = binarize(forward(model, instance), laf.binarize_threshold)
    except CliError:
        raise
    except Exception as exc:
        raise _fail(exc) from exc

    summary = {"overlays": []}
    pairs = [("overlay_ltt.ppm", ltt)] + [
        (f"overlay_target_{i}.ppm", t) for i, t in enumerate(miatts)
    ]
    for name, ref in pairs:
        formats.write_ppm(run_dir / name, report.overlay_rgb(pred, ref))
        entry = {"file": name, **report.overlay_counts(pred, ref)}
        summary["overlays"].append(entry)
        click.echo(
            f"{name}: agree {entry['agree']}, disagree {entry['disagree']}, "
            f"undetermined {entry['undetermined']}"
        )
    (run_dir / "compare_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    click.echo(f"wrote {len(pairs)} overlays and compare_summary.json to {run_dir}")


@main.command("serve")
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--data-dir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("miatt-forge-data"), show_default=True,
              help="Directory for the append-only project event logs.")
def cmd_serve(port, host, data_dir):
    """Run the annotation/training HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(Path(data_dir))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
