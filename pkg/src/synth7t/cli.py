"""Command-line entry point tying the toolkit together.

Subcommands: prep, train, infer, metrics, stats, survey. Every invocation
writes a machine-readable JSON run summary (``--summary``, default
``run_summary.json`` in the working directory); the exit code is 0 iff all
requested work succeeded. Relative input paths resolve against
``$SYNTH7T_DATA_ROOT`` when it is set.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from pathlib import Path

import click
import pandas as pd

from . import inference, metrics as metrics_mod, stats as stats_mod
from .config import load_run_config
from .survey import SurveyStore, create_app, create_study
from .training import Checkpoint, SlicePairs, train_gan, train_unet, write_history_csv
from .volumes import (
    clipped_minmax_normalize,
    crop_center,
    extract_slice_samples,
    load_metadata,
    load_volume,
    save_volume,
)

log = logging.getLogger("synth7t")

DATA_ROOT_ENV = "SYNTH7T_DATA_ROOT"


class DataPath(click.Path):
    """Path parameter that resolves relative values against the data root."""

    def convert(self, value, param, ctx):
        root = os.environ.get(DATA_ROOT_ENV)
        if root and value and not os.path.isabs(value):
            value = os.path.join(root, value)
        return super().convert(value, param, ctx)


def _write_summary(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, default=str) + "\n")


class _Run:
    """Collects outputs/errors and always writes the run summary."""

    def __init__(self, command, summary_path):
        self.payload = {"command": command, "ok": True, "outputs": {}, "errors": []}
        self.summary_path = summary_path
        self.t0 = time.monotonic()

    def output(self, key, value):
        self.payload["outputs"][key] = value

    def fail(self, message):
        self.payload["ok"] = False
        self.payload["errors"].append(str(message))

    def finish(self):
        self.payload["seconds"] = round(time.monotonic() - self.t0, 3)
        _write_summary(self.summary_path, self.payload)
        if not self.payload["ok"]:
            raise SystemExit(1)


summary_option = click.option("--summary", default="run_summary.json", show_default=True,
                              help="Where to write the machine-readable run summary.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Verbose logging to stderr.")
def main(verbose):
    logging.basicConfig(stream=sys.stderr,
                        level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_hw(text):
    try:
        h, w = (int(p) for p in text.replace("x", ",").split(","))
        return h, w
    except ValueError:
        raise click.BadParameter(f"expected HEIGHT,WIDTH, got {text!r}")


@main.command()
@click.option("--manifest", required=True, type=DataPath(), help="CSV: subject_id, image_path, mask_path[, exclusions_path].")
@click.option("--crop", default="288,224", show_default=True, help="In-plane crop HEIGHT,WIDTH.")
@click.option("--out-dir", required=True)
@summary_option
def prep(manifest, crop, out_dir, summary):
    """Normalize and crop raw volumes; write a prepped manifest."""
    run = _Run("prep", summary)
    crop_hw = _parse_hw(crop)
    out_dir = Path(out_dir)
    rows = []
    table = pd.read_csv(manifest, dtype={"subject_id": str})
    for row in table.itertuples(index=False):
        try:
            volume = load_volume(row.image_path, mask_path=getattr(row, "mask_path", None),
                                 exclusions_path=getattr(row, "exclusions_path", None))
            volume = crop_center(clipped_minmax_normalize(volume), crop_hw)
            image_out = out_dir / f"{row.subject_id}.nii.gz"
            mask_out = out_dir / f"{row.subject_id}_mask.nii.gz"
            save_volume(volume, image_out, mask_out)
            rows.append({"subject_id": row.subject_id, "image_path": str(image_out),
                         "mask_path": str(mask_out), "status": "ok"})
        except Exception as exc:
            rows.append({"subject_id": row.subject_id, "image_path": "", "mask_path": "",
                         "status": f"error: {exc}"})
            run.fail(f"{row.subject_id}: {exc}")
    out_manifest = out_dir / "prepped_manifest.csv"
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out_manifest, index=False)
    run.output("manifest", str(out_manifest))
    run.output("n_ok", sum(r["status"] == "ok" for r in rows))
    run.finish()


def _load_pairs(data_manifest, metadata_csv, with_diagnosis):
    meta = load_metadata(metadata_csv)
    table = pd.read_csv(data_manifest, dtype={"subject_id": str})
    samples = []
    for row in table.itertuples(index=False):
        source = load_volume(row.source_path, mask_path=getattr(row, "source_mask", None))
        target = load_volume(row.target_path, mask_path=getattr(row, "target_mask", None),
                             exclusions_path=getattr(row, "target_exclusions", None))
        samples.extend(extract_slice_samples((source, target), meta[row.subject_id],
                                             with_diagnosis=with_diagnosis))
    return SlicePairs.from_samples(samples)


@main.command()
@click.option("--arch", type=click.Choice(["unet", "gan"]), required=True)
@click.option("--config", "config_path", required=True, type=DataPath(), help="YAML run config.")
@click.option("--data", "data_manifest", required=True, type=DataPath(),
              help="CSV: subject_id, source_path, target_path[, masks, exclusions].")
@click.option("--metadata", required=True, type=DataPath(), help="Subject metadata CSV.")
@click.option("--out", "out_path", required=True, help="Checkpoint output path.")
@click.option("--history", default=None, help="Metric history CSV path.")
@click.option("--max-steps", default=None, type=int, help="Stop after N generator steps.")
@summary_option
def train(arch, config_path, data_manifest, metadata, out_path, history, max_steps, summary):
    """Train a generator (plain or adversarial) from a declarative config."""
    run = _Run("train", summary)
    try:
        cfg = load_run_config(config_path, arch)
        dataset = _load_pairs(data_manifest, metadata, with_diagnosis=cfg.model.context_len == 4)
        if arch == "unet":
            ckpt = train_unet(cfg.model, cfg.train, dataset, max_steps=max_steps)
        else:
            ckpt = train_gan(cfg.model, cfg.discriminator, cfg.train, dataset,
                             max_steps=max_steps)
        ckpt.save(out_path)
        run.output("checkpoint", out_path)
        run.output("global_step", ckpt.global_step)
        if ckpt.history:
            run.output("final_train_loss", ckpt.history[-1]["train_loss"])
        if history:
            write_history_csv(ckpt.history, history)
            run.output("history", history)
    except Exception as exc:
        run.fail(exc)
    run.finish()


@main.command()
@click.option("--checkpoint", required=True, type=DataPath())
@click.option("--manifest", required=True, type=DataPath(),
              help="CSV: subject_id, input_path, output_path, age, gender[, mask_path, diagnosis].")
@click.option("--normalize", is_flag=True, help="Apply clipped min-max normalization first.")
@click.option("--crop", default=None, help="Crop to HEIGHT,WIDTH before synthesis.")
@click.option("--report", default=None, help="Per-subject report CSV path.")
@click.option("--jobs", default=1, show_default=True, help="Parallel workers.")
@summary_option
def infer(checkpoint, manifest, normalize, crop, report, jobs, summary):
    """Synthesize 7T-like volumes for every manifest row."""
    run = _Run("infer", summary)
    try:
        model = Checkpoint.load(checkpoint).build_model()
        table = inference.batch_synthesize(
            model, manifest, normalize=normalize,
            crop_hw=None if crop is None else _parse_hw(crop),
            report_path=report, jobs=jobs,
        )
        failures = table[table["status"] != "ok"]
        run.output("n_ok", int((table["status"] == "ok").sum()))
        run.output("n_failed", int(len(failures)))
        if report:
            run.output("report", report)
        for item in failures.itertuples(index=False):
            run.fail(f"{item.subject_id}: {item.message}")
    except Exception as exc:
        run.fail(exc)
    run.finish()


CEREBELLUM_LABELS = (7, 8, 46, 47)  # cerebellum white matter / cortex, both hemispheres


@main.command("metrics")
@click.option("--pairs", required=True, type=DataPath(),
              help="CSV: subject_id, image_a, image_b, mask_a, mask_b[, seg_a, seg_b, exclusions_a, exclusions_b].")
@click.option("--out", "out_path", required=True, help="Metrics report CSV.")
@click.option("--no-cerebellum", is_flag=True,
              help="Drop cerebellum labels from the mean Dice (artifact mitigation).")
@click.option("--excluded-labels", default=None,
              help="Comma-separated extra label ids to drop from mean Dice.")
@summary_option
def metrics_cmd(pairs, out_path, no_cerebellum, excluded_labels, summary):
    """PSNR / SSIM (and Dice when segmentations are given) per subject."""
    run = _Run("metrics", summary)
    excluded = set(CEREBELLUM_LABELS) if no_cerebellum else set()
    if excluded_labels:
        excluded |= {int(x) for x in excluded_labels.split(",")}
    rows = []
    table = pd.read_csv(pairs, dtype={"subject_id": str})
    for row in table.itertuples(index=False):
        try:
            va = load_volume(row.image_a, mask_path=row.mask_a,
                             exclusions_path=getattr(row, "exclusions_a", None))
            vb = load_volume(row.image_b, mask_path=row.mask_b,
                             exclusions_path=getattr(row, "exclusions_b", None))
            region = metrics_mod.evaluation_region(va, vb)
            entry = {"subject_id": row.subject_id,
                     "psnr": metrics_mod.psnr(va.data, vb.data, region),
                     "ssim": metrics_mod.ssim(va.data, vb.data, region)}
            seg_a = getattr(row, "seg_a", None)
            if seg_a is not None and isinstance(seg_a, str):
                from .nifti import read_nifti

                sa, _ = read_nifti(seg_a)
                sb, _ = read_nifti(row.seg_b)
                entry["mean_dice"] = metrics_mod.per_subject_mean_dice(sa, sb, excluded)
            rows.append(entry)
        except Exception as exc:
            run.fail(f"{row.subject_id}: {exc}")
    if rows:
        metrics_mod.metrics_report(rows, out_path)
        run.output("report", out_path)
        run.output("n_subjects", len(rows))
    elif len(table):
        run.fail("no subject produced metrics")
    run.finish()


@main.group()
def stats():
    """Rank statistics, paired tests and the diagnostic-prediction harness."""


def _load_ranks(path, criterion):
    table = pd.read_csv(path)
    if criterion is not None:
        if "criterion" not in table.columns:
            raise click.ClickException("rank table has no criterion column")
        table = table[table["criterion"] == criterion]
        if table.empty:
            raise click.ClickException(f"no rows for criterion {criterion!r}")
    return table


@stats.command()
@click.option("--ranks", "ranks_path", required=True, type=DataPath(), help="Rank table CSV.")
@click.option("--criterion", default=None, help="Restrict to one criterion.")
@click.option("--out", "out_path", default=None, help="Write the result JSON here.")
@summary_option
def anova(ranks_path, criterion, out_path, summary):
    """Repeated-measures ANOVA on ranks."""
    run = _Run("stats.anova", summary)
    try:
        result = stats_mod.rm_anova(_load_ranks(ranks_path, criterion))
        payload = {"f_value": result.f_value, "p_value": result.p_value,
                   "df_effect": result.df_effect, "df_error": result.df_error}
        click.echo(json.dumps(payload))
        if out_path:
            Path(out_path).write_text(json.dumps(payload, indent=2))
            run.output("result", out_path)
        run.output("f_value", result.f_value)
        run.output("p_value", result.p_value)
    except Exception as exc:
        run.fail(exc)
    run.finish()


@stats.command()
@click.option("--ranks", "ranks_path", required=True, type=DataPath())
@click.option("--criterion", default=None)
@click.option("--out", "out_path", required=True, help="Pairwise table CSV.")
@summary_option
def tukey(ranks_path, criterion, out_path, summary):
    """Tukey post-hoc pairwise comparisons on ranks."""
    run = _Run("stats.tukey", summary)
    try:
        table = stats_mod.tukey_posthoc(_load_ranks(ranks_path, criterion))
        table.to_csv(out_path, index=False)
        run.output("result", out_path)
        run.output("n_pairs", len(table))
    except Exception as exc:
        run.fail(exc)
    run.finish()


@stats.command()
@click.option("--scores", required=True, type=DataPath(),
              help="Long CSV: subject_id, group, value (e.g. Dice per image type).")
@click.option("--out", "out_path", required=True)
@summary_option
def ttest(scores, out_path, summary):
    """Paired t-tests between groups with Benjamini-Hochberg correction."""
    run = _Run("stats.ttest", summary)
    try:
        table = pd.read_csv(scores)
        pivot = table.pivot(index="subject_id", columns="group", values="value")
        if pivot.isna().any().any():
            raise stats_mod.StatsError("groups are not subject-aligned (missing cells)")
        samples = {g: pivot[g].to_numpy() for g in pivot.columns}
        result = stats_mod.paired_t_bh(samples)
        result.to_csv(out_path, index=False)
        run.output("result", out_path)
    except Exception as exc:
        run.fail(exc)
    run.finish()


@stats.command()
@click.option("--features", required=True, type=DataPath(), help="Feature CSV with a diagnosis column.")
@click.option("--n-repeats", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--n-folds", default=10, show_default=True)
@click.option("--out-prefix", required=True, help="Writes <prefix>_scores.csv and <prefix>_importances.csv.")
@summary_option
def predict(features, n_repeats, seed, n_folds, out_prefix, summary):
    """Random-forest diagnostic prediction with cross-validation repeats."""
    run = _Run("stats.predict", summary)
    try:
        table = stats_mod.load_feature_table(features)
        result = stats_mod.diagnostic_prediction(table, n_repeats=n_repeats, seed=seed,
                                                 n_folds=n_folds)
        scores = pd.DataFrame({"repeat": range(n_repeats),
                               "accuracy": result.accuracy,
                               "balanced_accuracy": result.balanced_accuracy})
        scores_path = f"{out_prefix}_scores.csv"
        importances_path = f"{out_prefix}_importances.csv"
        scores.to_csv(scores_path, index=False)
        result.importances.rename_axis("feature").to_csv(importances_path)
        run.output("scores", scores_path)
        run.output("importances", importances_path)
        run.output("mean_balanced_accuracy", float(result.balanced_accuracy.mean()))
    except Exception as exc:
        run.fail(exc)
    run.finish()


@main.group()
def survey():
    """Create, export and serve blinded ranking studies."""


@survey.command("create")
@click.option("--manifest", required=True, type=DataPath(), help="CSV: subject_id, variant, image_path[, mask_path].")
@click.option("--n-queries", default=28, show_default=True)
@click.option("--criteria", multiple=True, required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--store", "store_path", required=True, help="Append-only study store (JSONL).")
@click.option("--images-dir", required=True)
@click.option("--study-id", default=None)
@summary_option
def survey_create(manifest, n_queries, criteria, seed, store_path, images_dir, study_id, summary):
    run = _Run("survey.create", summary)
    try:
        study = create_study(manifest, n_queries, list(criteria), seed, images_dir,
                             study_id=study_id)
        SurveyStore(store_path).add_study(study)
        run.output("study_id", study.study_id)
        run.output("n_queries", len(study.queries))
        click.echo(study.study_id)
    except Exception as exc:
        run.fail(exc)
    run.finish()


@survey.command("export")
@click.option("--store", "store_path", required=True)
@click.option("--study-id", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--include-incomplete", is_flag=True)
@summary_option
def survey_export(store_path, study_id, out_path, include_incomplete, summary):
    run = _Run("survey.export", summary)
    try:
        table = SurveyStore(store_path).export_ranks(study_id,
                                                     include_incomplete=include_incomplete)
        table.to_csv(out_path, index=False)
        run.output("ranks", out_path)
        run.output("n_rows", len(table))
    except Exception as exc:
        run.fail(exc)
    run.finish()


@survey.command("serve")
@click.option("--store", "store_path", required=True)
@click.option("--images-dir", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8780, show_default=True)
@click.option("--frontend", default=None, help="Directory with the built rater UI.")
def survey_serve(store_path, images_dir, host, port, frontend):
    """Run the rater-facing HTTP service (blocks)."""
    import uvicorn

    app = create_app(store_path, images_dir, frontend_dir=frontend)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
