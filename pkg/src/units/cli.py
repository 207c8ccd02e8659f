"""Command-line interface.

All commands operate against an on-disk store (--store, default
./units_store).  Dataset files are the uts binary format or the wide CSV
dialect; task predictions and reports are written as JSON.
"""

from __future__ import annotations

import json
import sys

import click

from . import synth
from .data import load_dataset_full, save_uts
from .fusion import FusionConfig
from .pipelines import pipeline_domain_shift, pipeline_partial_labeling
from .registry import Registry
from .runs import build_evaluation, load_model, run_finetune, run_pretrain
from .tuning import (
    Real,
    SearchSpace,
    bayes_optimize,
    resolve_config,
    task_spec_from_flat,
    template_config_from_flat,
)

FORMAT_CHOICES = click.Choice(["uts_binary", "csv_wide"])


def _parse_kv(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--config expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


@click.group()
@click.option("--store", default="./units_store", show_default=True,
              help="Registry directory.")
@click.pass_context
def main(ctx, store):
    ctx.obj = store


def _registry(ctx) -> Registry:
    return Registry(ctx.obj)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--template", "family", required=True)
@click.option("--config", multiple=True, help="key=value overrides (manual/smart modes).")
@click.option("--mode", default="default", type=click.Choice(["default", "manual", "smart"]),
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--budget", default=12, show_default=True, help="Smart-mode trial budget.")
@click.pass_context
def pretrain(ctx, data, fmt, family, config, mode, seed, budget):
    """Run self-supervised pre-training on an unlabeled dataset."""
    reg = _registry(ctx)
    ds, labels, _ = load_dataset_full(data, fmt)
    dataset_id = reg.put_dataset(ds, labels, name=data)
    overrides = _parse_kv(config)
    if mode == "smart":
        space = SearchSpace(
            {
                "learning_rate": Real(1e-4, 1e-2, log=True),
                "temperature": Real(0.05, 1.0),
                "masking_rate": Real(0.05, 0.5),
            }
        )

        def objective(flat):
            merged = {**overrides, **flat, "epochs": max(1, int(overrides.get("epochs", 2)))}
            cfg = template_config_from_flat(merged, family=family, in_channels=ds.d, seed=seed)
            from .pretraining import PretrainedInstance

            inst = PretrainedInstance(cfg).fit(ds)
            return inst.loss_curve[-1]

        flat, _records = bayes_optimize(objective, space, budget, seed=seed)
        flat = {**overrides, **flat}
    else:
        flat = resolve_config(mode, overrides or None)
    cfg = template_config_from_flat(flat, family=family, in_channels=ds.d, seed=seed)
    run_ids = run_pretrain(reg, [cfg], dataset_id)
    run = reg.get_run(run_ids[0])
    click.echo(json.dumps({"run_id": run.run_id, "status": run.status,
                           "dataset_id": dataset_id, **run.artifacts}))
    if run.status == "failed":
        sys.exit(1)


@main.command()
@click.option("--task", required=True,
              type=click.Choice(["classification", "clustering", "forecasting",
                                 "anomaly_detection", "imputation"]))
@click.option("--encoders", default="", help="Comma-separated encoder ids ('' = from scratch).")
@click.option("--fusion", default="concat", type=click.Choice(["concat", "projection"]),
              show_default=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--labels", "labels_path", default=None, type=click.Path(exists=True),
              help="Separate uts file carrying the label block.")
@click.option("--config", multiple=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def finetune(ctx, task, encoders, fusion, data, fmt, labels_path, config, seed):
    """Fine-tune a task model on pre-trained encoders (or from scratch)."""
    reg = _registry(ctx)
    ds, labels, _ = load_dataset_full(data, fmt)
    if labels_path:
        labels = load_dataset_full(labels_path, "uts_binary")[1]
    dataset_id = reg.put_dataset(ds, labels, name=data)
    flat = _parse_kv(config)
    if task == "classification" and "num_classes" not in flat and labels is not None:
        flat["num_classes"] = int(labels.num_classes)
    spec = task_spec_from_flat(task, flat, seed=seed)
    fusion_cfg = FusionConfig(kind="concatenation" if fusion == "concat" else "projection",
                              out_dim=flat.get("projection_dim"))
    encoder_ids = [e for e in encoders.split(",") if e]
    scratch_configs = None
    if not encoder_ids:
        scratch_configs = [template_config_from_flat(flat, in_channels=ds.d, seed=seed)]
    run_id, model_id = run_finetune(reg, encoder_ids, fusion_cfg, spec, dataset_id,
                                    from_scratch=not encoder_ids,
                                    scratch_configs=scratch_configs)
    run = reg.get_run(run_id)
    click.echo(json.dumps({"run_id": run_id, "model_id": model_id, "status": run.status,
                           "error": run.error}))
    if run.status == "failed":
        sys.exit(1)


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def predict(ctx, model_id, data, fmt, out):
    """Write task predictions for a dataset as JSON."""
    reg = _registry(ctx)
    ds, _labels, missing = load_dataset_full(data, fmt)
    tm = load_model(reg, model_id)
    task = tm.spec.task
    if task == "classification":
        labels, probs = tm.classify_predict(ds)
        payload = {"task": task, "labels": labels.tolist(), "probabilities": probs.tolist()}
    elif task == "clustering":
        payload = {"task": task, "assignments": tm.cluster_predict(ds).tolist()}
    elif task == "forecasting":
        payload = {"task": task, "predictions": tm.forecast_predict(ds).tolist()}
    elif task == "anomaly_detection":
        from .tasks import anomaly_decide

        result = anomaly_decide(tm.anomaly_scores(ds).scores, ("fixed", tm.tau))
        payload = {"task": task, "scores": result.scores.tolist(),
                   "flags": result.flags.astype(int).tolist(), "tau": result.tau}
    else:
        completed, imputed = tm.impute_predict(ds, missing)
        payload = {"task": task, "completed": completed.values.tolist(),
                   "imputed": [[i, j, k, v] for i, j, k, v in imputed]}
    with open(out, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def evaluate(ctx, model_id, data, fmt, labels_path, out):
    """Evaluate a model against labels; emits a JSON metric record."""
    reg = _registry(ctx)
    ds, labels, _ = load_dataset_full(data, fmt)
    if labels is None or labels_path != data:
        labels = load_dataset_full(labels_path, "uts_binary")[1]
    tm = load_model(reg, model_id)
    evaluation = build_evaluation(tm, ds, labels)
    text = json.dumps(evaluation)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    click.echo(text)


@main.group()
def pipeline():
    """Partial-labeling and domain-shift comparison pipelines."""


def _pipeline_templates(flat, d, seed, families):
    return [
        template_config_from_flat(flat, family=fam, in_channels=d, seed=seed)
        for fam in families
    ]


@pipeline.command("partial-labeling")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--rho", default=0.1, show_default=True)
@click.option("--templates", default="contrastive_series", show_default=True,
              help="Comma-separated template families.")
@click.option("--config", multiple=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def partial_labeling_cmd(ctx, data, fmt, rho, templates, config, seed, out):
    ds, labels, _ = load_dataset_full(data, fmt)
    if labels is None:
        raise click.UsageError("dataset must carry class labels")
    flat = _parse_kv(config)
    flat.setdefault("num_classes", int(labels.num_classes))
    spec = task_spec_from_flat("classification", flat, seed=seed)
    cfgs = _pipeline_templates(flat, ds.d, seed, templates.split(","))
    report = pipeline_partial_labeling(ds, labels, rho, spec, cfgs, seed=seed)
    text = json.dumps(report, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    click.echo(text)


@pipeline.command("domain-shift")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="uts_binary", type=FORMAT_CHOICES, show_default=True)
@click.option("--budget", "n", default=20, show_default=True)
@click.option("--templates", default="contrastive_series", show_default=True)
@click.option("--config", multiple=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def domain_shift_cmd(ctx, source, target, fmt, n, templates, config, seed, out):
    src, src_labels, _ = load_dataset_full(source, fmt)
    tgt, tgt_labels, _ = load_dataset_full(target, fmt)
    if src_labels is None or tgt_labels is None:
        raise click.UsageError("both datasets must carry class labels")
    flat = _parse_kv(config)
    flat.setdefault("num_classes", int(src_labels.num_classes))
    spec = task_spec_from_flat("classification", flat, seed=seed)
    cfgs = _pipeline_templates(flat, src.d, seed, templates.split(","))
    report = pipeline_domain_shift(src, src_labels, tgt, tgt_labels, n, spec, cfgs, seed=seed)
    text = json.dumps(report, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    click.echo(text)


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_context
def serve(ctx, port, host):
    """Start the HTTP service backed by the store."""
    from .service import serve as _serve

    _serve(ctx.obj, host=host, port=port)


@main.command("synth")
@click.option("--kind", required=True,
              type=click.Choice(["three_class", "two_regime", "sinusoid", "spiked"]))
@click.option("--n", default=200, show_default=True)
@click.option("--t", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def synth_cmd(kind, n, t, seed, out):
    """Generate a seeded synthetic dataset (uts format)."""
    if kind == "three_class":
        ds, labels = synth.three_class_waves(n=n, t=t, seed=seed)
    elif kind == "two_regime":
        ds, labels = synth.two_regime(n=n, t=t, seed=seed)
    elif kind == "sinusoid":
        ds, labels = synth.sinusoid_bank(n=n, t=t, seed=seed), None
    else:
        ds, labels = synth.spiked_sinusoids(n=n, t=t, seed=seed)
        labels = None  # anomaly flags cannot be embedded in uts label blocks
    save_uts(out, ds, labels)
    click.echo(f"wrote {out} (N={ds.n}, D={ds.d}, T={ds.t})")


if __name__ == "__main__":
    main()
