"""File-based pipeline driver.

Every stage is a pure function of its config and input files and writes its
outputs with fixed formatting, so rerunning a stage reproduces its files
byte for byte. Stages hand data to each other through model.json,
margins.csv, robustness_report.json, and accuracy_vs_eps.csv.
"""

from __future__ import annotations

import csv
import json
import pathlib

import click
import numpy as np

from . import attacks as attacks_mod
from . import boundary as boundary_mod
from . import feedback as feedback_mod
from . import metrics as metrics_mod
from . import network as network_mod
from . import theory as theory_mod
from ._format import fmt9
from .data import SyntheticSpec, load_idx, make_synthetic, subsample

SEED_PATHS = (("model", "seed"), ("train", "seed"), ("retrain", "seed"),
              ("search", "seed"), ("plan", "seed"), ("attack", "seed"))


def _load_config(path):
    p = pathlib.Path(path)
    if not p.exists():
        raise click.ClickException(f"config file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _override_seeds(config, seed):
    if seed is None:
        return config
    for section, key in SEED_PATHS:
        config.setdefault(section, {})[key] = seed
    if "dataset" in config and "synthetic" in config["dataset"]:
        config["dataset"]["synthetic"]["seed"] = seed
    return config


def _load_dataset(config):
    spec = config.get("dataset")
    if not spec:
        raise click.ClickException("config has no dataset section")
    if "synthetic" in spec:
        fields = dict(spec["synthetic"])
        for key in ("centers", "radii"):
            if fields.get(key) is not None:
                fields[key] = np.asarray(fields[key], dtype=np.float64)
        if "value_range" in fields:
            fields["value_range"] = tuple(fields["value_range"])
        return make_synthetic(SyntheticSpec(**fields))
    for key in ("images", "labels"):
        path = spec.get(key)
        if path is None:
            raise click.ClickException(f"dataset section is missing {key!r}")
        if not pathlib.Path(path).exists():
            raise click.ClickException(f"dataset file not found: {path}")
    return load_idx(spec["images"], spec["labels"],
                    name=spec.get("name", pathlib.Path(spec["images"]).stem))


def _out_dir(path):
    out = pathlib.Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(section):
    return network_mod.TrainConfig(
        learning_rate=section.get("learning_rate", 0.1),
        epochs=section.get("epochs", 30),
        batch_size=section.get("batch_size", 32),
        loss=section.get("loss", "cross-entropy"),
        seed=section.get("seed", 0),
    )


def _search_setup(config, data):
    """Resolve (indices, directions, search config) from the config."""
    section = config.get("search", {})
    seed = section.get("seed", 0)
    n = section.get("samples")
    if n is None or n >= len(data):
        indices = np.arange(len(data))
    else:
        _, indices = subsample(data, n, seed)
    k = section.get("directions", min(data.dimension, 64))
    dirs = boundary_mod.make_directions(data.dimension, k, seed + 1)
    lo, hi = data.value_range
    max_range = section.get("max_range")
    if max_range is None:
        max_range = (hi - lo) / 2.0
    cfg = boundary_mod.SearchConfig(step_size=section.get("step_size", 0.02),
                                    max_range=max_range,
                                    signs=section.get("signs", "both"))
    return indices, dirs, cfg


@click.group()
def main():
    """Decision-boundary margin measurement and margin-guided retraining."""


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--seed", type=int, default=None, help="Override every stage seed.")
def cmd_train(config_path, out_dir, seed):
    """Train a classifier; writes model.json and train_trace.csv."""
    config = _override_seeds(_load_config(config_path), seed)
    data = _load_dataset(config)
    out = _out_dir(out_dir)
    model_cfg = config.get("model", {})
    net = network_mod.init_network(
        data.dimension,
        model_cfg.get("hidden", [128]),
        data.num_classes,
        hidden_activation=model_cfg.get("activation", "relu"),
        seed=model_cfg.get("seed", 0),
    )
    net, trace = network_mod.train(net, data, _train_config(config.get("train", {})))
    network_mod.save_model(net, out / "model.json")
    with open(out / "train_trace.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "loss", "accuracy"))
        for epoch, (loss, acc) in enumerate(zip(trace["loss"], trace["accuracy"])):
            writer.writerow((epoch, fmt9(loss), fmt9(acc)))
    click.echo(f"trained: final accuracy {fmt9(trace['accuracy'][-1])}")


@main.command("search")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_search(config_path, model_path, out_dir, threads, seed):
    """Run the boundary search; writes margins.csv."""
    config = _override_seeds(_load_config(config_path), seed)
    data = _load_dataset(config)
    net = _load_model(model_path)
    indices, dirs, cfg = _search_setup(config, data)
    records = boundary_mod.search_all(net, data, indices, dirs, cfg,
                                      threads=threads)
    out = _out_dir(out_dir)
    boundary_mod.write_margins(records, out / "margins.csv")
    click.echo(f"searched {indices.size} samples x {dirs.count} directions "
               f"({len(records)} records)")


def _load_model(path):
    p = pathlib.Path(path)
    if not p.exists():
        raise click.ClickException(f"model file not found: {p}")
    return network_mod.load_model(p)


@main.command("analyze")
@click.option("--margins", "margins_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--num-classes", type=int, default=None,
              help="Class count; inferred from the records when omitted.")
def cmd_analyze(margins_path, out_dir, num_classes):
    """Aggregate margins; writes mean_margin_matrix.csv and robustness_report.json."""
    if not pathlib.Path(margins_path).exists():
        raise click.ClickException(f"margins file not found: {margins_path}")
    records = boundary_mod.read_margins(margins_path)
    matrix = metrics_mod.build_matrix(records, num_classes)
    report = metrics_mod.build_report(records, num_classes)
    out = _out_dir(out_dir)
    metrics_mod.write_matrix_csv(matrix, out / "mean_margin_matrix.csv")
    metrics_mod.write_report(report, out / "robustness_report.json")
    click.echo(f"model robustness R={fmt9(report.model_robustness)}")
    click.echo("adjacency proportions sum="
               f"{float(np.sum(report.adjacency_proportions)):.9f}")


def _generation_inputs(config, model_path, margins_path):
    config_data = _load_dataset(config)
    net = _load_model(model_path)
    if not pathlib.Path(margins_path).exists():
        raise click.ClickException(f"margins file not found: {margins_path}")
    records = boundary_mod.read_margins(margins_path)
    _, dirs, _ = _search_setup(config, config_data)
    return config_data, net, records, dirs


@main.command("generate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--margins", "margins_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--mode", type=click.Choice(feedback_mod.MODES), default="fl",
              show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_generate(config_path, model_path, margins_path, out_dir, mode, seed):
    """Synthesize cross-boundary examples; writes examples.csv and plan.json."""
    config = _override_seeds(_load_config(config_path), seed)
    data, net, records, dirs = _generation_inputs(config, model_path, margins_path)
    plan_cfg = config.get("plan", {})
    report = metrics_mod.build_report(records, net.num_classes)
    plan = feedback_mod.plan_from_report(
        report, mode, clip_to_range=plan_cfg.get("clip_to_range", True),
        seed=plan_cfg.get("seed", 0))
    examples = feedback_mod.generate_examples(data, records, dirs, plan)
    out = _out_dir(out_dir)
    feedback_mod.write_examples(examples, out / "examples.csv")
    feedback_mod.write_plan(plan, mode, out / "plan.json")
    click.echo(f"generated {len(examples)} examples (mode={mode})")


@main.command("retrain")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--margins", "margins_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--mode", type=click.Choice(feedback_mod.MODES), default="fl",
              show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_retrain(config_path, model_path, margins_path, out_dir, mode, seed):
    """Retrain on originals plus generated examples; writes retrained_model.json."""
    config = _override_seeds(_load_config(config_path), seed)
    data, net, records, dirs = _generation_inputs(config, model_path, margins_path)
    plan_cfg = config.get("plan", {})
    retrain_cfg = config.get("retrain", {})
    cfg = feedback_mod.RetrainConfig(
        learning_rate=retrain_cfg.get("learning_rate", 0.05),
        epochs=retrain_cfg.get("epochs", 5),
        batch_size=retrain_cfg.get("batch_size", 32),
        loss=retrain_cfg.get("loss", "cross-entropy"),
        seed=retrain_cfg.get("seed", 0),
    )
    retrained, bundle = feedback_mod.feedback_retrain(
        net, data, records, dirs, mode, cfg,
        plan_seed=plan_cfg.get("seed", 0),
        clip_to_range=plan_cfg.get("clip_to_range", True))
    out = _out_dir(out_dir)
    network_mod.save_model(retrained, out / "retrained_model.json")
    feedback_mod.write_examples(bundle.examples, out / "examples.csv")
    feedback_mod.write_plan(bundle.plan, mode, out / "plan.json")
    click.echo(f"retrained on {bundle.retrain_size} samples "
               f"({len(bundle.examples)} generated, mode={mode})")


@main.command("attack")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", show_default=True)
@click.option("--method", type=click.Choice(attacks_mod.METHODS), default=None,
              help="Overrides attack.method from the config.")
@click.option("--eps-list", default=None,
              help="Comma-separated epsilon (or sigma) values; overrides config.")
@click.option("--model-id", default=None,
              help="Label for the CSV rows; defaults to the model file stem.")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_attack(config_path, model_path, out_dir, method, eps_list, model_id,
               threads, seed):
    """Evaluate attacked accuracy over an epsilon sweep; writes accuracy_vs_eps.csv."""
    config = _override_seeds(_load_config(config_path), seed)
    data = _load_dataset(config)
    net = _load_model(model_path)
    attack_cfg = config.get("attack", {})
    method = method or attack_cfg.get("method", "fgsm")
    if eps_list is not None:
        eps_values = [float(v) for v in eps_list.split(",") if v.strip()]
    else:
        eps_values = attack_cfg.get("eps_list", [0.0, 0.1, 0.2, 0.3])
    if not eps_values:
        raise click.ClickException("empty epsilon list")
    rows = attacks_mod.sweep(
        net, data, method, eps_values,
        iterations=attack_cfg.get("iterations", 1),
        step_alpha=attack_cfg.get("step_alpha"),
        momentum_decay=attack_cfg.get("momentum_decay", 1.0),
        seed=attack_cfg.get("seed", 0),
        threads=threads)
    out = _out_dir(out_dir)
    model_id = model_id or pathlib.Path(model_path).stem
    attacks_mod.write_accuracy_csv(rows, len(data), method, model_id,
                                   out / "accuracy_vs_eps.csv")
    for eps, acc in rows:
        click.echo(f"{method} eps={fmt9(eps)} accuracy={fmt9(acc)}")


@main.command("theory-check")
@click.option("--trials", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", default=".", show_default=True)
def cmd_theory(trials, seed, out_dir):
    """Run the alignment and decrease sweeps; writes theory_report.json."""
    if trials < 1:
        raise click.ClickException("trials must be at least 1")
    lemma_results, _ = theory_mod.run_lemma_trials(trials, seed)
    theorem_results, _ = theory_mod.run_theorem_trials(trials, seed)
    out = _out_dir(out_dir)
    doc = theory_mod.write_theory_report(lemma_results, theorem_results, seed,
                                         out / "theory_report.json")
    click.echo(f"lemma1 pass_rate={doc['lemma1']['pass_rate']}")
    click.echo(f"theorem1 pass_rate={doc['theorem1']['pass_rate']}")


@main.command("report")
@click.option("--out-dir", default=".", show_default=True,
              help="Directory scanned recursively for pipeline artifacts.")
def cmd_report(out_dir):
    """Summarize every artifact under a directory into report.md."""
    root = pathlib.Path(out_dir)
    if not root.exists():
        raise click.ClickException(f"directory not found: {root}")
    lines = ["# Robustness pipeline report", ""]

    report_paths = sorted(root.rglob("robustness_report.json"))
    if report_paths:
        lines += ["## Model robustness", "",
                  "| source | R | tiers (high/medium/low) |", "| --- | --- | --- |"]
        for path in report_paths:
            rep = metrics_mod.read_report(path)
            high = sum(t == "high" for t in rep.tiers)
            med = sum(t == "medium" for t in rep.tiers)
            low = sum(t == "low" for t in rep.tiers)
            rel = path.relative_to(root)
            lines.append(f"| {rel} | {fmt9(rep.model_robustness)} | "
                         f"{high}/{med}/{low} |")
        lines.append("")

    accuracy_paths = sorted(root.rglob("accuracy_vs_eps.csv"))
    if accuracy_paths:
        lines += ["## Attacked accuracy", "",
                  "| source | model | method | epsilon | accuracy |",
                  "| --- | --- | --- | --- | --- |"]
        for path in accuracy_paths:
            for row in attacks_mod.read_accuracy_csv(path):
                rel = path.relative_to(root)
                lines.append(f"| {rel} | {row['model_id']} | {row['method']} | "
                             f"{fmt9(row['epsilon'])} | {fmt9(row['accuracy'])} |")
        lines.append("")

    theory_paths = sorted(root.rglob("theory_report.json"))
    if theory_paths:
        lines += ["## Theory checks", "",
                  "| source | lemma1 pass rate | theorem1 pass rate |",
                  "| --- | --- | --- |"]
        for path in theory_paths:
            with open(path, "r", encoding="ascii") as fh:
                doc = json.load(fh)
            rel = path.relative_to(root)
            lines.append(f"| {rel} | {doc['lemma1']['pass_rate']} | "
                         f"{doc['theorem1']['pass_rate']} |")
        lines.append("")

    if len(lines) == 2:
        lines += ["No pipeline artifacts found.", ""]
    with open(root / "report.md", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    click.echo(f"wrote {root / 'report.md'}")


if __name__ == "__main__":
    main()
