"""Command-line surface.

Subcommands: parse, embed, train, generate, react, eval, scorecard.
Exit codes: 0 success, 1 validation error, 2 internal error. Every source
of randomness is controlled by an explicit seed.
"""

import argparse
import json
import pathlib
import sys

from . import data, diffusion as dif, lm as lm_mod, metrics, reaction as rxn
from . import training
from .checkpoint import load_checkpoint, save_checkpoint
from .chem import check_validity, implicit_hydrogens, parse_smiles
from .errors import Error
from .rng import Rng
from .system import SystemConfig, build_system


def _load_system(args):
    system = build_system(SystemConfig(), seed=getattr(args, "seed", 0))
    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint:
        system.load_state(load_checkpoint(checkpoint))
    return system


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_parse(args) -> int:
    graph = parse_smiles(args.smiles)
    _emit({
        "atoms": [
            {"element": a.element, "charge": a.charge, "explicit_h": a.explicit_h,
             "aromatic": a.aromatic, "implicit_h": implicit_hydrogens(graph, i)}
            for i, a in enumerate(graph.atoms)],
        "bonds": [{"atoms": [b.a, b.b], "order": b.order} for b in graph.bonds],
    })
    return 0


def cmd_embed(args) -> int:
    system = _load_system(args)
    if not check_validity(args.smiles):
        raise Error(f"invalid SMILES: {args.smiles!r}")
    pooled = system.graph_embedding(args.smiles)
    adapted = system.perceive(args.smiles)
    _emit({"smiles": args.smiles,
           "graph_embedding": pooled.data[0].tolist(),
           "adapted_embedding": adapted.data[0].tolist()})
    return 0


def _prepare_corpora(config, system):
    corpora = {}
    tokenizer = system.tokenizer
    if "lm" in config.data:
        lines = data.load_corpus(config.data["lm"], "prompts")
        corpora["lm"] = [
            [tokenizer.id(lm_mod.BOS)] + tokenizer.encode(line)
            + [tokenizer.id(lm_mod.EOS)]
            for line in lines if line.strip()]
    if "pairs" in config.data:
        pairs = data.load_corpus(config.data["pairs"], "pair-tsv")
        corpora["align"] = pairs
        corpora["diffusion"] = pairs
    if "reactions" in config.data:
        records = data.load_corpus(config.data["reactions"], "reaction-jsonl")
        system.amount_normalizer = rxn.AmountNormalizer.fit(records)
        items = []
        for i, record in enumerate(records):
            roles = [m.role for m in record.molecules]
            target = "product" if i % 2 == 0 else "reactant"
            items.append((record, {roles.index(target)}))
        corpora["reaction"] = items
    return corpora


def cmd_train(args) -> int:
    config = training.parse_stage_config(args.config)
    system = _load_system(args)
    corpora = _prepare_corpora(config, system)
    result = training.run_stage(system, config, corpora, Rng(config.seed))
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.ntck", result.checkpoint)
    training.write_metrics_csv(out_dir / "metrics.csv", result.log)
    last = result.log[-1] if result.log else (0, "-", float("nan"))
    _emit({"stage": config.stage, "steps": config.steps,
           "final_loss": last[2],
           "checkpoint": str(out_dir / "checkpoint.ntck"),
           "metrics": str(out_dir / "metrics.csv")})
    return 0


def cmd_generate(args) -> int:
    system = _load_system(args)
    rng = Rng(args.seed)
    tokenizer = system.tokenizer
    ids = [tokenizer.id(lm_mod.BOS)] + tokenizer.encode(args.prompt)
    states = lm_mod.encode_text(ids, system.lm_params)
    mean_hidden = lm_mod._mean_rows(states)
    cond = dif.text_condition(mean_hidden, system.diffusion.dit)
    schedule = dif.build_schedule(args.steps, system.config.beta_start,
                                  system.config.beta_end)
    guidance = dif.GuidanceConfig(scale=args.cfg_scale, steps=args.steps)
    smiles = dif.sample(cond.data, guidance, schedule, system.diffusion,
                        rng.split("sample"), source=args.source,
                        bridge_t=args.bridge_t)
    _emit({"smiles": smiles, "valid": check_validity(smiles),
           "seed": args.seed, "steps": args.steps, "cfg_scale": args.cfg_scale})
    return 0


def cmd_react(args) -> int:
    system = _load_system(args)
    records = data.load_corpus(args.reactions, "reaction-jsonl")
    if not records:
        raise Error("no reaction records in input")
    system.amount_normalizer = rxn.AmountNormalizer.fit(records)
    library_smiles = []
    for record in records:
        wanted = "product" if args.task != "retro" else "reactant"
        library_smiles.extend(m.smiles for m in record.molecules
                              if m.role == wanted)
    library = system.embedding_library(library_smiles)
    for record in records:
        result = system.react(record, args.task, library)
        _emit(result)
    return 0


def _read_column(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def cmd_eval(args) -> int:
    pred = _read_column(args.pred)
    gold = _read_column(args.gold)
    metric = args.metric
    if metric in ("mae", "rmse"):
        mae, rmse = metrics.regression_metrics([float(x) for x in pred],
                                               [float(x) for x in gold])
        value = mae if metric == "mae" else rmse
        orientation = metrics.LOWER
    elif metric in ("accuracy", "f1"):
        acc, f1 = metrics.classification_metrics([int(x) for x in pred],
                                                 [int(x) for x in gold])
        value = acc if metric == "accuracy" else f1
        orientation = metrics.HIGHER
    elif metric == "ndcg":
        scores = [float(x) for x in pred]
        gains = [float(x) for x in gold]
        if len(scores) != len(gains):
            raise metrics.LengthMismatch(f"{len(scores)} vs {len(gains)}")
        ranking = sorted(range(len(scores)), key=lambda i: -scores[i])
        value = metrics.ndcg(ranking, gains)
        orientation = metrics.HIGHER
    elif metric == "tanimoto":
        from .chem import path_fingerprint, tanimoto
        if len(pred) != len(gold):
            raise metrics.LengthMismatch(f"{len(pred)} vs {len(gold)}")
        sims = []
        for p, g in zip(pred, gold):
            if check_validity(p) and check_validity(g):
                sims.append(tanimoto(path_fingerprint(parse_smiles(p)),
                                     path_fingerprint(parse_smiles(g))))
            else:
                sims.append(0.0)
        value = sum(sims) / len(sims)
        orientation = metrics.HIGHER
    elif metric == "validity":
        value = sum(check_validity(p) for p in pred) / len(pred)
        orientation = metrics.HIGHER
    else:
        raise Error(f"unknown metric {metric!r}")
    report = metrics.MetricReport(metric, orientation, float(value), len(pred))
    _emit({"metric": report.name, "orientation": report.orientation,
           "value": report.value, "samples": report.samples})
    return 0


def cmd_scorecard(args) -> int:
    reports_dir = pathlib.Path(args.reports)
    model_reports = {}
    for path in sorted(reports_dir.glob("*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        model_reports[obj["model"]] = [
            metrics.MetricReport(m["name"], m["orientation"], m["value"],
                                 m.get("samples", 1))
            for m in obj["metrics"]]
    if not model_reports:
        raise Error(f"no report files in {reports_dir}")
    grouping = None
    if args.grouping:
        with open(args.grouping, "r", encoding="utf-8") as fh:
            grouping = json.load(fh)
    payload = metrics.build_scorecard(model_reports, grouping)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(metrics.scorecard_svg(payload))
    _emit({"out": args.out, "models": sorted(model_reports),
           **({"svg": args.svg} if args.svg else {})})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinymol")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a SMILES string and dump the graph")
    p.add_argument("smiles")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("embed", help="geometric embedding of one molecule")
    p.add_argument("smiles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="run one training stage from a config file")
    p.add_argument("config")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--seed", type=int, default=0, help="parameter init seed")
    p.add_argument("--checkpoint", help="initialize from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a molecule from a text prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", help="source molecule for scaffold editing")
    p.add_argument("--bridge-t", type=int, help="start step for edit noising")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("react", help="predict products, reactants, or yields")
    p.add_argument("reactions", help="reaction JSONL file")
    p.add_argument("--task", choices=("product", "retro", "yield"),
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_react)

    p = sub.add_parser("eval", help="score a prediction file against gold")
    p.add_argument("pred")
    p.add_argument("gold")
    p.add_argument("--metric", required=True,
                   choices=("mae", "rmse", "accuracy", "f1", "ndcg",
                            "tanimoto", "validity"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scorecard", help="aggregate model reports into a radar")
    p.add_argument("reports", help="directory of per-model report JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--grouping", help="JSON file mapping metric to dimension")
    p.set_defaults(func=cmd_scorecard)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
