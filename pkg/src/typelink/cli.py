"""Command-line surface binding the pipeline stages into reproducible runs.

Every artifact-producing subcommand validates its inputs up front, writes a
manifest (flags, seed, sha256 of every input) next to its outputs, and never
mutates an input file. Defaults mirror the standard configuration: margin
0.01, damping 0.5, 10 message rounds, 2 epochs for local-style models and 10
for the global one.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .crf import LbpConfig
from .data import load_dataset, load_embeddings, load_type_map, write_embeddings
from .embeddings import (build_entity_table, nearest_contexts, nearest_entities,
                         read_context_vectors, read_context_vectors_emb1,
                         read_mention_vectors)
from .entity_types import ProbeConfig, probe_eval, probe_train
from .evaluation import (ErrorThresholds, categorize_errors, compare_runs,
                         micro_f1, predictions_from_forward, read_run,
                         render_error_table, write_run)
from .local import Counters, Resources
from .params import HIDDEN_WIDTH, load_params, save_blocks, save_params
from .scoring import score_dataset
from .train import TrainConfig, train

MODE_FLAGS = {
    "local": "local",
    "local-global": "local_global",
    "baseline": "baseline",
    "typed-oracle": "typed_oracle",
    "typed-predict": "typed_predict",
}


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str | None, flag: str, optional: bool = False) -> Path | None:
    if path is None:
        if optional:
            return None
        raise CliError(f"missing required flag {flag}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{flag}: no such file: {p}")
    return p


def _emb_pair(prefix: str | None, flag: str, optional: bool = False):
    if prefix is None:
        if optional:
            return None
        raise CliError(f"missing required flag {flag}")
    matrix = Path(prefix + ".emb")
    ids = Path(prefix + ".ids")
    for p in (matrix, ids):
        if not p.exists():
            raise CliError(f"{flag}: no such file: {p}")
    return matrix, ids


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: list[Path], outputs: list[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_ctx_vectors(path: Path):
    if path.suffix == ".emb":
        ids = path.with_suffix(".ids")
        if not ids.exists():
            raise CliError(f"--ctx-vecs: companion id file missing: {ids}")
        return read_context_vectors_emb1(path, ids), [path, ids]
    return read_context_vectors(path), [path]


def cmd_build_embeddings(args: argparse.Namespace) -> int:
    src = _require(args.ctx_vecs, "--ctx-vecs")
    exclude_path = _require(args.exclude, "--exclude", optional=True)
    out = Path(args.out)
    vectors, inputs = _load_ctx_vectors(src)
    exclude = None
    if exclude_path is not None:
        exclude = {line.strip() for line in exclude_path.read_text().splitlines() if line.strip()}
        inputs.append(exclude_path)
    table = build_entity_table(vectors, cap=args.cap, seed=args.seed,
                               exclude_sources=exclude)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(table, f"{out}.emb", f"{out}.ids")
    _write_manifest(out.parent, "build-embeddings", args, inputs,
                    [out.name + ".emb", out.name + ".ids"])
    print(f"wrote {len(table)} entity vectors of dim {table.dim} to {out}.emb")
    return 0


def _build_resources(args: argparse.Namespace, inputs: list[Path],
                     need_sim: bool, need_types: bool) -> Resources:
    word = _emb_pair(args.word_emb, "--word-emb")
    entity = _emb_pair(args.entity_emb, "--entity-emb")
    inputs.extend(word)
    inputs.extend(entity)
    res = Resources(word_table=load_embeddings(*word),
                    entity_table=load_embeddings(*entity),
                    top_words=args.top_words,
                    final_raw_prior=getattr(args, "final_raw_prior", False))
    sim = _emb_pair(args.sim_emb, "--sim-emb", optional=not need_sim)
    if sim is not None:
        inputs.extend(sim)
        res.sim_table = load_embeddings(*sim)
    ctx = _require(args.ctx_vecs, "--ctx-vecs", optional=not need_sim)
    if ctx is not None:
        inputs.append(ctx)
        res.mention_vecs = read_mention_vectors(ctx)
    tmap = _require(args.type_map, "--type-map", optional=not need_types)
    if tmap is not None:
        inputs.append(tmap)
        res.entity_types = load_type_map(tmap)
    return res


def cmd_train(args: argparse.Namespace) -> int:
    mode = MODE_FLAGS[args.mode]
    need_sim = mode in ("local", "local_global")
    need_types = mode == "typed_oracle" or mode == "typed_predict"
    inputs: list[Path] = []
    dataset_path = _require(args.dataset, "--dataset")
    inputs.append(dataset_path)
    res = _build_resources(args, inputs, need_sim, need_types)
    dataset = load_dataset(dataset_path)
    config = TrainConfig(mode=mode, gamma=args.gamma, l2=getattr(args, "lambda"),
                         lr=args.lr, epochs=args.epochs, seed=args.seed,
                         lbp=LbpConfig(damping=args.damping, loops=args.lbp_loops),
                         grad_mode=args.grad_mode, hidden=args.hidden)
    result = train(dataset, res, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(result.params, out / "model.ckpt")
    with open(out / "loss.json", "w", encoding="utf-8") as fh:
        json.dump({"epoch_losses": result.epoch_losses, "steps": result.steps,
                   "counters": dict(sorted(result.counters.items()))},
                  fh, indent=2, sort_keys=True)
    _write_manifest(out, "train", args, inputs, ["model.ckpt", "loss.json"])
    losses = ", ".join(f"{x:.4f}" for x in result.epoch_losses)
    print(f"trained {mode} for {config.resolved_epochs()} epochs; "
          f"per-epoch loss: [{losses}]")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dataset_path = _require(args.dataset, "--dataset")
    dataset = load_dataset(dataset_path)
    if args.run is not None:
        run_path = _require(args.run, "--run")
        predictions = read_run(run_path)
        f1 = micro_f1(predictions, dataset)
        print(f"micro-F1: {f1:.4f}")
        return 0
    if args.checkpoint is None:
        raise CliError("eval needs either --run or --checkpoint")
    if args.out is None:
        raise CliError("eval with --checkpoint needs --out for the run file")
    ckpt = _require(args.checkpoint, "--checkpoint")
    mode = MODE_FLAGS[args.mode]
    inputs: list[Path] = [dataset_path, ckpt]
    res = _build_resources(args, inputs, need_sim=mode in ("local", "local_global"),
                           need_types=mode.startswith("typed"))
    params = load_params(ckpt, mode, res.entity_table.dim)
    counters = Counters()
    threads = args.threads or os.cpu_count() or 1
    forwards = score_dataset(dataset, res, params,
                             LbpConfig(damping=args.damping, loops=args.lbp_loops),
                             threads=threads, counters=counters)
    predictions = [p for fwd in forwards for p in predictions_from_forward(fwd)]
    f1 = micro_f1(predictions, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run(predictions, out / "run.ndjson")
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"micro_f1": f1, "mentions": len(predictions),
                   "counters": dict(sorted(counters.items()))},
                  fh, indent=2, sort_keys=True)
    _write_manifest(out, "eval", args, inputs, ["run.ndjson", "metrics.json"])
    print(f"micro-F1: {f1:.4f}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    dataset_path = _require(args.dataset, "--dataset")
    run_path = _require(args.run, "--run")
    baseline_path = _require(args.baseline_run, "--baseline-run", optional=True)
    tmap_path = _require(args.type_map, "--type-map", optional=True)
    inputs = [p for p in (dataset_path, run_path, baseline_path, tmap_path) if p]
    dataset = load_dataset(dataset_path)
    run = read_run(run_path)
    baseline = read_run(baseline_path) if baseline_path else None
    type_map = load_type_map(tmap_path) if tmap_path else None
    thresholds = ErrorThresholds(low_prior=args.low_prior,
                                 dominant_prior=args.dominant_prior)
    report = categorize_errors(baseline, run, dataset, thresholds, type_map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "counts": report.counts,
        "total_errors": report.total_errors,
        "type_errors": report.type_errors,
        "rows": [vars(r) for r in report.rows],
    }
    outputs = ["report.json", "report.txt"]
    if baseline is not None:
        cmp_report = compare_runs(baseline, run, dataset)
        payload["comparison"] = {
            "fixed": cmp_report.fixed, "regressed": cmp_report.regressed,
            "f1_baseline": cmp_report.f1_a, "f1_run": cmp_report.f1_b,
            "net_f1_delta": cmp_report.net_f1_delta,
        }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    table = render_error_table(report)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    _write_manifest(out, "analyze", args, inputs, outputs)
    print(table)
    return 0


def cmd_nearest(args: argparse.Namespace) -> int:
    if args.contexts is not None:
        store_path = _require(args.contexts, "--contexts")
        vectors, inputs = _load_ctx_vectors(store_path)
        if args.query_source is None:
            raise CliError("context mode needs --query-source")
        matches = [cv for cv in vectors if cv.source == args.query_source]
        if not matches:
            raise CliError(f"--query-source: no stored context {args.query_source!r}")
        store = [cv for cv in vectors if cv.source != args.query_source]
        ranked = nearest_contexts(matches[0].vec, store, args.k)
    else:
        pair = _emb_pair(args.table, "--table")
        inputs = list(pair)
        table = load_embeddings(*pair)
        if args.query is None:
            raise CliError("entity mode needs --query")
        if args.query not in table:
            raise CliError(f"--query: unknown id {args.query!r}")
        ranked = nearest_entities(args.query, table, args.k)
    for id_, score in ranked:
        print(f"{score:.6f}\t{id_}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump([{"id": id_, "score": score} for id_, score in ranked],
                      fh, indent=2, sort_keys=True)
        _write_manifest(out.parent, "nearest", args, inputs, [out.name])
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    pair = _emb_pair(args.entity_emb, "--entity-emb")
    labels_path = _require(args.labels, "--labels")
    inputs = [*pair, labels_path]
    table = load_embeddings(*pair)
    type_map = load_type_map(labels_path)
    config = ProbeConfig(seed=args.seed, lr=args.lr, max_epochs=args.epochs,
                         threshold=args.threshold, per_type_bias=args.per_type_bias)
    model, history = probe_train(table, type_map, config)
    split = history["split"]
    metrics = {}
    for name in ("train", "dev", "test"):
        ents = split[name]
        if ents:
            m = probe_eval(model, table, type_map, ents, config.threshold)
            metrics[name] = {"strict_accuracy": m.strict_accuracy,
                             "micro_f1": m.micro_f1, "macro_f1": m.macro_f1}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_blocks({"probe.W": model.W, "probe.b": model.b}, out / "probe.ckpt")
    (out / "probe.types").write_text("\n".join(model.type_ids) + "\n", encoding="utf-8")
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"metrics": metrics, "best_epoch": history["best_epoch"],
                   "best_dev_loss": history["best_dev_loss"],
                   "epochs_run": len(history["train_loss"])},
                  fh, indent=2, sort_keys=True)
    _write_manifest(out, "probe", args, inputs,
                    ["probe.ckpt", "probe.types", "metrics.json"])
    for name, m in metrics.items():
        print(f"{name}: micro-F1 {m['micro_f1']:.4f}  macro-F1 {m['macro_f1']:.4f}  "
              f"strict {m['strict_accuracy']:.4f}")
    return 0


def _add_table_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--word-emb", help="prefix of the word table (PREFIX.emb, PREFIX.ids)")
    p.add_argument("--entity-emb", help="prefix of the entity table")
    p.add_argument("--sim-emb", help="prefix of the pooled similarity table")
    p.add_argument("--ctx-vecs", help="mention context-vector sidecar NDJSON")
    p.add_argument("--type-map", help="entity type map NDJSON")
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default="local")
    p.add_argument("--top-words", type=int, default=25,
                   help="context words kept by the attention")
    p.add_argument("--lbp-loops", type=int, default=10)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--final-raw-prior", action="store_true",
                   help="feed raw priors instead of logs to the final combiner")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="typelink")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("build-embeddings",
                       help="pool context vectors into an entity table")
    p.add_argument("--ctx-vecs", help="context vectors: NDJSON file or EMB1 .emb path")
    p.add_argument("--cap", type=int, default=100,
                   help="max contexts pooled per entity")
    p.add_argument("--exclude", help="file of source ids to drop, one per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_build_embeddings)

    p = sub.add_parser("train", help="max-margin training")
    p.add_argument("--dataset")
    _add_table_flags(p)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--lambda", type=float, default=1e-7, dest="lambda")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=None,
                   help="default: 2 local-style, 10 local-global")
    p.add_argument("--grad-mode", choices=("stop", "unroll"), default="stop")
    p.add_argument("--hidden", type=int, default=HIDDEN_WIDTH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset or an existing run file")
    p.add_argument("--dataset")
    p.add_argument("--run", help="run file to score instead of a model")
    p.add_argument("--checkpoint")
    _add_table_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="error taxonomy and run comparison")
    p.add_argument("--dataset")
    p.add_argument("--run", help="model run file")
    p.add_argument("--baseline-run", help="optional baseline run for comparison")
    p.add_argument("--type-map")
    p.add_argument("--low-prior", type=float, default=0.01)
    p.add_argument("--dominant-prior", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("nearest", help="exact nearest-neighbour queries")
    p.add_argument("--table", help="entity table prefix")
    p.add_argument("--query", help="query entity id")
    p.add_argument("--contexts", help="context-vector store (NDJSON or .emb)")
    p.add_argument("--query-source", help="source id of the query context")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_nearest)

    p = sub.add_parser("probe", help="train and evaluate the type probe")
    p.add_argument("--entity-emb", help="entity table prefix")
    p.add_argument("--labels", help="type map NDJSON with probe labels")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--per-type-bias", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, FileNotFoundError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
