"""Command-line entry point: sample -> filter -> merge/teach -> assemble -> eval -> review.

Conventions shared by every subcommand:

* precedence is flags > config file > built-in defaults;
* `--dry-run` prints the resolved plan as one JSON line and performs no
  reads, writes, or network calls;
* API keys come only from environment variables;
* each run that writes outputs drops a `<out>.manifest.json` beside them
  recording the tool version, resolved config digest, and input digests,
  so any artifact can be traced back to the exact invocation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from . import assembler, corpus, distill, evalkit, grouper, prefagg, reviewsvc, simfilter
from .clients import EchoClient, HTTPChatClient, ResponseCache

DEFAULTS = {
    "seed": 711,
    "fmt": assembler.DEFAULT_FORMAT.value,
    "provider": "hash",
    "client": "echo",
    "prior_var": 10.0,
    "max_in_flight": 8,
    "target_retention": 0.86,
}


class CliError(RuntimeError):
    pass


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


class Settings:
    """Config resolution: CLI flag wins, then config file, then default."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.config: dict[str, str] = {}
        if getattr(args, "config", None):
            self.config = parse_config_file(args.config)

    def get(self, key: str, cast: Callable = str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.config:
            return cast(self.config[key])
        if default is not None:
            return default
        return DEFAULTS.get(key)

    def resolved(self, keys: dict[str, Callable]) -> dict:
        return {key: self.get(key, cast) for key, cast in keys.items()}


def make_provider(name: str, settings: Settings):
    if name == "hash":
        return simfilter.HashEmbeddingProvider()
    if name == "http":
        endpoint = settings.get("embed_endpoint")
        dim = settings.get("embed_dim", int)
        if not endpoint or not dim:
            raise CliError("http provider needs embed_endpoint and embed_dim in config")
        return simfilter.HTTPEmbeddingProvider(name="http", endpoint=endpoint, dim=int(dim))
    raise CliError(f"unknown embedding provider {name!r}")


def make_client(name: str, settings: Settings):
    if name == "echo":
        return EchoClient()
    if name == "echo-text":
        return EchoClient(name="echo-text", max_images=0)
    if name == "http":
        endpoint = settings.get("chat_endpoint")
        model = settings.get("chat_model")
        if not endpoint or not model:
            raise CliError("http client needs chat_endpoint and chat_model in config")
        return HTTPChatClient(name=f"http:{model}", endpoint=endpoint, model=model)
    raise CliError(f"unknown chat client {name!r}")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path: Path, plan: dict, inputs: list[Path]) -> None:
    manifest = {
        "tool_version": __version__,
        "plan": plan,
        "config_digest": hashlib.sha256(
            json.dumps(plan, sort_keys=True).encode("utf-8")
        ).hexdigest(),
        "inputs": {str(p): _sha256_file(p) for p in inputs if p.exists()},
    }
    manifest_path = Path(str(out_path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _plan_or_run(args: argparse.Namespace, plan: dict) -> bool:
    """True when this is a dry run; the caller returns immediately after."""
    if args.dry_run:
        print(json.dumps({"dry_run": True, "plan": plan}, sort_keys=True))
        return True
    return False


# -- subcommand implementations --


def cmd_sample(args: argparse.Namespace) -> int:
    settings = Settings(args)
    seed = int(settings.get("seed", int))
    plan = {
        "command": "sample",
        "pairs": args.pairs,
        "triples": args.triples,
        "quads": args.quads,
        "seed": seed,
        "in": args.in_path,
        "out": args.out,
    }
    if _plan_or_run(args, plan):
        return 0
    refs = corpus.load_manifest(args.in_path)
    spec = grouper.SamplingSpec(
        n_pairs=args.pairs, n_triples=args.triples, n_quads=args.quads, seed=seed
    )
    group_set = grouper.sample_groups(refs, spec)
    out = Path(args.out)
    grouper.save_groups(group_set.groups, out)
    write_manifest(out, plan, [Path(args.in_path)])
    print(f"sampled {len(group_set.groups)} groups -> {out}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    settings = Settings(args)
    provider_name = settings.get("provider")
    target = settings.get("target_retention", float)
    plan = {
        "command": "filter",
        "provider": provider_name,
        "tau": args.tau,
        "target_retention": None if args.tau is not None else target,
        "in": args.in_path,
        "descs": args.descs,
        "out": args.out,
        "removed": args.removed,
    }
    if _plan_or_run(args, plan):
        return 0
    groups = grouper.load_groups(args.in_path)
    group_set = grouper.groupset_from_groups(groups)
    descriptions = corpus.load_descriptions(args.descs).texts_by_id()
    provider = make_provider(provider_name, settings)
    cache_path = args.cache or str(Path(args.out).with_suffix(".embcache.json"))
    embedder = simfilter.CachedEmbedder(provider, cache_path=cache_path)
    if args.tau is not None:
        tau = args.tau
    else:
        pair_groups = grouper.groupset_from_groups([g for g in groups if g.size == 2])
        tau = simfilter.calibrate_threshold(pair_groups, descriptions, embedder, target)
        print(f"calibrated tau={tau:.6f} for target retention {target}")
    report = simfilter.filter_groups(group_set, descriptions, embedder, tau)
    grouper.save_groups(report.kept.groups, args.out)
    if args.removed:
        grouper.save_groups(report.removed.groups, args.removed)
    write_manifest(Path(args.out), {**plan, "tau_used": tau}, [Path(args.in_path), Path(args.descs)])
    retention = {str(k): round(v, 4) for k, v in report.retention_by_size.items()}
    print(
        f"kept {len(report.kept.groups)} / removed {len(report.removed.groups)} "
        f"(tau={tau:.6f}, retention by size {retention})"
    )
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    settings = Settings(args)
    client_name = settings.get("client")
    max_in_flight = int(settings.get("max_in_flight", int))
    plan = {
        "command": "merge",
        "client": client_name,
        "in": args.in_path,
        "descs": args.descs,
        "out": args.out,
    }
    if _plan_or_run(args, plan):
        return 0
    groups = grouper.load_groups(args.in_path)
    descriptions = corpus.load_descriptions(args.descs).texts_by_id()
    client = make_client(client_name, settings)
    cache = ResponseCache(args.cache) if args.cache else None
    items, stats = distill.merge_compare_batch(
        client, groups, descriptions, cache=cache, max_in_flight=max_in_flight
    )
    corpus.save_items(items, args.out)
    write_manifest(Path(args.out), plan, [Path(args.in_path), Path(args.descs)])
    print(f"merged {stats.parsed_ok}/{stats.requested} groups ({stats.dropped_failed} dropped)")
    return 0


def cmd_teach(args: argparse.Namespace) -> int:
    settings = Settings(args)
    client_name = settings.get("client")
    max_in_flight = int(settings.get("max_in_flight", int))
    seed = int(settings.get("seed", int))
    plan = {
        "command": f"teach {args.mode}",
        "client": client_name,
        "in": args.in_path,
        "out": args.out,
        "seed": seed,
    }
    if _plan_or_run(args, plan):
        return 0
    groups = grouper.load_groups(args.in_path)
    client = make_client(client_name, settings)
    cache = ResponseCache(args.cache) if args.cache else None
    if args.mode == "general":
        items, stats = distill.teach_general_batch(
            client, groups, cache=cache, max_in_flight=max_in_flight
        )
        corpus.save_items(items, args.out)
    else:
        aspects = args.aspects.split(",") if args.aspects else list(distill.DEFAULT_ASPECTS)
        qa_items, stats = distill.generate_qa_batch(
            client, groups, aspects=aspects, cache=cache, max_in_flight=max_in_flight
        )
        items = []
        for index, qa in enumerate(qa_items):
            mcq, direct = distill.qa_to_mcq(qa, seed=seed + index)
            items.extend((mcq, direct))
        corpus.save_items(items, args.out)
    write_manifest(Path(args.out), plan, [Path(args.in_path)])
    print(
        f"teach {args.mode}: {stats.parsed_ok}/{stats.requested} parsed "
        f"({stats.dropped_failed} dropped), wrote {len(items)} items"
    )
    return 0


def _parse_subsets(pairs: list[str]) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--subset needs name=path, got {pair!r}")
        name, _, path = pair.partition("=")
        out.append((name, path))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise CliError(f"subset name collision in {names}")
    return out


def cmd_assemble(args: argparse.Namespace) -> int:
    settings = Settings(args)
    fmt = assembler.InterleaveFormat(settings.get("fmt"))
    subsets = _parse_subsets(args.subset)
    plan = {
        "command": "assemble",
        "fmt": fmt.value,
        "subsets": dict(subsets),
        "out": args.out,
        "stats": args.stats,
    }
    if _plan_or_run(args, plan):
        return 0
    loaded = [(name, corpus.load_items(path)) for name, path in subsets]
    stats = assembler.assemble(loaded, fmt, args.out)
    if args.stats:
        Path(args.stats).write_text(
            json.dumps(stats.to_dict(), indent=2), encoding="utf-8"
        )
    write_manifest(Path(args.out), plan, [Path(p) for _, p in subsets])
    print(f"assembled {stats.overall.total} lines -> {args.out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    subsets = _parse_subsets(args.subset)
    plan = {"command": "stats", "subsets": dict(subsets)}
    if _plan_or_run(args, plan):
        return 0
    stats = assembler.stats_from_files(dict(subsets))
    text = json.dumps(stats.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_eval_mcq(args: argparse.Namespace) -> int:
    settings = Settings(args)
    client_name = settings.get("client")
    fmt = assembler.InterleaveFormat(settings.get("fmt"))
    split = evalkit.Split(args.split)
    plan = {
        "command": "eval mcq",
        "bench": args.bench,
        "bench_name": args.bench_name,
        "split": split.value,
        "client": client_name,
        "fmt": fmt.value,
        "report": args.report,
    }
    if _plan_or_run(args, plan):
        return 0
    bench = evalkit.load_bench(args.bench, name=args.bench_name, keys_path=args.keys)
    client = make_client(client_name, settings)
    cache = ResponseCache(args.cache) if args.cache else None
    responses = evalkit.run_mcq(
        client, bench, fmt, split, cache=cache,
        max_in_flight=int(settings.get("max_in_flight", int)),
    )
    report = evalkit.score_mcq(responses, bench, split)
    payload = {
        "bench": args.bench_name,
        "split": split.value,
        "client": client.name,
        "report": report.to_dict(),
        "random_baseline": evalkit.random_baseline(bench, split),
    }
    Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    write_manifest(Path(args.report), plan, [Path(args.bench)])
    print(f"accuracy {report.overall:.4f} over {report.n_records} records -> {args.report}")
    return 0


def cmd_eval_judge(args: argparse.Namespace) -> int:
    settings = Settings(args)
    judge_name = args.judge or settings.get("client")
    plan = {
        "command": "eval judge",
        "judge": judge_name,
        "golden": args.golden,
        "responses": args.responses,
        "report": args.report,
    }
    if _plan_or_run(args, plan):
        return 0
    goldens = [d["text"] for _, d in corpus._iter_lines(Path(args.golden))]
    responses = [d["text"] for _, d in corpus._iter_lines(Path(args.responses))]
    judge = make_client(judge_name, settings)
    cache = ResponseCache(args.cache) if args.cache else None
    scores = evalkit.judge_responses(judge, responses, goldens, cache=cache)
    aggregate = evalkit.aggregate_judge(scores)
    payload = {
        "judge": judge.name,
        "n_responses": len(scores),
        "n_flagged": sum(1 for s in scores if s.flagged),
        "aggregate": aggregate.to_dict(),
    }
    Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    write_manifest(Path(args.report), plan, [Path(args.golden), Path(args.responses)])
    print(f"judge sum {aggregate.total:.3f} over {len(scores)} responses -> {args.report}")
    return 0


def cmd_eval_2afc(args: argparse.Namespace) -> int:
    settings = Settings(args)
    client_name = settings.get("client")
    fmt = assembler.InterleaveFormat(settings.get("fmt"))
    prior_var = float(settings.get("prior_var", float))
    plan = {
        "command": "eval 2afc",
        "client": client_name,
        "pairs": args.pairs,
        "mos": args.mos,
        "prior_var": prior_var,
        "report": args.report,
    }
    if _plan_or_run(args, plan):
        return 0
    pairs = []
    for _, d in corpus._iter_lines(Path(args.pairs)):
        pairs.append(
            (corpus.ImageRef.from_dict(d["first"]), corpus.ImageRef.from_dict(d["second"]))
        )
    client = make_client(client_name, settings)
    cache = ResponseCache(args.cache) if args.cache else None
    records = prefagg.run_2afc(
        client, pairs, fmt=fmt, cache=cache,
        max_in_flight=int(settings.get("max_in_flight", int)),
    )
    consistency = prefagg.swap_consistency(records)
    matrix = prefagg.PreferenceMatrix.from_records(records)
    scores = prefagg.fit_map_scores(matrix, prior_variance=prior_var)
    payload = {
        "client": client.name,
        "n_pairs": len(pairs),
        "kappa_raw": consistency.raw,
        "kappa": consistency.chance_corrected,
        "scores": scores.as_dict(),
    }
    if args.mos:
        mos = {d["image_id"]: d["mos"] for _, d in corpus._iter_lines(Path(args.mos))}
        shared = [item for item in scores.items if item in mos]
        payload["rho"] = None
        if len(shared) >= 2:
            try:
                payload["rho"] = prefagg.pearson(
                    [scores.as_dict()[i] for i in shared], [mos[i] for i in shared]
                )
            except prefagg.PrefError as exc:
                payload["rho_error"] = str(exc)
    Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    write_manifest(Path(args.report), plan, [Path(args.pairs)])
    print(
        f"2afc kappa_raw={consistency.raw:.3f} kappa={consistency.chance_corrected:.3f} "
        f"-> {args.report}"
    )
    return 0


def cmd_review_serve(args: argparse.Namespace) -> int:
    plan = {
        "command": "review-serve",
        "store": args.store,
        "host": args.host,
        "port": args.port,
        "init_batch": args.init_batch,
    }
    if _plan_or_run(args, plan):
        return 0
    store = reviewsvc.ReviewStore(args.store)
    if args.init_batch:
        if not (args.kept and args.removed):
            raise CliError("--init-batch needs --kept and --removed item files")
        kept = corpus.load_items(args.kept)
        removed = corpus.load_items(args.removed)
        descriptions = (
            corpus.load_descriptions(args.descs).texts_by_id() if args.descs else None
        )
        tasks = reviewsvc.create_review_batch(
            kept, removed, k=args.k, seed=int(Settings(args).get("seed", int)),
            batch=args.init_batch, descriptions=descriptions,
        )
        store.add_tasks(tasks)
        print(f"initialized batch {args.init_batch!r} with {len(tasks)} tasks")
    if args.init_crossexam:
        bench = evalkit.load_bench(args.init_crossexam, name="crossexam-source")
        tasks = reviewsvc.crossexam_tasks_from_records(bench.records)
        store.add_crossexam(tasks)
        print(f"initialized {len(tasks)} cross-exam tasks")
    if args.no_serve:
        return 0
    import uvicorn

    uvicorn.run(reviewsvc.build_app(store), host=args.host, port=args.port)
    return 0


# -- parser wiring --


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqcmp",
        description="Build comparison instruction datasets and evaluate chat models on them.",
    )
    parser.add_argument("--version", action="version", version=f"vqcmp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--dry-run", action="store_true", help="print the plan, do nothing")

    p = sub.add_parser("sample", help="randomly match images into groups of 2-4")
    common(p)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--triples", type=int, default=0)
    p.add_argument("--quads", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--in", dest="in_path", required=True, help="image manifest (jsonl)")
    p.add_argument("--out", required=True, help="output groups file (jsonl)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("filter", help="drop groups with near-duplicate descriptions")
    common(p)
    p.add_argument("--tau", type=float, help="similarity threshold; overrides calibration")
    p.add_argument("--target-retention", dest="target_retention", type=float)
    p.add_argument("--provider")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--descs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--removed", help="also write removed groups here")
    p.add_argument("--cache", help="embedding cache path")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("merge", help="merge description groups into comparison items")
    common(p)
    p.add_argument("--client")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--descs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="response cache path")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("teach", help="collect teacher comparisons or Q&A on image groups")
    common(p)
    p.add_argument("mode", choices=["general", "qa"])
    p.add_argument("--client")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--aspects", help="comma-separated aspect list (qa mode)")
    p.add_argument("--seed", type=int)
    p.add_argument("--cache", help="response cache path")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.set_defaults(func=cmd_teach)

    p = sub.add_parser("assemble", help="render items into a training file with stats")
    common(p)
    p.add_argument("--fmt", choices=[f.value for f in assembler.InterleaveFormat])
    p.add_argument("--subset", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="write per-subset statistics json here")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("stats", help="report dataset statistics for item files")
    common(p)
    p.add_argument("--subset", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p_eval = sub.add_parser("eval", help="benchmark a chat client")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p = eval_sub.add_parser("mcq", help="multi-choice accuracy")
    common(p)
    p.add_argument("--bench", required=True)
    p.add_argument("--bench-name", dest="bench_name", default="custom")
    p.add_argument("--keys", help="answer key file for hidden splits")
    p.add_argument("--split", choices=["dev", "test"], default="test")
    p.add_argument("--client")
    p.add_argument("--fmt", choices=[f.value for f in assembler.InterleaveFormat])
    p.add_argument("--report", required=True)
    p.add_argument("--cache")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.set_defaults(func=cmd_eval_mcq)

    p = eval_sub.add_parser("judge", help="judge-scored reasoning quality")
    common(p)
    p.add_argument("--golden", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--judge")
    p.add_argument("--report", required=True)
    p.add_argument("--cache")
    p.set_defaults(func=cmd_eval_judge)

    p = eval_sub.add_parser("2afc", help="two-alternative forced choice with MAP scores")
    common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--client")
    p.add_argument("--mos", help="mean-opinion-score file for correlation")
    p.add_argument("--prior-var", dest="prior_var", type=float)
    p.add_argument("--fmt", choices=[f.value for f in assembler.InterleaveFormat])
    p.add_argument("--report", required=True)
    p.add_argument("--cache")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.set_defaults(func=cmd_eval_2afc)

    p = sub.add_parser("review-serve", help="serve the blinded human-review API")
    common(p)
    p.add_argument("--store", required=True, help="directory for tasks and verdict logs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--init-batch", dest="init_batch", help="create this batch before serving")
    p.add_argument("--kept", help="kept-arm items file (with --init-batch)")
    p.add_argument("--removed", help="removed-arm items file (with --init-batch)")
    p.add_argument("--k", type=int, default=250, help="tasks per arm (with --init-batch)")
    p.add_argument("--seed", type=int)
    p.add_argument("--descs", help="descriptions file to show alongside tasks")
    p.add_argument("--init-crossexam", dest="init_crossexam", help="bench file to cross-examine")
    p.add_argument("--no-serve", dest="no_serve", action="store_true")
    p.set_defaults(func=cmd_review_serve)

    return parser


def dispatch(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        CliError,
        corpus.CorpusError,
        grouper.SamplingError,
        simfilter.FilterError,
        distill.DistillError,
        assembler.AssembleError,
        evalkit.EvalError,
        prefagg.PrefError,
        reviewsvc.ReviewError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch())
