"""Command-line entry point wiring every module together.

Exit codes: 0 success, 1 domain failure (bad input data, nothing
accepted, bound violated), 2 usage error.  Settings resolve as
flags > environment (PROOFKIT_*) > --config JSON file > defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
import time
from pathlib import Path

from .audit import (
    AuditStore,
    JudgedOutput,
    NoScoredSamplesError,
    calibration_report,
    stratified_sample,
)
from .corpus import (
    PipelineConfig,
    compute_stats,
    load_base_corpus,
    load_corpus,
    run_pipeline,
)
from .curriculum import Schedule, TargetSelection, emit_schedule
from .entropy import (
    SpikePolicy,
    annotate_spikes,
    check_bound,
    random_capped_model,
    read_logprob_dump,
    trace_from_logprobs,
    uniform_capped_model,
    write_trace_csv,
)
from .gateway import ChatGateway, GatewayError
from .hierarchy import ParseError, SchemaViolationError, parse_corpus_line
from .judge import load_benchmark_spec, load_proof_source, report_to_dict, run_benchmark
from .mockllm import MockLLMServer, ScriptedResponse
from .reward import VerifierConfig, score_rollout_group
from .service import ServiceConfig, create_app

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

logger = logging.getLogger("proofkit.cli")


class UsageError(Exception):
    pass


# --- settings resolution ---------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(flag_value, env_name: str, cfg: dict, key: str, default=None, cast=None):
    """flags > env > config file > default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(env_name)
    if env is not None:
        return cast(env) if cast else env
    if key in cfg:
        return cfg[key]
    return default


def _require(value, what: str):
    if value is None:
        raise UsageError(f"{what} is required (flag, PROOFKIT_* env, or config file)")
    return value


def _gateway(args, cfg) -> ChatGateway:
    endpoint = _require(
        _resolve(args.endpoint, "PROOFKIT_ENDPOINT", cfg, "endpoint"), "an endpoint"
    )
    return ChatGateway(endpoint)


def _emit(args, payload: dict, human_lines):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


def _stash_partial(*paths) -> list[str]:
    """Move interrupted outputs aside under a .partial suffix."""
    stashed = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.exists():
            target = p.with_name(p.name + ".partial")
            os.replace(p, target)
            stashed.append(str(target))
    if stashed:
        print(f"interrupted; partial output kept at {', '.join(stashed)}", file=sys.stderr)
    else:
        print("interrupted; no output written", file=sys.stderr)
    return stashed


# --- subcommands ----------------------------------------------------------------


def _cmd_annotate(args, cfg) -> int:
    base = load_base_corpus(args.infile)
    gw = _gateway(args, cfg)
    model = _require(_resolve(args.model, "PROOFKIT_MODEL", cfg, "model"), "a model id")
    pipeline = PipelineConfig(
        model=model,
        out_path=args.out,
        report_path=args.report,
        max_attempts=args.max_attempts,
        max_in_flight=_resolve(
            args.max_in_flight, "PROOFKIT_MAX_IN_FLIGHT", cfg, "max_in_flight", 8, int
        ),
    )
    try:
        _, report = run_pipeline(base, gw, pipeline)
    except KeyboardInterrupt:
        _stash_partial(args.out, args.report)
        return EXIT_FAILURE
    _emit(
        args,
        report.as_dict(),
        [
            f"{report.accepted}/{report.total} accepted "
            f"(rate {report.acceptance_rate:.3f}), "
            f"{report.dropped_duplicates} duplicates dropped",
            f"corpus written to {args.out}",
        ],
    )
    if report.acceptance_rate < args.min_acceptance:
        print(
            f"acceptance rate {report.acceptance_rate:.3f} below "
            f"--min-acceptance {args.min_acceptance}",
            file=sys.stderr,
        )
        return EXIT_FAILURE
    return EXIT_OK


def _cmd_validate(args, cfg) -> int:
    total = 0
    errors = []
    with open(args.infile, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                parse_corpus_line(line)
            except (ParseError, SchemaViolationError) as exc:
                errors.append((line_no, str(exc)))
    valid = total - len(errors)
    for line_no, message in errors:
        print(f"line {line_no}: {message}", file=sys.stderr)
    _emit(
        args,
        {
            "total": total,
            "valid": valid,
            "errors": [{"line": n, "error": m} for n, m in errors],
        },
        [f"{valid}/{total} valid"],
    )
    return EXIT_OK if not errors else EXIT_FAILURE


def _cmd_stats(args, cfg) -> int:
    records = load_corpus(args.infile)
    stats = compute_stats(records, top_n=args.top_n)
    lines = [
        f"records: {stats.record_count}",
        f"mean techniques (split): {stats.mean_techniques:.3f}",
        f"mean techniques (simple): {stats.mean_techniques_simple:.3f}",
    ]
    for k in sorted(stats.technique_count_histogram):
        lines.append(f"  k={k}: {stats.technique_count_histogram[k]}")
    for category, names in stats.top_techniques_per_category.items():
        shown = ", ".join(f"{name} ({count})" for name, count in names)
        lines.append(f"top {category.value}: {shown}")
    _emit(args, stats.as_dict(), lines)
    return EXIT_OK


def _cmd_emit_stages(args, cfg) -> int:
    records = load_corpus(args.infile)
    schedule = Schedule.THREE_STAGE if args.schedule == "three" else Schedule.TWO_STAGE
    target = (
        TargetSelection.ORIGINAL if args.target == "original" else TargetSelection.ANNOTATED
    )
    manifest = emit_schedule(
        records,
        schedule,
        args.out_dir,
        target_selection=target,
        epochs=args.epochs,
        system_prompt=args.system_prompt,
    )
    lines = [f"schedule {manifest.schedule.value} -> {args.out_dir}"]
    for stage in manifest.stages:
        lines.append(
            f"  {stage['file']}: {stage['examples']} examples, "
            f"{stage['skipped']} skipped"
        )
    _emit(args, manifest.as_dict(), lines)
    return EXIT_OK


def _cmd_judge(args, cfg) -> int:
    spec_items = load_benchmark_spec(args.benchmark, name=args.name)
    proofs = load_proof_source(args.proofs)
    judges = _require(
        _resolve(args.judges, "PROOFKIT_JUDGES", cfg, "judges"), "a judge list"
    )
    if isinstance(judges, str):
        judges = [j.strip() for j in judges.split(",") if j.strip()]
    gw = _gateway(args, cfg)
    try:
        report = run_benchmark(
            spec_items,
            proofs,
            judges,
            gw,
            max_in_flight=_resolve(
                args.max_in_flight, "PROOFKIT_MAX_IN_FLIGHT", cfg, "max_in_flight", 8, int
            ),
        )
    except KeyboardInterrupt:
        _stash_partial(args.out)
        return EXIT_FAILURE
    payload = report_to_dict(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit(
        args,
        payload,
        [
            f"{report.name}: {len(report.items)} items, "
            f"mean {report.mean_total:.4f}, max {report.max_total:.4f}, "
            f"mismatch rate {report.mismatch_rate:.4f}, flagged {report.flagged}",
        ]
        + ([f"report written to {args.out}"] if args.out else []),
    )
    if report.items and report.flagged == len(report.items):
        print("every item was flagged; no verdicts obtained", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _read_responses(path) -> list[str]:
    responses = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if isinstance(obj, str):
                responses.append(obj)
            elif isinstance(obj, dict) and isinstance(obj.get("response"), str):
                responses.append(obj["response"])
            else:
                raise ValueError(
                    f"{path}:{line_no}: expected a JSON string or "
                    '{"response": ...} object'
                )
    return responses


def _cmd_reward(args, cfg) -> int:
    question = Path(args.question_file).read_text(encoding="utf-8").strip()
    responses = _read_responses(args.responses_file)
    if not responses:
        raise ValueError(f"{args.responses_file} holds no responses")
    model = _require(
        _resolve(args.model, "PROOFKIT_VERIFIER_MODEL", cfg, "verifier_model"),
        "a verifier model id",
    )
    gw = _gateway(args, cfg)
    config = VerifierConfig(
        model=model,
        max_in_flight=_resolve(
            args.max_in_flight, "PROOFKIT_MAX_IN_FLIGHT", cfg, "max_in_flight", 8, int
        ),
    )
    group, scores = score_rollout_group("cli", question, responses, gw, config)
    lines = []
    for i, (reward, advantage, score) in enumerate(
        zip(group.rewards, group.advantages, scores)
    ):
        note = f"  FAILED: {score.failure_detail}" if score.failed else ""
        lines.append(f"[{i}] reward {reward:.4f}  advantage {advantage:+.4f}{note}")
    payload = {
        "rewards": list(group.rewards),
        "advantages": list(group.advantages),
        "failures": [
            {"index": i, "detail": s.failure_detail}
            for i, s in enumerate(scores)
            if s.failed
        ],
    }
    _emit(args, payload, lines)
    return EXIT_FAILURE if all(s.failed for s in scores) else EXIT_OK


def _spike_policy(args) -> SpikePolicy:
    return SpikePolicy(window=args.window, threshold=args.threshold)


def _cmd_entropy_trace(args, cfg) -> int:
    tokens = read_logprob_dump(args.infile)
    trace = annotate_spikes(trace_from_logprobs(tokens), _spike_policy(args))
    write_trace_csv(trace, args.out)
    _emit(
        args,
        {"positions": len(trace), "spikes": list(trace.spike_indices), "out": args.out},
        [f"{len(trace)} positions, {len(trace.spike_indices)} spikes -> {args.out}"],
    )
    return EXIT_OK


def _cmd_entropy_spikes(args, cfg) -> int:
    tokens = read_logprob_dump(args.infile)
    trace = annotate_spikes(trace_from_logprobs(tokens), _spike_policy(args))
    rows = [
        {"position": i, "token": trace.points[i].token, "entropy": trace.points[i].entropy}
        for i in trace.spike_indices
    ]
    _emit(
        args,
        {"spikes": rows},
        [f"{r['position']}\t{r['entropy']:.4f}\t{r['token']!r}" for r in rows]
        or ["no spikes"],
    )
    return EXIT_OK


def _cmd_entropy_check_bound(args, cfg) -> int:
    import string

    if args.alphabet_size < 2 or args.alphabet_size > 26:
        raise UsageError("--alphabet-size must be between 2 and 26")
    if not 0 < args.technique_symbols < args.alphabet_size:
        raise UsageError("--technique-symbols must leave at least one plain symbol")
    alphabet = list(string.ascii_lowercase[: args.alphabet_size])
    technique = alphabet[: args.technique_symbols]
    if args.seed is not None:
        model = random_capped_model(
            random.Random(args.seed), alphabet, technique, args.length, args.delta
        )
    else:
        technique_prob = (
            args.technique_prob if args.technique_prob is not None else args.delta / 2
        )
        model = uniform_capped_model(
            alphabet, technique, args.length, args.delta, technique_prob
        )
    started = time.monotonic()
    result = check_bound(model)
    elapsed = time.monotonic() - started
    ok = result.all_satisfied and result.marginals_ok and abs(result.total_probability - 1.0) <= 1e-9
    _emit(
        args,
        {
            "n_sequences": result.n_sequences,
            "all_satisfied": result.all_satisfied,
            "total_probability": result.total_probability,
            "max_ratio": result.max_ratio,
            "marginals_ok": result.marginals_ok,
            "violations": len(result.violations),
            "elapsed_seconds": elapsed,
        },
        [
            f"{result.n_sequences} sequences in {elapsed:.3f}s",
            f"bound satisfied: {result.all_satisfied} "
            f"(max probability/bound ratio {result.max_ratio:.6f})",
            f"total probability: {result.total_probability!r}",
            f"per-depth technique marginals under delta: {result.marginals_ok}",
        ],
    )
    return EXIT_OK if ok else EXIT_FAILURE


def _load_pool(path) -> list[JudgedOutput]:
    pool = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pool.append(
                    JudgedOutput(
                        item_id=obj["item_id"],
                        model_family=obj["model_family"],
                        benchmark=obj["benchmark"],
                        llm_total=float(obj["llm_total"]),
                        question=obj["question"],
                        response=obj["response"],
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad pool line: {exc}") from exc
    return pool


def _cmd_audit_sample(args, cfg) -> int:
    pool = _load_pool(args.pool)
    seed = args.seed if args.seed is not None else 0
    samples = stratified_sample(pool, args.per_stratum, seed)
    store = AuditStore(args.store)
    added = store.add_samples(samples)
    _emit(
        args,
        {"sampled": len(samples), "added": added, "seed": seed},
        [f"sampled {len(samples)}, added {added} new (seed {seed})"],
    )
    return EXIT_OK


def _cmd_audit_ingest(args, cfg) -> int:
    scores = [float(s) for s in args.scores.split(",")]
    store = AuditStore(args.store)
    sample = store.ingest_human_score(
        args.sample_id, args.reviewer, scores, replace_existing=args.replace
    )
    _emit(
        args,
        {
            "sample_id": sample.sample_id,
            "status": sample.status.value,
            "human_total": sample.human_total,
        },
        [f"{sample.sample_id}: {sample.status.value}, human total {sample.human_total:.4f}"],
    )
    return EXIT_OK


def _cmd_audit_report(args, cfg) -> int:
    store = AuditStore(args.store)
    report = calibration_report(store)
    lines = [f"{'bin':>10} {'n':>5} {'LLM':>7} {'human':>7} {'diff':>7}"]
    for row in report.rows:
        lines.append(
            f"{row.bin_label:>10} {row.count:>5} {row.mean_llm:>7.3f} "
            f"{row.mean_human:>7.3f} {row.difference:>+7.3f}"
        )
    corr = report.overall_correlation
    lines.append(
        f"total scored: {report.total_scored}, correlation: "
        + (f"{corr:.4f}" if corr is not None else "n/a")
    )
    _emit(args, report.as_dict(), lines)
    return EXIT_OK


def _cmd_serve(args, cfg) -> int:
    import uvicorn

    endpoint = _require(
        _resolve(args.endpoint, "PROOFKIT_ENDPOINT", cfg, "endpoint"), "an endpoint"
    )
    model = _require(
        _resolve(args.model, "PROOFKIT_VERIFIER_MODEL", cfg, "verifier_model"),
        "a verifier model id",
    )
    store = AuditStore(args.store)
    config = ServiceConfig(
        verifier_model=model,
        max_verifier_in_flight=_resolve(
            args.max_in_flight, "PROOFKIT_MAX_IN_FLIGHT", cfg, "max_in_flight", 8, int
        ),
        lease_seconds=args.lease_seconds,
        bearer_token=_resolve(
            args.bearer_token, "PROOFKIT_BEARER_TOKEN", cfg, "bearer_token"
        ),
    )
    app = create_app(config, ChatGateway(endpoint), store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _cmd_mock_llm(args, cfg) -> int:
    script = None
    if args.script:
        script = []
        with open(args.script, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                script.append(
                    ScriptedResponse(
                        text=obj.get("text", "ok"), status=int(obj.get("status", 200))
                    )
                )
    with MockLLMServer(script=script, host=args.host, port=args.port) as server:
        print(f"mock LLM listening on {server.url}", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--seed", type=int, help="seed for randomized steps")

    remote = argparse.ArgumentParser(add_help=False)
    remote.add_argument("--endpoint", help="chat-completion API base URL")
    remote.add_argument("--max-in-flight", type=int)

    parser = argparse.ArgumentParser(
        prog="proofkit",
        description="Corpus annotation, curriculum emission, verifier rewards, "
        "judging, entropy analysis, and the human-audit workflow.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("annotate", parents=[common, remote], help="annotate a base corpus")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--model")
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--min-acceptance", type=float, default=0.0)
    p.set_defaults(handler=_cmd_annotate)

    p = sub.add_parser("validate", parents=[common], help="re-parse a corpus file")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("stats", parents=[common], help="corpus technique statistics")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("emit-stages", parents=[common], help="write curriculum stage files")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--schedule", choices=["three", "two"], default="three")
    p.add_argument("--target", choices=["original", "annotated"], default="annotated")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--system-prompt")
    p.set_defaults(handler=_cmd_emit_stages)

    p = sub.add_parser("judge", parents=[common, remote], help="run a judged benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--proofs", required=True)
    p.add_argument("--judges", help="comma-separated judge model ids")
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_judge)

    p = sub.add_parser("reward", parents=[common, remote], help="score a rollout group")
    p.add_argument("--question-file", required=True)
    p.add_argument("--responses-file", required=True)
    p.add_argument("--model", help="verifier model id")
    p.set_defaults(handler=_cmd_reward)

    p = sub.add_parser("entropy", parents=[], help="token-entropy analysis")
    esub = p.add_subparsers(dest="entropy_command", metavar="subcommand")
    esub.required = True

    ep = esub.add_parser("trace", parents=[common], help="logprob dump -> trace CSV")
    ep.add_argument("--in", dest="infile", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--window", type=int, default=32)
    ep.add_argument("--threshold", type=float, default=2.0)
    ep.set_defaults(handler=_cmd_entropy_trace)

    ep = esub.add_parser("spikes", parents=[common], help="list detected spikes")
    ep.add_argument("--in", dest="infile", required=True)
    ep.add_argument("--window", type=int, default=32)
    ep.add_argument("--threshold", type=float, default=2.0)
    ep.set_defaults(handler=_cmd_entropy_spikes)

    ep = esub.add_parser(
        "check-bound", parents=[common], help="exhaustive technique-probability bound check"
    )
    ep.add_argument("--alphabet-size", type=int, default=6)
    ep.add_argument("--length", type=int, default=8)
    ep.add_argument("--delta", type=float, default=0.1)
    ep.add_argument("--technique-symbols", type=int, default=2)
    ep.add_argument("--technique-prob", type=float)
    ep.set_defaults(handler=_cmd_entropy_check_bound)

    p = sub.add_parser("audit", parents=[], help="human audit store operations")
    asub = p.add_subparsers(dest="audit_command", metavar="subcommand")
    asub.required = True

    ap = asub.add_parser("sample", parents=[common], help="stratified-sample a judged pool")
    ap.add_argument("--pool", required=True)
    ap.add_argument("--store", required=True)
    ap.add_argument("--per-stratum", type=int, default=2)
    ap.set_defaults(handler=_cmd_audit_sample)

    ap = asub.add_parser("ingest", parents=[common], help="record one human score")
    ap.add_argument("--store", required=True)
    ap.add_argument("--sample-id", required=True)
    ap.add_argument("--reviewer", required=True)
    ap.add_argument("--scores", required=True, help="insight,validity,completeness,clarity")
    ap.add_argument("--replace", action="store_true")
    ap.set_defaults(handler=_cmd_audit_ingest)

    ap = asub.add_parser("report", parents=[common], help="calibration table")
    ap.add_argument("--store", required=True)
    ap.set_defaults(handler=_cmd_audit_report)

    p = sub.add_parser("serve", parents=[common, remote], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8421)
    p.add_argument("--store", required=True)
    p.add_argument("--model", help="verifier model id")
    p.add_argument("--bearer-token")
    p.add_argument("--lease-seconds", type=float, default=300.0)
    p.set_defaults(handler=_cmd_serve)

    p = sub.add_parser("mock-llm", parents=[common], help="run the scripted mock server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--script", help="JSONL of scripted replies")
    p.set_defaults(handler=_cmd_mock_llm)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else int(exc.code)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _load_config_file(
            args.config if args.config is not None else os.environ.get("PROOFKIT_CONFIG")
        )
        if args.verbose:
            print(f"settings file: {json.dumps(cfg, sort_keys=True)}", file=sys.stderr)
        return args.handler(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GatewayError, NoScoredSamplesError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(dispatch())
