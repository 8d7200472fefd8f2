"""Command line: build-dataset, discover, evaluate, report, selfcheck.

Exit codes: 0 success, 1 config error, 2 partial (some records failed), 3 fatal.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
import time
from pathlib import Path
from typing import Sequence

from .anchors import VocabTokenizer
from .clients import EvalCache, HTTPChatClient, ReplayChatClient, RetryPolicy
from .config import RunConfig, load_config
from .dataset import (
    QuestionRecord,
    collect_all,
    generate_domains,
    generate_questions,
    load_dataset,
    question_id,
    save_dataset,
)
from .decoder import Mode, MockLanguageModel
from .errors import BoundProbeError, ClientFailure, ConfigError, ConfigInvalid, EmptyInput, NoEntitiesFound
from .linalg import EmbeddingMatrix
from .pipeline import (
    DiscoveryRecord,
    build_plan,
    discover_question,
    evaluate_answers,
    load_discoveries,
    save_discoveries,
    score_discovery,
)
from .report import build_summary, write_report
from .verification import EvaluationPair, OverrideStore, detect_boundary_admission

log = logging.getLogger("boundprobe")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2, 3


class Partial(Exception):
    """Some records failed; outputs were still written."""


# wiring


def make_clients(cfg: RunConfig) -> dict:
    """Target, self-evaluation and RAG clients; replay transcripts take precedence."""
    if cfg.replay_path:
        if not Path(cfg.replay_path).exists():
            raise ConfigError(f"replay transcript not found: {cfg.replay_path}")
        base = ReplayChatClient.from_file(cfg.replay_path, identity="target")
        return {"target": base, "self": base.for_identity("self"), "rag": base.for_identity("rag")}
    kw = dict(url=cfg.api_url, api_key=cfg.api_key, rate_limit=cfg.rate_limit)
    try:
        return {
            "target": HTTPChatClient(cfg.target_model, **kw),
            "self": HTTPChatClient(cfg.self_eval_model, **kw),
            "rag": HTTPChatClient(cfg.rag_eval_model, **kw),
        }
    except ClientFailure as exc:
        raise ConfigError(str(exc)) from exc


def load_model(cfg: RunConfig):
    """The auxiliary model and its tokenizer, from a model directory or a remote command."""
    if cfg.model_dir:
        d = Path(cfg.model_dir)
        meta = json.loads((d / "model.json").read_text())
        vocab = Path(cfg.vocab_path) if cfg.vocab_path else d / "vocab.txt"
        tok = VocabTokenizer.from_file(vocab, unk_token=meta.get("unk", cfg.unk_token), eos_token=meta.get("eos", cfg.eos_token))
        return MockLanguageModel.load(d), tok
    if cfg.model_command:
        if not (cfg.embedding_path and cfg.vocab_path):
            raise ConfigError("model_command needs embedding_path and vocab_path")
        from .remote import RemoteLanguageModel

        tok = VocabTokenizer.from_file(cfg.vocab_path, unk_token=cfg.unk_token, eos_token=cfg.eos_token)
        E = EmbeddingMatrix.load(cfg.embedding_path)
        return RemoteLanguageModel.spawn(shlex.split(cfg.model_command), E, tok.eos_id), tok
    raise ConfigError("set model_dir or model_command for the auxiliary model")


# subcommands


def cmd_build_dataset(cfg: RunConfig) -> list[QuestionRecord]:
    clients = make_clients(cfg)
    target = clients["target"]
    path = Path(cfg.dataset_path)
    coll = cfg.collection()
    if path.exists():
        records = load_dataset(path)
        log.info("resuming %d records from %s", len(records), path)
    else:
        domains = cfg.domains or generate_domains(target)
        if cfg.max_domains:
            domains = domains[: cfg.max_domains]
        records, seen = [], set()
        for domain in domains:
            questions = generate_questions(target, domain, coll)
            if cfg.max_questions_per_domain:
                questions = questions[: cfg.max_questions_per_domain]
            for q in questions:
                qid = question_id(domain, q)
                if qid not in seen:
                    seen.add(qid)
                    records.append(QuestionRecord(qid, domain, q))
        if not records:
            raise EmptyInput("no questions generated")
    settings = cfg.public_dict()
    try:
        collect_all(target, records, coll, parallelism=cfg.parallelism)
    finally:
        # also flushes partial progress on interrupt
        for r in records:
            if r.complete:
                try:
                    r.finalize(cfg.common_fraction)
                except NoEntitiesFound:
                    pass
        save_dataset(path, records, settings)
    missing = [r.id for r in records if not r.complete]
    if missing:
        raise Partial(f"{len(missing)} records incomplete; rerun to resume: {', '.join(missing)}")
    return records


def cmd_discover(cfg: RunConfig, out: str | None = None) -> list[DiscoveryRecord]:
    records = load_dataset(cfg.dataset_path)
    model, tok = load_model(cfg)
    sampler = cfg.sampler()
    flags = dict(
        include_space_variant=cfg.include_space_variant,
        include_case_variants=cfg.include_case_variants,
        strip_leading_articles=cfg.strip_leading_articles,
    )
    results: list[DiscoveryRecord] = []
    try:
        for rec in records:
            if not rec.entities:
                continue
            try:
                plan = build_plan(model, tok, rec.entities, **flags)
                results.append(discover_question(model, tok, rec, sampler, cfg.discovery_prompt, plan, cfg.aor_unit))
            except BoundProbeError as exc:
                log.warning("%s: discovery failed: %s", rec.id, exc)
                results.append(DiscoveryRecord(rec.id, sampler.mode.value, sampler.lam, sampler.seed, "", [], [], error=str(exc)))
    finally:
        save_discoveries(out or cfg.discovery_path, results)
        if hasattr(model, "close"):
            model.close()
    failed = [d.question_id for d in results if d.error]
    if failed:
        raise Partial(f"discovery failed for {len(failed)} questions")
    return results


def _settings(cfg: RunConfig) -> dict:
    keep = ("mode", "lam", "top_p", "temperature", "repetition_penalty", "max_tokens", "seed", "rounds",
            "common_fraction", "em_mode", "aor_unit")
    d = cfg.public_dict()
    return {k: d[k] for k in keep}


def cmd_evaluate(cfg: RunConfig, discovery: str | None = None) -> dict:
    records = load_dataset(cfg.dataset_path)
    disc_path = Path(discovery or cfg.discovery_path)
    discoveries = load_discoveries(disc_path) if disc_path.exists() else []
    clients = make_clients(cfg)
    cache = EvalCache(cfg.cache_path)
    outcome = evaluate_answers(
        records,
        discoveries,
        clients["self"],
        clients["rag"],
        cache=cache,
        overrides=OverrideStore.load(cfg.overrides_path),
        retry=RetryPolicy(cfg.retry_attempts, cfg.retry_base_delay),
        em_mode=cfg.em_mode,
        aor_unit=cfg.aor_unit,
        clock=time.time,
    )
    admissions = {r.id: any(detect_boundary_admission(t, cfg.admission_keywords) for t in r.rounds) for r in records}
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.jsonl").write_text("".join(json.dumps(p.to_dict(), sort_keys=True) + "\n" for p in outcome.pairs), encoding="utf-8")
    evaluation = {
        "per_question": {k: v.to_dict() for k, v in sorted(outcome.per_question.items())},
        "failures": outcome.failures,
        "admissions": admissions,
    }
    (out / "evaluation.json").write_text(json.dumps(evaluation, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    summary = build_summary(outcome.pairs, outcome.metrics, outcome.per_question, outcome.failures, _settings(cfg), admissions)
    write_report(summary, out, figures=cfg.figures)
    if outcome.failures:
        raise Partial(f"{len(outcome.failures)} answers could not be evaluated")
    return summary


def _load_pairs(path: Path) -> list[EvaluationPair]:
    return [EvaluationPair.from_dict(json.loads(x)) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]


def cmd_report(cfg: RunConfig, verdicts: str | None = None, compare: Sequence[str] = ()) -> dict:
    """Re-render the report from saved verdicts, optionally comparing discovery runs."""
    from .metrics import MetricReport

    out = Path(cfg.report_dir)
    pairs = _load_pairs(Path(verdicts) if verdicts else out / "verdicts.jsonl")
    ev_path = out / "evaluation.json"
    evaluation = json.loads(ev_path.read_text()) if ev_path.exists() else {"per_question": {}, "failures": [], "admissions": {}}
    per_question = {k: MetricReport(v["em"], v["f1"], v["aor"], tuple(v["bleu"])) for k, v in evaluation["per_question"].items()}
    metrics = MetricReport.mean(list(per_question.values())) if per_question else None
    comparison = None
    if compare:
        records = {r.id: r for r in load_dataset(cfg.dataset_path)}
        comparison = {}
        for item in compare:
            name, _, path = item.partition("=")
            if not path:
                raise ConfigError(f"--compare expects NAME=PATH, got {item!r}")
            scores = [
                score_discovery(records[d.question_id], d, pairs, cfg.em_mode, cfg.aor_unit)
                for d in load_discoveries(path)
                if d.entities and d.question_id in records
            ]
            if scores:
                comparison[name] = MetricReport.mean(scores).to_dict()
    summary = build_summary(pairs, metrics, per_question, evaluation["failures"], _settings(cfg), evaluation["admissions"])
    write_report(summary, out, figures=cfg.figures, comparison=comparison)
    return summary


def run_selfcheck(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Quick numerical invariants; each row is (name, passed, detail)."""
    import numpy as np

    from .decoder import SamplerConfig, decode
    from .fixtures import build_fixture
    from .linalg import adjust_logits, build_answer_mass, estimate_semantics, project_suppression
    from .metrics import normalize_answer

    rng = np.random.default_rng(seed)
    rows = []
    worst_idem = worst_sym = worst_normal = 0.0
    for _ in range(10):
        E = EmbeddingMatrix(rng.standard_normal((200, 16)))
        P = E.data @ np.linalg.pinv(E.data)
        worst_idem = max(worst_idem, float(np.abs(P @ P - P).max()))
        worst_sym = max(worst_sym, float(np.abs(P - P.T).max()))
        mass = build_answer_mass(rng.choice(200, 5, replace=False).tolist(), 200)
        dx = estimate_semantics(E, mass)
        worst_normal = max(worst_normal, float(np.abs(E.data.T @ (mass.dense() - E.data @ dx)).max()))
    rows.append(("projector idempotent and symmetric", max(worst_idem, worst_sym) <= 1e-8, f"{max(worst_idem, worst_sym):.2e}"))
    rows.append(("normal equations", worst_normal <= 1e-8, f"{worst_normal:.2e}"))

    E = EmbeddingMatrix(rng.standard_normal((64, 8)))
    mass = build_answer_mass([1, 5, 9], 64)
    dy = project_suppression(E, estimate_semantics(E, mass))
    y1 = rng.standard_normal(64)
    err = max(float(np.abs(adjust_logits(y1, dy, lam) + lam * dy - y1).max()) for lam in (0, 60, 70, 80))
    rows.append(("logit identity", err <= 1e-12, f"{err:.2e}"))
    rows.append(("answer mass sums to one", abs(mass.dense().sum() - 1) <= 1e-12, f"{mass.dense().sum():.15f}"))

    model, tok = build_fixture()
    prompt = tok.encode("Tell me more:\n- ")
    plan = build_plan(model, tok, ["kangaroo", "koala"])
    base = decode(model, prompt, None, SamplerConfig(mode=Mode.PROMPT, max_tokens=24, seed=seed))
    zero = decode(model, prompt, plan, SamplerConfig(lam=0, max_tokens=24, seed=seed))
    rows.append(("zero lambda decode equals prompt decode", base.tokens == zero.tokens, f"{len(base.tokens)} tokens"))

    words = ["Carrots.", "Boxes", "mice", "status", "Berries ", "geese"]
    idem = all(normalize_answer(normalize_answer(w)) == normalize_answer(w) for w in words)
    rows.append(("normalization idempotent", idem, ", ".join(normalize_answer(w) for w in words)))
    return rows


# argument parsing


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = None if defaults else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=d, help="sampling seed")
    p.add_argument("--replay", default=d, metavar="TRANSCRIPT", help="serve chat replies from a recorded transcript")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=d, help="discovery decoding mode")
    p.add_argument("-v", "--verbose", action="store_true", default=False if defaults else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boundprobe", parents=[_global_flags(True)],
                                     description="Probe a language model's knowledge boundary on open-ended list questions.")
    common = _global_flags(False)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-dataset", parents=[common], help="generate domains and questions, collect answers")
    p = sub.add_parser("discover", parents=[common], help="decode new answers with the auxiliary model")
    p.add_argument("--lambda", dest="lam", type=float, help="suppression strength")
    p.add_argument("--out", help="discovery output file (defaults to discovery_path)")
    p = sub.add_parser("evaluate", parents=[common], help="self- and RAG-evaluate answers, write the report")
    p.add_argument("--discovery", help="discovery file (defaults to discovery_path)")
    p = sub.add_parser("report", parents=[common], help="re-render the report from saved verdicts")
    p.add_argument("--verdicts", help="verdicts JSON-lines file (defaults to REPORT_DIR/verdicts.jsonl)")
    p.add_argument("--compare", nargs="*", default=[], metavar="NAME=PATH", help="discovery files to compare")
    sub.add_parser("selfcheck", parents=[common], help="run the numerical invariant suite")
    p = sub.add_parser("make-fixture", parents=[common], help="write the demo model, transcript and config")
    p.add_argument("directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-fixture":
            from .fixtures import save_fixture

            paths = save_fixture(args.directory)
            print(f"wrote fixture; try: boundprobe --config {paths['config']} build-dataset")
            return EXIT_OK
        if args.command == "selfcheck":
            rows = run_selfcheck(args.seed or 0)
            for name, ok, detail in rows:
                print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
            return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_FATAL
        cfg = load_config(args.config, seed=args.seed, replay_path=args.replay, mode=args.mode,
                          lam=getattr(args, "lam", None))
        if args.command == "build-dataset":
            recs = cmd_build_dataset(cfg)
            print(f"{len(recs)} questions written to {cfg.dataset_path}")
        elif args.command == "discover":
            res = cmd_discover(cfg, args.out)
            print(f"{sum(len(d.novel) for d in res)} new answers over {len(res)} questions")
        elif args.command == "evaluate":
            s = cmd_evaluate(cfg, args.discovery)
            print(f"{s['n_pairs']} answers evaluated; report in {cfg.report_dir}")
        elif args.command == "report":
            cmd_report(cfg, args.verdicts, args.compare)
            print(f"report written to {cfg.report_dir}")
    except (ConfigError, ConfigInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Partial as exc:
        print(f"partial: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except KeyboardInterrupt:
        print("interrupted; progress saved", file=sys.stderr)
        return EXIT_PARTIAL
    except (BoundProbeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
