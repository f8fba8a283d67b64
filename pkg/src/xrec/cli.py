"""Experiment harness: synth, prepare, train, generate, evaluate, judge."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import backbone as bb
from . import judge as judge_mod
from . import metrics as metrics_mod
from .bpe import BpeModel, train_bpe
from .config import ExperimentConfig, load_config
from .corpus import ingest, load_split, make_splits, save_split
from .pipeline import Verbalizer, infer
from .predictions import PredictionRow, read_predictions, write_predictions
from .synthetic import generate_records, write_records
from .trainer import fit


def _require_absent(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} already exists; pass --force to overwrite")


def _require_file(path: str, hint: str) -> None:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{hint} not found: {path}")


def _split_path(cfg: ExperimentConfig, k: int) -> str:
    return os.path.join(cfg.workdir, "splits", f"split_{k}.json")


def _bpe_path(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.workdir, "bpe.json")


def _variant_suffix(ablate: bool) -> str:
    return "_masked" if ablate else ""


def _checkpoint_path(cfg: ExperimentConfig, k: int, ablate: bool) -> str:
    return os.path.join(cfg.workdir, "checkpoints", f"split_{k}{_variant_suffix(ablate)}.ckpt")


def _predictions_path(cfg: ExperimentConfig, k: int, ablate: bool) -> str:
    return os.path.join(cfg.workdir, "predictions", f"split_{k}{_variant_suffix(ablate)}.jsonl")


def _report_path(cfg: ExperimentConfig, k: int, ablate: bool) -> str:
    return os.path.join(cfg.workdir, "reports", f"metrics_split_{k}{_variant_suffix(ablate)}.json")


def cmd_synth(cfg: ExperimentConfig, force: bool) -> None:
    _require_absent(cfg.data_path, force)
    os.makedirs(os.path.dirname(cfg.data_path) or ".", exist_ok=True)
    records = generate_records(
        n_users=cfg.synth.n_users,
        n_items=cfg.synth.n_items,
        n_records=cfg.synth.n_records,
        seed=cfg.seed,
    )
    write_records(records, cfg.data_path)
    print(f"wrote {len(records)} synthetic records to {cfg.data_path}")


def cmd_prepare(cfg: ExperimentConfig, force: bool) -> None:
    _require_file(cfg.data_path, "data file")
    records = ingest(cfg.data_path)

    split_dir = os.path.join(cfg.workdir, "splits")
    os.makedirs(split_dir, exist_ok=True)
    splits = make_splits(len(records), cfg.seed, repeats=cfg.n_splits)
    for s in splits:
        path = _split_path(cfg, s.repeat_id)
        _require_absent(path, force)
        save_split(s, path)

    bpe_path = _bpe_path(cfg)
    _require_absent(bpe_path, force)
    texts = [r.explanation for r in records]
    texts += [f for r in records for f in r.features]
    texts += cfg.prompts.training_texts()
    model = train_bpe(texts, cfg.vocab_size)
    model.save(bpe_path)
    print(f"wrote {cfg.n_splits} split manifests and BPE model ({model.vocab_size} tokens) to {cfg.workdir}")


def _load_prepared(cfg: ExperimentConfig, split_id: int):
    _require_file(cfg.data_path, "data file")
    _require_file(_bpe_path(cfg), "BPE model (run prepare first)")
    _require_file(_split_path(cfg, split_id), f"split manifest {split_id} (run prepare first)")
    records = ingest(cfg.data_path)
    bpe = BpeModel.load(_bpe_path(cfg))
    split = load_split(_split_path(cfg, split_id))
    return records, bpe, split


def cmd_train(cfg: ExperimentConfig, split_id: int, ablate_rating: bool, force: bool) -> None:
    records, bpe, split = _load_prepared(cfg, split_id)
    ckpt_path = _checkpoint_path(cfg, split_id, ablate_rating)
    _require_absent(ckpt_path, force)

    trainer_cfg = replace(cfg.trainer, seed=cfg.seed)
    model, log = fit(
        records, split, bpe, cfg.prompts, cfg.backbone, trainer_cfg, mask_rating=ablate_rating
    )

    os.makedirs(os.path.dirname(ckpt_path), exist_ok=True)
    bb.save_checkpoint(model, ckpt_path, vocab_hash=bpe.content_hash())
    log_dir = os.path.join(cfg.workdir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, f"train_split_{split_id}{_variant_suffix(ablate_rating)}.jsonl")
    with open(log_path, "w", encoding="utf-8") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    best = min(e["val_loss"] for e in log)
    print(f"trained split {split_id} (masked={ablate_rating}); best val loss {best:.4f}; saved {ckpt_path}")


def cmd_generate(cfg: ExperimentConfig, split_id: int, ablate_rating: bool, force: bool) -> None:
    records, bpe, split = _load_prepared(cfg, split_id)
    ckpt_path = _checkpoint_path(cfg, split_id, ablate_rating)
    _require_file(ckpt_path, "checkpoint (run train first)")
    out_path = _predictions_path(cfg, split_id, ablate_rating)
    _require_absent(out_path, force)

    model = bb.load_checkpoint(ckpt_path, expected_vocab_hash=bpe.content_hash())
    model.eval()
    verbalizer = Verbalizer(bpe)
    rows = []
    for i in split.test:
        rec = records[i]
        result = infer(
            model,
            bpe,
            verbalizer,
            cfg.prompts,
            rec.user_id,
            rec.item_id,
            max_len=cfg.max_explanation_len,
            mask_rating=ablate_rating,
        )
        rows.append(
            PredictionRow(
                user=rec.user_id,
                item=rec.item_id,
                rating_true=rec.rating,
                rating_pred=result.score,
                explanation_true=rec.explanation,
                explanation_pred=result.explanation_text,
                features=rec.features,
            )
        )
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    write_predictions(rows, out_path)
    print(f"wrote {len(rows)} predictions to {out_path}")


def cmd_evaluate(cfg: ExperimentConfig, split_id: int | None, ablate_rating: bool, force: bool) -> None:
    split_ids = [split_id] if split_id is not None else list(range(cfg.n_splits))
    reports = []
    os.makedirs(os.path.join(cfg.workdir, "reports"), exist_ok=True)
    for k in split_ids:
        pred_path = _predictions_path(cfg, k, ablate_rating)
        if split_id is None and not os.path.exists(pred_path):
            continue
        _require_file(pred_path, "prediction file (run generate first)")
        rows = read_predictions(pred_path)
        report = metrics_mod.evaluate_predictions(rows)
        path = _report_path(cfg, k, ablate_rating)
        _require_absent(path, force)
        report.to_json(path)
        reports.append(report)
        print(f"split {k}: rmse={report.rmse:.4f} mae={report.mae:.4f} bleu1={report.bleu1:.2f} fmr={report.fmr:.2f}")
    if not reports:
        raise FileNotFoundError("no prediction files found to evaluate")
    if len(reports) > 1:
        mean = metrics_mod.mean_report(reports)
        mean_path = os.path.join(
            cfg.workdir, "reports", f"metrics_mean{_variant_suffix(ablate_rating)}.json"
        )
        _require_absent(mean_path, force)
        mean.to_json(mean_path)
        print(f"mean over {len(reports)} splits: rmse={mean.rmse:.4f} bleu1={mean.bleu1:.2f} usr={mean.usr:.2f}")


def _build_oracle(cfg: ExperimentConfig):
    j = cfg.judge
    if j.kind == "lexicon":
        lexicon = judge_mod.load_lexicon(j.lexicon_path)
        return judge_mod.LexiconOracle(lexicon)
    if j.kind == "remote_classifier":
        if not j.endpoint:
            raise ValueError("remote_classifier judge needs judge.endpoint in the config")
        return judge_mod.RemoteClassifierOracle(j.endpoint, timeout=j.timeout, max_retries=j.max_retries)
    if not j.endpoint or not j.model:
        raise ValueError("llm_judge needs judge.endpoint and judge.model in the config")
    cache = judge_mod.JudgeCache(os.path.join(cfg.workdir, "judge_cache.jsonl"))
    return judge_mod.LlmJudgeOracle(
        j.endpoint,
        j.model,
        api_key_env=j.api_key_env,
        timeout=j.timeout,
        max_retries=j.max_retries,
        cache=cache,
    )


def cmd_judge(cfg: ExperimentConfig, split_id: int, ablate_rating: bool, force: bool) -> None:
    pred_path = _predictions_path(cfg, split_id, ablate_rating)
    _require_file(pred_path, "prediction file (run generate first)")
    rows = read_predictions(pred_path)
    oracle = _build_oracle(cfg)

    excluded = 0
    if isinstance(oracle, judge_mod.LlmJudgeOracle):
        verdicts = judge_mod.judge_sample(rows, oracle, cfg.judge.sample_size, cfg.seed)
        rate, excluded = judge_mod.rate_from_verdicts(verdicts)
        n_scored = len(verdicts) - excluded
    else:
        rate = judge_mod.coherence_rate(rows, oracle)
        n_scored = len(rows)

    out = {
        "kind": cfg.judge.kind,
        "coherence_rate": rate,
        "n_scored": n_scored,
        "n_excluded": excluded,
        "split": split_id,
        "masked": ablate_rating,
    }
    os.makedirs(os.path.join(cfg.workdir, "reports"), exist_ok=True)
    out_path = os.path.join(
        cfg.workdir, "reports", f"coherence_split_{split_id}{_variant_suffix(ablate_rating)}.json"
    )
    _require_absent(out_path, force)
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=2, sort_keys=True)

    report_path = _report_path(cfg, split_id, ablate_rating)
    if os.path.exists(report_path):
        report = metrics_mod.MetricsReport.from_json(report_path)
        report.coherence_rate = rate
        report.to_json(report_path)
    if excluded:
        print(f"warning: {excluded} judge replies were unparseable and excluded")
    print(f"coherence ({cfg.judge.kind}) split {split_id} (masked={ablate_rating}): {rate:.1f}%")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xrec",
        description="Train and evaluate a rating-coherent explainable recommender.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, split=False, ablate=False):
        p.add_argument("--config", default=None, help="YAML config; defaults used when omitted")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if split:
            p.add_argument("--split", type=int, default=0, help="split id (default 0)")
        if ablate:
            p.add_argument(
                "--ablate-rating",
                action="store_true",
                help="mask the rating slot during generation (ablation variant)",
            )

    common(sub.add_parser("synth", help="generate the bundled synthetic dataset"))
    common(sub.add_parser("prepare", help="write split manifests and train the BPE model"))
    common(sub.add_parser("train", help="train one split"), split=True, ablate=True)
    common(sub.add_parser("generate", help="write test-set predictions"), split=True, ablate=True)
    p_eval = sub.add_parser("evaluate", help="score prediction files")
    common(p_eval, ablate=True)
    p_eval.add_argument("--split", type=int, default=None, help="one split id; default: all available")
    common(sub.add_parser("judge", help="judge rating-explanation coherence"), split=True, ablate=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        ablate = getattr(args, "ablate_rating", False)
        if args.command == "synth":
            cmd_synth(cfg, args.force)
        elif args.command == "prepare":
            cmd_prepare(cfg, args.force)
        elif args.command == "train":
            cmd_train(cfg, args.split, ablate, args.force)
        elif args.command == "generate":
            cmd_generate(cfg, args.split, ablate, args.force)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.split, ablate, args.force)
        elif args.command == "judge":
            cmd_judge(cfg, args.split, ablate, args.force)
        else:  # pragma: no cover - argparse enforces choices
            raise ValueError(f"unknown command {args.command}")
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
