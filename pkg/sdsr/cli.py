# Copyright 2026 British Broadcasting Corporation
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""The sdsr command line.

    sdsr gen-corpus --config run.json --out corpus/
    sdsr train --config run.json --corpus corpus/ --stage 1 --out stage1.sdsr
    sdsr train --config run.json --corpus corpus/ --stage 2 --init stage1.sdsr --out stage2.sdsr
    sdsr stream --config run.json --checkpoint stage2.sdsr --corpus corpus/ --input utt0060 --k 10 --out runs/k10
    sdsr report runs/k1 runs/k10 runs/k20 --out report/

Exit status is 0 on success, 2 for a configuration or usage error and 1 for any other failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from collections import OrderedDict
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig, resolve_seed, SEED_ENV_VAR
from .corpus import Corpus, DYSARTHRIC, NORMAL, VARIANTS, gen_corpus, load_corpus, save_corpus
from .exceptions import ConfigError, ContractError, SdsrError
from .metrics import token_error_rate
from .numerics import load_tensors, save_tensors
from .pipeline import ModelBundle, StreamResult, StreamSession, run_streaming
from .timing import Timestamp
from .training import build_models, stage1_train, stage2_finetune, write_train_log, evaluate_corpus

__all__ = ["main", "build_parser", "cmd_gen_corpus", "cmd_train", "cmd_stream", "cmd_report"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

REPORT_FIELDS = ("run", "k", "seed", "chunk_size", "first_response_s", "rtf", "token_error_rate", "code_accuracy",
                 "params", "flops_per_frame")
SUMMARY_FIELDS = ("k", "runs", "first_response_s", "rtf", "token_error_rate", "code_accuracy", "params",
                  "flops_per_frame")


def _load_config(path: Optional[str]) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _write_json(path: str, data: Any) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_gen_corpus(config_path: Optional[str], out_dir: str, seed: Optional[int] = None) -> Corpus:
    cfg = _load_config(config_path)
    spec = replace(cfg.corpus, seed=resolve_seed(seed, cfg.corpus.seed))
    corpus = gen_corpus(spec, cfg.quantizer, cfg.pipeline.frame_hop)
    save_corpus(corpus, out_dir)
    return corpus


def cmd_train(config_path: Optional[str], corpus_dir: str, stage: int, out_path: str,
              init_path: Optional[str] = None, seed: Optional[int] = None) -> ModelBundle:
    """Train one stage and write the checkpoint and its log CSV, `<out>.log.csv`

    :raises ContractError: if stage 2 is asked for without a stage 1 checkpoint
    """
    cfg = _load_config(config_path)
    seed = resolve_seed(seed, cfg.seed)
    corpus = load_corpus(corpus_dir)
    train_cfg = replace(cfg.train, stage=stage)
    if stage == 1:
        bundle = build_models(cfg, corpus.codebook, seed)
        result = stage1_train(bundle, corpus.variant(NORMAL, held_out=False), train_cfg, seed)
    else:
        if init_path is None:
            raise ContractError("stage 2 fine-tunes a stage 1 checkpoint; pass --init")
        bundle = ModelBundle.load(init_path, cfg)
        result = stage2_finetune(bundle, corpus, train_cfg, seed)
    bundle.save(out_path)
    write_train_log(result.log, os.path.splitext(out_path)[0] + ".log.csv")
    if logger.isEnabledFor(logging.INFO):
        for variant, summary in evaluate_corpus(bundle, corpus, cfg.pipeline.k).items():
            logger.info("stage %d %s held-out: %r", stage, variant, summary)
    return bundle


def _stream_input(input_ref: str, corpus_dir: Optional[str], variant: str) -> Dict[str, Any]:
    if os.path.isfile(input_ref):
        records = load_tensors(input_ref)
        if "features" not in records:
            raise ContractError("{} has no 'features' record".format(input_ref))
        out: Dict[str, Any] = {"features": records["features"], "tokens": None, "codes": None}
        if "tokens" in records:
            out["tokens"] = [int(t) for t in records["tokens"]]
        if "codes" in records:
            out["codes"] = [int(c) for c in records["codes"]]
        return out
    if corpus_dir is None:
        raise ContractError("{!r} is not a file; pass --corpus to stream an utterance by id".format(input_ref))
    try:
        utt = load_corpus(corpus_dir).get(input_ref, variant)
    except KeyError as e:
        raise ContractError(str(e))
    return {"features": utt.features, "tokens": list(utt.tokens), "codes": [int(c) for c in utt.codes]}


def cmd_stream(config_path: Optional[str], checkpoint: str, input_ref: str, out_dir: str,
               k: Optional[int] = None, chunk_size: Optional[int] = None, clock: Optional[str] = None,
               sentence_level: bool = False, corpus_dir: Optional[str] = None, variant: str = DYSARTHRIC,
               seed: Optional[int] = None) -> StreamResult:
    """Stream one utterance and write codes.json, output.sdsr, latency.json, latency.csv and run.json"""
    cfg = _load_config(config_path)
    changes: Dict[str, Any] = {}
    if k is not None:
        changes["k"] = k
    if chunk_size is not None:
        changes["chunk_size"] = chunk_size
    if clock is not None:
        changes["clock"] = clock
    if sentence_level:
        changes["sentence_level"] = True
    pipeline_cfg = replace(cfg.pipeline, **changes)
    cfg = replace(cfg, pipeline=pipeline_cfg)

    data = _stream_input(input_ref, corpus_dir, variant)
    started = Timestamp.get_wall_time()
    session = StreamSession.from_checkpoint(checkpoint, cfg)
    result = run_streaming(session, data["features"])

    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "codes.json"), {"codes": result.codes, "tokens": result.tokens})
    save_tensors(os.path.join(out_dir, "output.sdsr"), {"features": np.concatenate(result.chunks)})
    _write_json(os.path.join(out_dir, "latency.json"), result.report.to_json())
    with open(os.path.join(out_dir, "latency.csv"), "w") as f:
        f.write(result.report.to_csv())

    run: Dict[str, Any] = OrderedDict([
        ("input", input_ref),
        ("variant", None if os.path.isfile(input_ref) else variant),
        ("seed", resolve_seed(seed, cfg.seed)),
        ("k", None if pipeline_cfg.sentence_level else pipeline_cfg.k),
        ("sentence_level", pipeline_cfg.sentence_level),
        ("chunk_size", pipeline_cfg.chunk_size),
        ("clock", pipeline_cfg.clock),
        ("num_frames", int(np.asarray(data["features"]).shape[0])),
        ("token_error_rate", None if data["tokens"] is None else token_error_rate(result.tokens, data["tokens"])),
        ("code_accuracy", None if data["codes"] is None else
            float(np.mean(np.asarray(result.codes) == np.asarray(data["codes"])))),
    ])
    if pipeline_cfg.clock == "wall":
        run["started_utc"] = started.to_iso8601_utc()
    _write_json(os.path.join(out_dir, "run.json"), run)
    return result


def _read_run(run_dir: str) -> Dict[str, Any]:
    try:
        with open(os.path.join(run_dir, "run.json")) as f:
            run = json.load(f)
        with open(os.path.join(run_dir, "latency.json")) as f:
            latency = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ContractError("{} is not a stream run directory: {}".format(run_dir, e))
    row: Dict[str, Any] = {"run": run_dir}
    for key in ("k", "seed", "chunk_size", "token_error_rate", "code_accuracy"):
        row[key] = run.get(key)
    for key in ("first_response_s", "rtf", "params", "flops_per_frame"):
        row[key] = latency[key]
    return row


def _k_key(k: Optional[int]) -> float:
    return float("inf") if k is None else float(k)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _format(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return "{:.4f}".format(v)
    return str(v)


def cmd_report(run_dirs: Sequence[str], out_dir: str) -> List[Dict[str, Any]]:
    """Write report.csv, one row per run sorted by (k, seed), and summary.csv with the per-k means.

    Sentence-level runs have no k and sort last. Returns the summary rows.
    """
    if not run_dirs:
        raise ContractError("no run directories given")
    rows = sorted((_read_run(d) for d in run_dirs), key=lambda r: (_k_key(r["k"]), r["seed"] or 0, r["run"]))

    summary: List[Dict[str, Any]] = []
    for k in sorted({r["k"] for r in rows}, key=_k_key):
        group = [r for r in rows if r["k"] == k]
        entry: Dict[str, Any] = {"k": "sentence" if k is None else k, "runs": len(group)}
        for key in SUMMARY_FIELDS[2:]:
            entry[key] = _mean([r[key] for r in group])
        summary.append(entry)

    os.makedirs(out_dir, exist_ok=True)
    for name, fields, data in (("report.csv", REPORT_FIELDS, rows), ("summary.csv", SUMMARY_FIELDS, summary)):
        with open(os.path.join(out_dir, name), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for row in data:
                writer.writerow({key: "" if row[key] is None else row[key] for key in fields})

    widths = [max(len(f), 12) for f in SUMMARY_FIELDS]
    print("  ".join(f.rjust(w) for f, w in zip(SUMMARY_FIELDS, widths)))
    for entry in summary:
        print("  ".join(_format(entry[f]).rjust(w) for f, w in zip(SUMMARY_FIELDS, widths)))
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdsr", description="Simultaneous dysarthric speech reconstruction on synthetic corpora",
        epilog="The seed is taken from --seed, then the {} environment variable, then the config.".format(
            SEED_ENV_VAR))
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging threshold for messages on stderr (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="run configuration JSON; defaults apply when omitted")
        p.add_argument("--seed", type=int, help="random seed")

    p = sub.add_parser("gen-corpus", help="generate a synthetic normal/dysarthric corpus")
    common(p)
    p.add_argument("--out", required=True, help="corpus directory to write")

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--stage", type=int, choices=[1, 2], required=True, help="1: joint training, 2: fine-tuning")
    p.add_argument("--init", help="stage 1 checkpoint to fine-tune (stage 2 only)")
    p.add_argument("--out", required=True, help="checkpoint file to write")

    p = sub.add_parser("stream", help="stream one utterance through a trained system")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help="utterance id (with --corpus) or a container with 'features'")
    p.add_argument("--corpus", help="corpus directory to take the utterance from")
    p.add_argument("--variant", default=DYSARTHRIC, choices=list(VARIANTS), help="utterance variant (default dys)")
    p.add_argument("--k", type=int, help="wait-k offset")
    p.add_argument("--chunk-size", type=int, help="codes per vocoder chunk")
    p.add_argument("--clock", choices=["wall", "logical"], help="session clock")
    p.add_argument("--sentence-level", action="store_true", help="emit nothing before the end of the input")
    p.add_argument("--out", required=True, help="run directory to write")

    p = sub.add_parser("report", help="aggregate stream run directories")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True, help="directory for report.csv and summary.csv")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-corpus":
            cmd_gen_corpus(args.config, args.out, args.seed)
        elif args.command == "train":
            cmd_train(args.config, args.corpus, args.stage, args.out, args.init, args.seed)
        elif args.command == "stream":
            cmd_stream(args.config, args.checkpoint, args.input, args.out, args.k, args.chunk_size, args.clock,
                       args.sentence_level, args.corpus, args.variant, args.seed)
        else:
            cmd_report(args.runs, args.out)
    except (ConfigError, ContractError) as e:
        logger.error("%s", e.msg)
        return EXIT_USAGE
    except (SdsrError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE
    return EXIT_OK
