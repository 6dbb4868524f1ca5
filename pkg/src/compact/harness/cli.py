"""Command-line entry point: ``compact synth|train|eval|sweep|embed``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..boost import TrainConfig, embed_external_stage, external_score_array, fit_cascade, parse_policy
from ..cascade import Cascade, batch_metrics, deserialize, serialize
from ..core import CompactError, ConfigurationError, InvalidInputError, SchemaError
from ..pool import (
    Dataset,
    FamilyManifest,
    GeneratorConfig,
    default_generator_config,
    load_manifest,
    read_dataset_csv,
    stump_bayes_error,
    synth_generate,
    write_dataset_csv,
)
from .benchmark import stage_configuration, sweep_rows

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("compact")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- file helpers ------------------------------------------------------------


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write to a sibling temp file and rename it over ``path``."""
    path = Path(path)
    blob = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno})", path) from None
    if not isinstance(doc, dict):
        raise SchemaError("expected a JSON object", path)
    return doc


def _load_manifest(path: str) -> FamilyManifest:
    return load_manifest(_read_json(path))


def _load_model(path: str) -> Cascade:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def _load_data(path: str, manifest: FamilyManifest) -> Dataset:
    return read_dataset_csv(path, manifest)


def read_scores_csv(path: str) -> dict[str, float]:
    """External scores: CSV with header ``id,score``."""
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["id", "score"]:
            raise SchemaError("header must be id,score", f"{path}:1")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise SchemaError(f"expected 2 fields, got {len(row)}", f"{path}:{lineno}")
            try:
                out[row[0]] = float(row[1])
            except ValueError:
                raise SchemaError(f"bad score {row[1]!r}", f"{path}:{lineno}") from None
    return out


def write_scores_csv(path: str, scores: Mapping[str, float]) -> None:
    atomic_write(path, _csv_text(["id", "score"], ([k, repr(float(v))] for k, v in scores.items())))


def _write_dataset(path: Path, dataset: Dataset) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_dataset_csv(tmp, dataset)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- configuration -----------------------------------------------------------


def _train_config(args, doc: Mapping) -> TrainConfig:
    cfg = TrainConfig.from_dict(doc.get("train", {}))
    over = {}
    for name in ("eta", "rounds", "depth", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "threshold", None):
        over["threshold_policy"] = parse_policy(args.threshold)
    if getattr(args, "bootstrap", None) is not None:
        over["bootstrap_schedule"] = _int_list(args.bootstrap)
    if getattr(args, "families", None):
        over["family_schedule"] = _family_schedule(args.families)
    return replace(cfg, **over) if over else cfg


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _family_schedule(text: str) -> tuple[tuple[int, str], ...]:
    """``0:acf,64:ss`` -> ((0, "acf"), (64, "ss"))."""
    out = []
    for item in text.split(","):
        start, sep, name = item.partition(":")
        if not sep or not name:
            raise UsageError(f"family schedule entries look like <round>:<family>, got {item!r}")
        try:
            out.append((int(start), name))
        except ValueError:
            raise UsageError(f"bad round in {item!r}") from None
    return tuple(out)


def _check_distinct(*paths) -> None:
    real = [os.path.realpath(p) for p in paths if p]
    if len(real) != len(set(real)):
        raise UsageError("input and output paths must be distinct")


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    gen = GeneratorConfig.from_dict(doc["generator"]) if "generator" in doc else default_generator_config()
    n_pos = args.n_pos if args.n_pos is not None else doc.get("n_pos", gen.n_pos)
    n_neg = args.n_neg if args.n_neg is not None else doc.get("n_neg", gen.n_neg)
    if args.delta is not None:
        gen = replace(gen, delta=args.delta)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    prefix = args.id_prefix if args.id_prefix is not None else f"s{seed}_"
    data = synth_generate(gen.with_counts(int(n_pos), int(n_neg), prefix), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_dataset(out / "data.csv", data)
    atomic_write(out / "manifest.json", json.dumps(data.manifest.to_document(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(data)} examples ({data.n_pos} positive, {data.n_neg} negative) to {out}")
    print("family  features  unit_cost  disc  stump_bayes_error")
    for f in gen.families:
        print(f"{f.name:7s} {f.n_features:9d} {f.unit_cost:10g} {f.disc:5g} {stump_bayes_error(f.disc, gen.delta):18.4f}")
    return EXIT_OK


LOG_COLUMNS = (
    "round", "family", "features", "D", "classification_term", "complexity_term", "fast_path",
    "alpha", "threshold", "n_active", "n_active_neg", "n_train", "base_cost", "train_error",
    "empirical_risk", "bootstrapped",
)


def _log_rows(records):
    for r in records:
        yield [
            r.round, r.family, " ".join(map(str, r.features)), _cell(r.score),
            _cell(r.classification_term), _cell(r.complexity_term), _cell(r.fast_path),
            _cell(r.alpha), _cell(r.threshold), r.n_active, r.n_active_neg, r.n_train,
            _cell(r.base_cost), _cell(r.train_error), _cell(r.empirical_risk), _cell(r.bootstrapped),
        ]


def cmd_train(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    cfg = _train_config(args, doc)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    log_path = args.log or f"{args.out}.log.csv"
    _check_distinct(args.data, args.manifest, args.pool, args.out, log_path)
    manifest = _load_manifest(args.manifest)
    data = _load_data(args.data, manifest)
    pool = _load_data(args.pool, manifest) if args.pool else None
    res = fit_cascade(data, cfg, negative_pool=pool)
    atomic_write(args.out, serialize(res.cascade))
    atomic_write(log_path, _csv_text(LOG_COLUMNS, _log_rows(res.records)))
    last = res.records[-1]
    print(f"trained {len(res.cascade)} stages; final training error {last.train_error!r}")
    print(f"model: {args.out}")
    print(f"log: {log_path}")
    return EXIT_OK


def _external_for(cascade: Cascade, data: Dataset, scores_path: str | None) -> np.ndarray | None:
    if not cascade.has_external:
        return None
    if not scores_path:
        raise UsageError("model ends in an external stage; pass --scores")
    return external_score_array(data, read_scores_csv(scores_path))


def _require_manifest(cascade: Cascade, manifest: FamilyManifest, path: str) -> None:
    if cascade.manifest != manifest:
        raise InvalidInputError(f"manifest {path} does not match the manifest stored in the model")


def cmd_eval(args) -> int:
    cascade = _load_model(args.model)
    manifest = _load_manifest(args.manifest) if args.manifest else cascade.manifest
    if args.manifest:
        _require_manifest(cascade, manifest, args.manifest)
    data = _load_data(args.data, manifest)
    ext = _external_for(cascade, data, args.scores)
    t0 = time.perf_counter()
    metrics = batch_metrics(cascade, data, ext, roc=args.roc)
    metrics["seconds_per_example"] = (time.perf_counter() - t0) / len(data)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


SWEEP_FIXED = ("eta", "train_error", "test_error", "neg_total_omega", "pos_total_omega")


def cmd_sweep(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    cfg = _train_config(args, doc)
    if args.etas is not None:
        etas = _float_list(args.etas)
    else:
        etas = [float(e) for e in doc.get("etas", [])]
    if not etas:
        raise UsageError("sweep needs a non-empty eta grid (--etas or config 'etas')")
    _check_distinct(args.data, args.manifest, args.pool, args.test)
    manifest = _load_manifest(args.manifest)
    data = _load_data(args.data, manifest)
    test = _load_data(args.test, manifest) if args.test else None
    pool = _load_data(args.pool, manifest) if args.pool else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = args.threads if args.threads is not None else int(os.environ.get("COMPACT_THREADS") or 1)
    names = [f.name for f in manifest.families]
    header = list(SWEEP_FIXED) + [f"first_use_{n}" for n in names] + ["wall_clock", "model", "status"]
    table = []
    rows = sweep_rows(data, cfg, etas, test=test, pool=pool, threads=max(threads, 1))
    try:
        for r in rows:
            model_name = f"model_eta_{r.eta!r}.json"
            atomic_write(out / model_name, serialize(r.cascade))
            stage_rows = ([s["stage"], s["family"], _cell(s["alpha"]), _cell(s["threshold"]), _cell(s["base_cost"])]
                          for s in stage_configuration(r.cascade))
            atomic_write(out / f"stages_eta_{r.eta!r}.csv",
                         _csv_text(["stage", "family", "alpha", "threshold", "base_cost"], stage_rows))
            table.append([_cell(r.eta), _cell(r.train_error), _cell(r.test_error), _cell(r.neg_total_omega),
                          _cell(r.pos_total_omega), *[_cell(r.first_use[n]) for n in names],
                          f"{r.wall_clock:.3f}", model_name, "ok"])
    except CompactError:
        failed = sorted({float(e) for e in etas})[len(table)]
        table.append([_cell(failed), *[""] * (len(header) - 2), "failed"])
        atomic_write(out / "sweep.csv", _csv_text(header, table))
        raise
    atomic_write(out / "sweep.csv", _csv_text(header, table))
    print(_csv_text(header, table), end="")
    return EXIT_OK


def cmd_embed(args) -> int:
    _check_distinct(args.model, args.out)
    cascade = _load_model(args.model)
    manifest = _load_manifest(args.manifest) if args.manifest else cascade.manifest
    if args.manifest:
        _require_manifest(cascade, manifest, args.manifest)
    data = _load_data(args.data, manifest)
    scores = read_scores_csv(args.scores)
    eta = args.eta if args.eta is not None else float(cascade.metadata.get("eta", 0.0))
    gate = parse_policy(args.gate) if args.gate else None
    before = batch_metrics(cascade, data, roc=False)["error"]
    embedded = embed_external_stage(cascade, scores, data, eta, gate)
    after = batch_metrics(embedded, data, external_score_array(data, scores), roc=False)["error"]
    atomic_write(args.out, serialize(embedded))
    print(f"alpha {embedded.metadata['external_alpha']!r}")
    print(f"training error before {before!r} after {after!r}")
    print(f"model: {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="compact", description="Complexity-aware boosted cascades.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-pos", type=int)
    s.add_argument("--n-neg", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--id-prefix")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    def training_flags(q):
        q.add_argument("--config")
        q.add_argument("--data", required=True)
        q.add_argument("--manifest", required=True)
        q.add_argument("--pool", help="negative pool for bootstrapping")
        q.add_argument("--eta", type=float)
        q.add_argument("--rounds", type=int)
        q.add_argument("--depth", type=int)
        q.add_argument("--seed", type=int)
        q.add_argument("--threshold", help="recall:<q> or constant:<theta>")
        q.add_argument("--bootstrap", help="comma-separated rounds")
        q.add_argument("--families", help="manual stage plan, e.g. 0:acf,64:ss")
        q.add_argument("--threads", type=int)

    t = sub.add_parser("train", help="train a cascade")
    training_flags(t)
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--manifest")
    e.add_argument("--scores", help="external scores CSV for embedded models")
    e.add_argument("--roc", action="store_true", help="include ROC points")
    e.add_argument("--out", help="also write the metrics JSON here")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="train one model per eta")
    training_flags(w)
    w.add_argument("--etas", help="comma-separated eta grid")
    w.add_argument("--test", help="held-out dataset")
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("embed", help="append an external scorer as the final stage")
    b.add_argument("--model", required=True)
    b.add_argument("--scores", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--manifest")
    b.add_argument("--eta", type=float)
    b.add_argument("--gate", help="threshold policy for the stage before the external one")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_embed)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("compact: choose a command (synth, train, eval, sweep, embed)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CompactError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
