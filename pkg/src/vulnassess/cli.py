"""``vulnassess`` command line: slice, vir, train, assess, evaluate, split, stats.

Every command reads an optional INI config (``--config``); command-line
flags override config values, which override built-in defaults.  Exit codes:
0 success, 1 fatal error, 2 partial success (some items failed; failures are
listed on stderr).
"""
import argparse
import configparser
import json
import os
import sys
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor

from . import dataset as ds
from . import evaluation as ev
from .assessor import (ModelParams, assemble_prompt, build_bank, encode,
                       load_checkpoint, predict, save_checkpoint, suggest)
from .errors import EmptyDataset, ParseError, VulnAssessError
from .pdg import build_pdg, load_pdg, parse_source, store_pdg
from .slicer import (OPERATOR_CATEGORIES, DegenerateSliceWarning, PoiConfig,
                     assessment_code, idg_document, load_api_list, slice_pdg)
from .trainer import RewardSpec, TrainerConfig, class_weights, train, write_log
from .vir import DEFAULT_API_KEY_ENV, ProviderConfig, Vir, VirGenerator, make_provider

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
DEFAULT_SEED = 0


class Partial(Exception):
    """Raised by a command that finished with some failed items."""


# -- settings: flag > config file > default ------------------------------------------

# dest -> (config section, key, type, default)
SETTINGS = {
    "seed": ("run", "seed", int, DEFAULT_SEED),
    "workers": ("run", "workers", int, None),
    "api_list": ("paths", "api_list", str, None),
    "cache": ("paths", "cache", str, None),
    "checkpoint": ("paths", "checkpoint", str, None),
    "report": ("paths", "report", str, None),
    "categories": ("poi", "categories", str, ",".join(OPERATOR_CATEGORIES)),
    "provider": ("provider", "kind", str, "mock"),
    "endpoint": ("provider", "endpoint", str, ProviderConfig.endpoint),
    "model": ("provider", "model", str, ProviderConfig.model_name),
    "api_key_env": ("provider", "api_key_env", str, DEFAULT_API_KEY_ENV),
    "max_retries": ("provider", "max_retries", int, ProviderConfig.max_retries),
    "timeout": ("provider", "timeout", float, ProviderConfig.timeout),
    "max_concurrent": ("provider", "max_concurrent", int, ProviderConfig.max_concurrent),
    "backoff": ("provider", "backoff", float, ProviderConfig.backoff),
    "epochs": ("trainer", "epochs", int, 100),
    "lr": ("trainer", "learning_rate", float, 0.1),
    "lambda_pg": ("trainer", "lambda_pg", float, 0.01),
    "alpha": ("trainer", "alpha", float, 0.7),
    "batch_size": ("trainer", "batch_size", int, 16),
    "optimizer": ("trainer", "optimizer", str, "sgd"),
    "action": ("trainer", "action", str, "argmax"),
    "dims": ("trainer", "dims", str, "32768,16,256"),
}


def resolve(args):
    """Fill unset flags from the config file, then from defaults; validate paths."""
    cp = configparser.ConfigParser()
    if getattr(args, "config", None):
        if not os.path.isfile(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        cp.read(args.config, encoding="utf-8")
    for dest, (section, key, typ, default) in SETTINGS.items():
        if not hasattr(args, dest) or getattr(args, dest) is not None:
            continue
        if cp.has_option(section, key):
            setattr(args, dest, typ(cp.get(section, key)))
        else:
            setattr(args, dest, default)
    if getattr(args, "workers", 0) is None:
        args.workers = os.cpu_count() or 1
    for dest in ("api_list",):
        path = getattr(args, dest, None)
        if path and not os.path.isfile(path):
            raise FileNotFoundError(f"{dest.replace('_', '-')} not found: {path}")
    return args


def poi_config(args):
    names = load_api_list(args.api_list) if args.api_list else load_api_list()
    cats = frozenset(c.strip() for c in args.categories.split(",") if c.strip())
    return PoiConfig(api_names=names, enabled_categories=cats)


def provider_config(args):
    return ProviderConfig(endpoint=args.endpoint, model_name=args.model,
                          api_key_env=args.api_key_env, max_retries=args.max_retries,
                          timeout=args.timeout, max_concurrent=args.max_concurrent,
                          cache_dir=args.cache, backoff=args.backoff)


def make_generator(args):
    cfg = provider_config(args)
    return VirGenerator(cfg, provider=make_provider(args.provider, cfg))


# -- io helpers ------------------------------------------------------------------------

def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if raw.strip():
                try:
                    out.append(json.loads(raw))
                except json.JSONDecodeError as exc:
                    raise ParseError(lineno, f"{path}: invalid JSON: {exc.msg}") from None
    return out


class JsonlWriter:
    """One complete line per item, written under a lock."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._fh = None

    def __enter__(self):
        if self.path and self.path != "-":
            tmp = self.path + ".part"
            self._tmp = tmp
            self._fh = open(tmp, "w", encoding="utf-8")
        else:
            self._tmp = None
            self._fh = sys.stdout
        return self

    def write(self, doc):
        line = json.dumps(doc, sort_keys=True) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def __exit__(self, exc_type, exc, tb):
        if self._tmp is not None:
            self._fh.close()
            os.replace(self._tmp, self.path)
        return False


def diag(msg):
    print(msg, file=sys.stderr, flush=True)


def _write_atomic(path, text):
    tmp = path + ".part"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _pool_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- gathering functions to slice -----------------------------------------------------

def _functions_from_source(path):
    """``(units, failures)`` where a unit is ``(id, pdg)``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        models, failures = parse_source(text)
    return ([(f"{os.path.basename(path)}:{m.name}", build_pdg(m)) for m in models],
            [(f"{os.path.basename(path)}:{name}", exc) for name, exc in failures])


def _functions_from_dataset(path):
    units, failures = [], []
    for rec in ds.load_records(path):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            models, bad = parse_source(rec.code)
        if not models and not bad:
            failures.append((rec.id, VulnAssessError("no function definition found")))
        for name, exc in bad:
            failures.append((f"{rec.id}:{name}", exc))
        for k, m in enumerate(models):
            units.append((rec.id if len(models) == 1 and not bad else f"{rec.id}:{m.name}",
                          build_pdg(m)))
    return units, failures


def _functions_from_pdg_dir(directory):
    units, failures = [], []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".json"):
            continue
        path = os.path.join(directory, name)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            uid = doc.get("id") if isinstance(doc, dict) else None
            units.append((uid or name[:-5], load_pdg(doc)))
        except (ValueError, VulnAssessError) as exc:
            failures.append((name, exc))
    return units, failures


def gather_units(inputs, pdg_in=None):
    """Group units by input so callee expansion stays within one file."""
    groups, failures = [], []
    if pdg_in:
        units, bad = _functions_from_pdg_dir(pdg_in)
        groups.append(units)
        failures += bad
    for path in inputs or ():
        if path.endswith(".jsonl"):
            units, bad = _functions_from_dataset(path)
        else:
            units, bad = _functions_from_source(path)
        groups.append(units)
        failures += bad
    return groups, failures


def _slice_unit(uid, pdg, group, cfg, expand):
    pdgs = {p.function.name: p for _, p in group} if expand else None
    with warnings.catch_warnings():
        # an empty slice is reported through the document's warnings and fallback
        warnings.simplefilter("ignore", DegenerateSliceWarning)
        _, idg, rendered = slice_pdg(pdg, cfg, pdgs, expand)
    code, fallback = assessment_code(idg, pdg.function, rendered)
    return idg_document(idg, pdg.function, code, fallback, record_id=uid)


def _report_failures(failures, what):
    for uid, exc in failures:
        diag(f"{what} failed: {uid}: {exc}")


# -- commands ----------------------------------------------------------------------------

def cmd_slice(args):
    cfg = poi_config(args)
    groups, failures = gather_units(args.inputs, args.pdg_in)
    if not any(groups) and not failures:
        raise VulnAssessError("no input functions")
    if args.emit_pdg:
        os.makedirs(args.emit_pdg, exist_ok=True)
        for group in groups:
            for uid, pdg in group:
                doc = {"id": uid, **store_pdg(pdg)}
                fname = uid.replace(os.sep, "_").replace(":", "__") + ".json"
                _write_atomic(os.path.join(args.emit_pdg, fname),
                              json.dumps(doc, sort_keys=True, indent=1))
    jobs = [(uid, pdg, group) for group in groups for uid, pdg in group]

    def run(job):
        uid, pdg, group = job
        try:
            return _slice_unit(uid, pdg, group, cfg, args.expand_callees), None
        except VulnAssessError as exc:
            return None, (uid, exc)

    results = _pool_map(run, jobs, args.workers)
    with JsonlWriter(args.output) as out:
        for doc, err in results:
            if doc is not None:
                out.write(doc)
            else:
                failures.append(err)
    _report_failures(failures, "slice")
    if failures:
        raise Partial(f"{len(failures)} function(s) failed")


def _vir_inputs(path):
    docs = read_jsonl(path)
    for k, d in enumerate(docs):
        if "code" not in d:
            raise ParseError(k + 1, f"{path}: IDG document without 'code'")
    return docs


def cmd_vir(args):
    gen = make_generator(args)  # MissingApiKey surfaces here, before any work
    docs = _vir_inputs(args.input)
    failures = []
    done = [0]
    lock = threading.Lock()

    def run(doc):
        try:
            vir = gen.generate(doc["code"])
            res = {"id": doc.get("id"), "vir": vir.to_dict()}, None
        except VulnAssessError as exc:
            res = None, (doc.get("id"), exc)
        with lock:
            done[0] += 1
            diag(f"vir: {done[0]}/{len(docs)} provider_calls={gen.provider_calls} "
                 f"cache_hits={gen.cache_hits}")
        return res

    results = _pool_map(run, docs, args.workers)
    with JsonlWriter(args.output) as out:
        for doc, err in results:
            if doc is not None:
                out.write(doc)
            else:
                failures.append(err)
    diag(f"vir: done provider_calls={gen.provider_calls} cache_hits={gen.cache_hits}")
    _report_failures(failures, "vir")
    if failures:
        raise Partial(f"{len(failures)} item(s) failed")


def _parse_dims(text):
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 3 or min(parts) < 1:
        raise ValueError("--dims expects D,K,H")
    return parts


def _training_items(records, args, poi_cfg):
    """(HybridPrompt, label, suggestion) per record, using precomputed IDG/VIR when given."""
    idg_by_id = {d["id"]: d for d in read_jsonl(args.idg_in)} if args.idg_in else {}
    vir_by_id = {d["id"]: Vir.from_dict(d["vir"]) for d in read_jsonl(args.vir_in)} \
        if args.vir_in else {}
    gen = None
    items, failures = [], []
    for rec in records:
        try:
            if rec.id in idg_by_id:
                code = idg_by_id[rec.id]["code"]
            else:
                code = _record_code(rec, poi_cfg)
            vir = vir_by_id.get(rec.id)
            if vir is None:
                gen = gen or make_generator(args)
                vir = gen.generate(code)
            items.append((assemble_prompt(code, vir), rec.severity, rec.suggestion))
        except VulnAssessError as exc:
            failures.append((rec.id, exc))
    return items, failures


def _record_code(rec, poi_cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        models, _ = parse_source(rec.code)
    if not models:
        raise VulnAssessError(f"record {rec.id}: no parseable function")
    m = models[0]
    doc = _slice_unit(rec.id, build_pdg(m), [], poi_cfg, False)
    return doc["code"]


def cmd_train(args):
    diag(f"seed: {args.seed}")
    if not args.checkpoint:
        raise ValueError("train needs --checkpoint (output path)")
    records = ds.dedup_suggestions(ds.load_records(args.data))
    poi_cfg = poi_config(args)
    items, failures = _training_items(records, args, poi_cfg)
    if not items:
        raise EmptyDataset("no usable training records")
    D, K, H = _parse_dims(args.dims)
    spec = RewardSpec.uniform(sum(class_weights().weights) / 4) if args.uniform_reward \
        else class_weights()
    cfg = TrainerConfig(lambda_pg=args.lambda_pg, alpha=args.alpha, batch_size=args.batch_size,
                        epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
                        optimizer=args.optimizer, action=args.action, reward_spec=spec,
                        use_baseline=not args.no_baseline)
    init = ModelParams.initialize(args.seed, D, K, H)
    params, log = train(items, cfg, init)
    bank = build_bank([r.suggestion for r in records if r.suggestion], params)
    meta = {"epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
            "lambda_pg": cfg.lambda_pg, "alpha": cfg.alpha, "seed": cfg.seed,
            "optimizer": cfg.optimizer, "action": cfg.action,
            "reward_weights": list(spec.weights), "n_train": len(items)}
    tmp = args.checkpoint + ".part"
    save_checkpoint(tmp, params, bank, meta)
    os.replace(tmp, args.checkpoint)
    if args.log:
        if os.path.exists(args.log):
            os.unlink(args.log)
        write_log(log, args.log)
    last = log[-1] if log else {}
    diag(f"train: {len(items)} examples, {len(log)} steps, final l_total="
         f"{last.get('l_total', float('nan')):.6f}")
    _report_failures(failures, "train")
    if failures:
        raise Partial(f"{len(failures)} record(s) skipped")


def cmd_assess(args):
    if not args.checkpoint:
        raise ValueError("assess needs --checkpoint")
    params, bank, _ = load_checkpoint(args.checkpoint)
    gen = make_generator(args)
    poi_cfg = poi_config(args)
    groups, failures = gather_units(args.inputs, args.pdg_in)
    jobs = [(uid, pdg, group) for group in groups for uid, pdg in group]

    def run(job):
        uid, pdg, group = job
        try:
            doc = _slice_unit(uid, pdg, group, poi_cfg, args.expand_callees)
            vir = gen.generate(doc["code"])
            h = encode(assemble_prompt(doc["code"], vir), params)
            dist = predict(h, params)
            sev = int(dist.argmax())
            return {"id": uid, "severity": sev, "distribution": [float(p) for p in dist],
                    "confidence": float(dist[sev]), "suggestion": suggest(h, params, bank),
                    "fallback": doc["fallback"], "warnings": doc["warnings"],
                    "vir": vir.to_dict()}, None
        except VulnAssessError as exc:
            return None, (uid, exc)

    results = _pool_map(run, jobs, args.workers)
    with JsonlWriter(args.output) as out:
        for doc, err in results:
            if doc is not None:
                out.write(doc)
            else:
                failures.append(err)
    _report_failures(failures, "assess")
    if not jobs and not failures:
        raise VulnAssessError("no input functions")
    if failures:
        raise Partial(f"{len(failures)} function(s) failed")


def _prediction_rows(args):
    rows = read_jsonl(args.predictions)
    by_id = {r.id: r for r in ds.load_records(args.data)} if args.data else {}
    labels, dists, cwes, cands, refs = [], [], [], [], []
    for k, row in enumerate(rows, 1):
        rec = by_id.get(row.get("id"))
        label = row.get("label", rec.severity if rec else None)
        if label is None:
            raise ParseError(k, "prediction without label (and no matching record)")
        labels.append(int(label))
        dists.append(row["distribution"])
        cwes.append(row.get("cwe_id", rec.cwe_id if rec else None))
        ref = row.get("reference", rec.suggestion if rec else None)
        if row.get("suggestion") is not None and ref:
            cands.append(row["suggestion"])
            refs.append(ref)
    return labels, dists, cwes, cands, refs


def cmd_evaluate(args):
    labels, dists, cwes, cands, refs = _prediction_rows(args)
    pset = ev.PredictionSet.checked(labels, dists)
    rep = ev.evaluate(pset, cwes if any(cwes) else None)
    doc = rep.to_dict(scale=100.0)
    if cands:
        doc["suggestions"] = ev.text_report(cands, refs)
    table = ev.report_table(rep)
    if cands:
        t = doc["suggestions"]
        table += (f"\n\nBLEU-4 {100 * t['bleu4']:.1f}  ROUGE-L {100 * t['rouge_l']:.1f}  "
                  f"METEOR {100 * t['meteor']:.1f}  ({t['note']})")
    _emit_report(args, doc, table)


def _emit_report(args, doc, table):
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.report:
        _write_atomic(args.report, text + "\n")
    print(text if args.json else table)


def cmd_split(args):
    records = ds.load_records(args.data)
    if args.dedup_suggestions:
        records = ds.dedup_suggestions(records)
    spec = ds.SplitSpec(args.train_end, args.eval_start)
    parts = ds.split_by_time(records, spec, args.val_fraction)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in zip(("train", "validation", "test"), parts):
        path = os.path.join(args.out_dir, f"{name}.jsonl")
        tmp = path + ".part"
        ds.write_records(part, tmp)
        os.replace(tmp, path)
        print(f"{name}: {len(part)} records "
              f"({part[0].published.isoformat()} .. {part[-1].published.isoformat()})")


def cmd_stats(args):
    rep = ds.stats(ds.load_records(args.data))
    _emit_report(args, rep, ds.stats_table(rep))


# -- parser ------------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--workers", type=int, help="worker pool size (default: logical cores)")


def _poi_flags(p):
    p.add_argument("--api-list", dest="api_list", help="file with one API name per line")
    p.add_argument("--categories", help="comma-separated operator categories to enable")
    p.add_argument("--expand-callees", action="store_true",
                   help="splice callee slices (depth 1) after POI call sites")
    p.add_argument("--pdg-in", dest="pdg_in", help="directory of PDG interchange documents")


def _provider_flags(p):
    p.add_argument("--provider", choices=("mock", "http"))
    p.add_argument("--cache", help="VIR cache directory")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--api-key-env", dest="api_key_env")
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-concurrent", dest="max_concurrent", type=int)
    p.add_argument("--backoff", type=float)


def _report_flags(p):
    p.add_argument("--report", help="also write the JSON report to this path")
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")


def build_parser():
    ap = argparse.ArgumentParser(prog="vulnassess",
                                 description="Vulnerability severity assessment pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("slice", help="C sources or dataset -> IDG documents")
    p.add_argument("inputs", nargs="*", help=".c files or .jsonl datasets")
    p.add_argument("--emit-pdg", dest="emit_pdg", help="also write PDG documents here")
    p.add_argument("-o", "--output", help="JSONL output (default stdout)")
    _poi_flags(p)
    _common(p)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("vir", help="IDG documents -> vulnerability intention reports")
    p.add_argument("input", help="JSONL of IDG documents (from 'slice')")
    p.add_argument("-o", "--output")
    _provider_flags(p)
    _common(p)
    p.set_defaults(func=cmd_vir)

    p = sub.add_parser("train", help="train the classifier and suggestion head")
    p.add_argument("data", help="dataset JSONL")
    p.add_argument("--checkpoint", help="output checkpoint (.npz)")
    p.add_argument("--log", help="training log JSONL")
    p.add_argument("--idg-in", dest="idg_in", help="precomputed IDG documents by id")
    p.add_argument("--vir-in", dest="vir_in", help="precomputed VIR documents by id")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-pg", dest="lambda_pg", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--action", choices=("argmax", "sample"))
    p.add_argument("--dims", help="D,K,H model sizes")
    p.add_argument("--uniform-reward", dest="uniform_reward", action="store_true")
    p.add_argument("--no-baseline", dest="no_baseline", action="store_true")
    _poi_flags(p)
    _provider_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("assess", help="severity + repair suggestion per function")
    p.add_argument("inputs", nargs="*", help=".c files or .jsonl datasets")
    p.add_argument("--checkpoint")
    p.add_argument("-o", "--output")
    _poi_flags(p)
    _provider_flags(p)
    _common(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("evaluate", help="metrics for a predictions file")
    p.add_argument("predictions", help="JSONL with label/id and distribution")
    p.add_argument("--data", help="dataset JSONL supplying labels, CWEs and references by id")
    _report_flags(p)
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="chronological train/validation/test split")
    p.add_argument("data")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--train-end", dest="train_end", default="20220817")
    p.add_argument("--eval-start", dest="eval_start", default="20220818")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.5)
    p.add_argument("--dedup-suggestions", dest="dedup_suggestions", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="severity class distribution")
    p.add_argument("data")
    _report_flags(p)
    _common(p)
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        resolve(args)
        args.func(args)
    except Partial as exc:
        diag(f"partial: {exc}")
        return EXIT_PARTIAL
    except (VulnAssessError, OSError, ValueError, KeyError) as exc:
        stage = f"[{exc.stage}] " if getattr(exc, "stage", None) else ""
        diag(f"error: {stage}{type(exc).__name__}: {exc}")
        return EXIT_FATAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
