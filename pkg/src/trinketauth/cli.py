"""Operator command line: serve, enroll, auth, reset, train, eval, attack,
synth, hist.

Configuration is a flat key=value file; any key can be overridden by an
environment variable TRINKETAUTH_<KEY>.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import importlib.resources
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evalharness as eh
from . import learn
from .authsvc import AuthService, FileStorage
from .filters import FilterRuleConfig
from .imgcore import load_image, save_png
from .learn import Dataset, Model
from .simfeat import FEATURE_NAMES

ENV_PREFIX = "TRINKETAUTH_"


def _data_path(name: str) -> Path:
    return Path(importlib.resources.files("trinketauth") / "data" / name)


@dataclasses.dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    store_path: str = "store"
    model_path: str = ""      # empty -> bundled default model
    filter_config: str = ""   # empty -> bundled default thresholds
    threshold: float = 0.5
    max_attempts: int = 3


def load_service_config(path=None) -> ServiceConfig:
    cfg = ServiceConfig()
    fields = {f.name: f.type for f in dataclasses.fields(ServiceConfig)}
    values = {}
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    for name in fields:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = env
    for name, raw in values.items():
        if name not in fields:
            continue
        current = getattr(cfg, name)
        setattr(cfg, name, type(current)(raw))
    return cfg


def build_service(cfg: ServiceConfig) -> AuthService:
    model_path = cfg.model_path or _data_path("default_model.json")
    filter_path = cfg.filter_config or _data_path("default_filters.cfg")
    return AuthService(
        storage=FileStorage(cfg.store_path),
        model=Model.load(model_path),
        threshold=cfg.threshold,
        filter_cfg=FilterRuleConfig.from_file(filter_path),
        max_attempts=cfg.max_attempts,
    )


# --------------------------------------------------------------------------
# Corpus / feature helpers shared by train, eval, attack


def _load_corpus(args) -> eh.TrinketCorpus:
    if args.corpus:
        return eh.TrinketCorpus.from_manifest(args.corpus)
    return eh.synth_corpus(args.synth, seed=args.seed)


def _training_rows(corpus, seed, n_subsets=1, n_folds=10):
    cache = eh.FeatureCache(corpus)
    subsets = eh.generate_subsets(corpus, seed=seed, n_subsets=n_subsets,
                                  n_folds=n_folds)
    rows, labels = [], []
    for folds in subsets:
        for fold in folds:
            for inst in fold:
                rows.append(cache.features(inst))
                labels.append(inst.label)
    return np.array(rows), np.array(labels), cache, subsets


# --------------------------------------------------------------------------
# Subcommands


def cmd_serve(args):
    import uvicorn

    from .api import create_app

    cfg = load_service_config(args.config)
    uvicorn.run(create_app(build_service(cfg)), host=cfg.host, port=cfg.port)


def cmd_enroll(args):
    service = build_service(load_service_config(args.config))
    images = [load_image(p) for p in args.images]
    result = service.enroll(args.user, images)
    print(json.dumps({"ok": result.ok, "feedback": list(result.feedback)}))
    return 0 if result.ok else 1


def cmd_auth(args):
    service = build_service(load_service_config(args.config))
    d = service.authenticate(args.user, load_image(args.image))
    print(json.dumps({
        "accepted": d.accepted, "score": d.score,
        "feedback": list(d.feedback), "fallback_required": d.fallback_required,
    }))
    return 0 if d.accepted else 1


def cmd_reset(args):
    service = build_service(load_service_config(args.config))
    service.reset_trinket(args.user)
    print(json.dumps({"status": "reset"}))


def cmd_synth(args):
    corpus = eh.synth_corpus(args.n, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        for t in corpus.trinkets:
            paths = []
            for img_id in t.image_ids:
                rel = f"{img_id}.png"
                save_png(corpus.get_image(img_id), out / rel)
                paths.append(rel)
            w.writerow([t.trinket_id, t.category] + paths)
    for name, img in corpus.extras.items():
        save_png(img, out / f"extra_{name}.png")
    print(f"wrote {len(corpus)} trinkets to {out}")


def cmd_train(args):
    corpus = _load_corpus(args)
    rows, labels, _, _ = _training_rows(corpus, seed=args.seed)
    model = learn.train(
        args.kind, Dataset(rows, labels, tuple(FEATURE_NAMES)), seed=args.seed
    )
    model.save(args.out)
    manifest = {
        "kind": args.kind,
        "seed": args.seed,
        "corpus": args.corpus or f"synthetic(n={args.synth}, seed={args.seed})",
        "n_instances": int(len(labels)),
        "n_genuine": int(labels.sum()),
        "feature_names": list(FEATURE_NAMES),
    }
    Path(str(args.out) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n"
    )
    print(f"trained {args.kind} on {len(labels)} instances -> {args.out}")


_FILTER_CHOICES = {
    "none": {},
    "rb": {"use_rbfilter": True, "use_ubounds": True},
    "cb": {"use_cbfilter": True},
    "both": {"use_rbfilter": True, "use_ubounds": True, "use_cbfilter": True},
}


def cmd_eval(args):
    corpus = _load_corpus(args)
    cache = eh.FeatureCache(corpus)
    subsets = eh.generate_subsets(corpus, seed=args.seed,
                                  n_subsets=args.subsets, n_folds=args.folds)
    filter_cfg = (FilterRuleConfig.from_file(args.filter_config)
                  if args.filter_config else FilterRuleConfig())
    results = {}
    for name in args.filters:
        config = eh.PipelineConfig(
            classifier=args.kind, seed=args.seed, filter_cfg=filter_cfg,
            **_FILTER_CHOICES[name],
        )
        results[name] = eh.run_cross_validation(corpus, subsets, config, cache)
    print(eh.report_table(results))
    if args.out:
        last = results[args.filters[-1]]
        eh.write_decision_log(last.decisions, args.out)
        print(f"decision log ({args.filters[-1]}) -> {args.out}")


def cmd_attack(args):
    corpus = _load_corpus(args)
    rows, labels, cache, _ = _training_rows(corpus, seed=args.seed)
    model = learn.train(
        "RF", Dataset(rows, labels, tuple(FEATURE_NAMES)), seed=args.seed
    )
    filter_cfg = (FilterRuleConfig.from_file(args.filter_config)
                  if args.filter_config else FilterRuleConfig())
    refsets = eh.attack_reference_sets(corpus, cache, seed=args.seed,
                                       filter_cfg=filter_cfg)
    meta, images = eh.synth_attack_corpus(
        args.n_attack, seed=args.seed + 1, categories=corpus.categories
    )
    kind = {"pictionary": "pictionary", "shoulder": "shoulder_surf",
            "master": "pictionary"}[args.kind]
    categories = {t.trinket_id: t.category for t in corpus.trinkets}
    run = eh.run_attack(refsets, meta, images, model, kind=kind,
                        threshold=args.threshold, categories=categories)
    print(f"{args.kind}: FAR {run.far:.4f}% over "
          f"{len(run.decisions)} trials, {len(refsets)} reference sets")
    trials = sorted(run.trials_until_success.values())
    if trials:
        print(f"median trials-until-success: {trials[len(trials) // 2]} "
              f"(corpus size {run.corpus_size})")
    if args.kind == "master":
        masters = eh.find_master_images(run, min_matches=args.min_matches)
        if not masters:
            print(f"no image matched >= {args.min_matches} reference sets")
        for image_id, count in masters:
            print(f"master candidate {image_id}: {count} reference sets")


def cmd_hist(args):
    records = []
    with open(args.features, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                (float(row[args.fx]), float(row[args.fy]), row["outcome"])
            )
    hist = eh.rule_discovery_histograms(records, (args.fx, args.fy),
                                        bins=args.bins)
    text = eh.histogram_csv(hist)
    if args.out:
        Path(args.out).write_text(text)
        print(f"histogram -> {args.out}")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trinketauth",
        description="camera-based trinket second-factor toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("serve", cmd_serve, "run the HTTP authentication service")
    sp.add_argument("--config")

    sp = add("enroll", cmd_enroll, "enroll a user from 3 image files")
    sp.add_argument("user")
    sp.add_argument("images", nargs=3)
    sp.add_argument("--config")

    sp = add("auth", cmd_auth, "authenticate a user with one image file")
    sp.add_argument("user")
    sp.add_argument("image")
    sp.add_argument("--config")

    sp = add("reset", cmd_reset, "clear a user's enrollment")
    sp.add_argument("user")
    sp.add_argument("--config")

    sp = add("synth", cmd_synth, "generate a synthetic corpus on disk")
    sp.add_argument("--n", type=int, default=60)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    def corpus_args(sp):
        sp.add_argument("--corpus", help="manifest CSV (default: synthetic)")
        sp.add_argument("--synth", type=int, default=60)
        sp.add_argument("--seed", type=int, default=0)

    sp = add("train", cmd_train, "train a scoring model")
    corpus_args(sp)
    sp.add_argument("--kind", choices=["TREE", "RF", "MLP"], default="RF")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "cross-validate with filter ablations")
    corpus_args(sp)
    sp.add_argument("--subsets", type=int, default=1)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--kind", choices=["TREE", "RF", "MLP"], default="RF")
    sp.add_argument("--filters", nargs="+", choices=list(_FILTER_CHOICES),
                    default=["none"])
    sp.add_argument("--filter-config")
    sp.add_argument("--out")

    sp = add("attack", cmd_attack, "run a scripted attack evaluation")
    sp.add_argument("kind", choices=["pictionary", "shoulder", "master"])
    corpus_args(sp)
    sp.add_argument("--n-attack", type=int, default=100)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--min-matches", type=int, default=5)
    sp.add_argument("--filter-config")

    sp = add("hist", cmd_hist, "rule-discovery histogram from a feature CSV")
    sp.add_argument("--features", required=True,
                    help="CSV with outcome column and named features")
    sp.add_argument("--fx", required=True)
    sp.add_argument("--fy", required=True)
    sp.add_argument("--bins", type=int, default=10)
    sp.add_argument("--out")

    return p


def main(argv=None) -> int:
    from .errors import TrinketAuthError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args) or 0
    except TrinketAuthError as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
