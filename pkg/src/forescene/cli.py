"""forescene command-line interface.

    forescene <subcommand> --config <file> [--seed N] [--jobs N] [--force] [--set key=value ...]

Exit codes: 0 ok, 2 usage / bad config, 3 missing prerequisite, 4 runtime failure.
Data root: --data-dir, else $FORESCENE_DATA_DIR, else the config's data_dir.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .anticipation import AnticipationRequest, Rollout, anticipate_many
from .benchmark import AnticipationSplit, build_splits, split_stats
from .checkpoint import load_gae, load_ldm, read_checkpoint, save_gae, save_ldm
from .config import ConfigError, load_config, parse_value
from .diffusion import ldm_curve_csv, train_ldm
from .evaluation import (
    aggregate,
    copy_last_frames,
    random_object_frames,
    read_results,
    result_rows,
    results_csv,
    rollout_rows,
    rollouts_from_rows,
    score_task,
    text_table,
)
from .gae import curve_csv, read_curve, train_gae
from .graph import default_vocabulary
from .io import (
    atomic_write_text,
    file_hash,
    read_corpus,
    read_json,
    read_jsonl,
    tree_hashes,
    write_corpus,
    write_json,
    write_jsonl,
)
from .synth import generate_corpus

log = logging.getLogger("forescene")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class MissingPrerequisite(Exception):
    pass


# ---- layout ----

class Layout:
    def __init__(self, root):
        self.root = Path(root)
        self.corpus = self.root / "corpus"
        self.splits = self.root / "splits"
        self.gae = self.root / "gae"
        self.ldm = self.root / "ldm"
        self.rollouts = self.root / "rollouts"
        self.results = self.root / "results"
        self.plots = self.root / "plots"

    @property
    def splits_file(self):
        return self.splits / "splits.jsonl"

    @property
    def gae_ckpt(self):
        return self.gae / "gae.pt"

    @property
    def ldm_ckpt(self):
        return self.ldm / "ldm.pt"


def data_root(args, settings):
    if args.data_dir:
        return Path(args.data_dir)
    env = os.environ.get("FORESCENE_DATA_DIR")
    return Path(env) if env else Path(settings.run.data_dir)


def setting_name(fraction):
    return f"F={fraction:g}"


# ---- manifests ----

def write_manifest(out_dir, args, settings, inputs=(), checkpoints=None, started=None, extra=None):
    out_dir = Path(out_dir)
    outputs = {k: v for k, v in tree_hashes(out_dir).items() if k != MANIFEST_NAME}
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": __version__,
        "config": settings.flat(),
        "seeds": {"seed": settings.run.seed},
        "checkpoints": checkpoints or {},
        "inputs": {str(p): file_hash(p) for p in inputs if Path(p).is_file()},
        "outputs": outputs,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **(extra or {}),
    }
    write_json(out_dir / MANIFEST_NAME, manifest)
    return manifest


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _prepare_out(path, force, what):
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"{what} output {path} already exists (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path, what):
    if not Path(path).exists():
        raise MissingPrerequisite(f"missing {what}: {path}")
    return Path(path)


def _load_corpus(layout):
    _require(layout.corpus / "records.jsonl", "corpus (run gen-synthetic first)")
    vocab, seqs = read_corpus(layout.corpus)
    split = read_json(layout.corpus / "split.json") if (layout.corpus / "split.json").exists() else None
    return seqs, vocab, split


def _subset(seqs, split, which):
    if split is None or which == "all":
        return list(seqs)
    ids = set(split[which])
    return [s for s in seqs if s.video_id in ids]


# ---- commands ----

def cmd_gen_synthetic(args, settings, layout):
    started = _now()
    out = _prepare_out(layout.corpus, args.force, "corpus")
    s = settings.synth
    seqs, manifest = generate_corpus(
        s.n_videos, s.mix(), settings.run.seed, scripted=s.scripted, length=(s.min_length, s.max_length),
        feature_std=s.feature_std, box_jitter=s.box_jitter, d_vis=settings.features.d_vis, world_seed=s.world_seed)
    vocab = default_vocabulary()
    write_corpus(out, seqs, vocab)
    write_jsonl(out / "generator_manifest.jsonl", manifest)
    rng = np.random.default_rng(settings.run.seed + 1)
    order = rng.permutation(len(seqs))
    n_test = int(round(s.test_fraction * len(seqs)))
    test = sorted(seqs[i].video_id for i in order[:n_test])
    train = sorted(seqs[i].video_id for i in order[n_test:])
    write_json(out / "split.json", {"train": train, "test": test})
    write_manifest(out, args, settings, started=started, extra={"n_videos": len(seqs)})
    log.info("wrote %d videos (%d train, %d test) to %s", len(seqs), len(train), len(test), out)


def cmd_build_splits(args, settings, layout):
    started = _now()
    seqs, _, split = _load_corpus(layout)
    out = _prepare_out(layout.splits, args.force, "splits")
    corpus = _subset(seqs, split, settings.eval.eval_split)
    splits = build_splits(corpus)
    write_jsonl(layout.splits_file, [s.to_record() for s in splits])
    stats = split_stats(splits, {s.video_id: len(s) for s in corpus})
    write_json(out / "stats.json", _jsonable(stats))
    write_manifest(out, args, settings, inputs=[layout.corpus / "records.jsonl"], started=started)
    log.info("%d splits: %s", stats["total"], stats["counts"])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def cmd_train_gae(args, settings, layout):
    started = _now()
    seqs, vocab, split = _load_corpus(layout)
    graphs = [g for s in _subset(seqs, split, "train") for g in s.graphs]
    model, opt_state, start, history = None, None, 0, None
    if args.resume:
        _require(layout.gae_ckpt, "GAE checkpoint to resume")
        model, payload = load_gae(layout.gae_ckpt)
        if payload["config"] != settings.gae_config().to_dict():
            raise UsageError("GAE config differs from the checkpoint being resumed")
        opt_state, start, history = payload["train"]["optimizer"], payload["train"]["epoch"], payload["train"]["history"]
    else:
        _prepare_out(layout.gae, args.force, "GAE")
    layout.gae.mkdir(parents=True, exist_ok=True)

    def on_epoch(epoch, m, opt, hist):
        save_gae(layout.gae_ckpt, m, {"epoch": epoch, "history": hist, "optimizer": opt.state_dict()})
        atomic_write_text(layout.gae / "curve.csv", curve_csv(hist))

    model, opt, history = train_gae(graphs, vocab, settings.gae_config(), settings.gae_train, settings.loss,
                                    settings.run.seed, model, opt_state, start, history, on_epoch)
    if not history or start >= settings.gae_train.gae_epochs:
        on_epoch(start, model, opt, history)
    fp = read_checkpoint(layout.gae_ckpt)["fingerprint"]
    write_manifest(layout.gae, args, settings, inputs=[layout.corpus / "records.jsonl"], started=started,
                   checkpoints={"gae": fp}, extra={"epochs": len(history)})


def cmd_train_ldm(args, settings, layout):
    started = _now()
    _require(layout.gae_ckpt, "GAE checkpoint (run train-gae first)")
    gae, gae_payload = load_gae(layout.gae_ckpt)
    seqs, _, split = _load_corpus(layout)
    latents = [gae.encode_graphs(list(s.graphs)) for s in _subset(seqs, split, "train")]
    model, opt_state, start, history = None, None, 0, None
    if args.resume:
        _require(layout.ldm_ckpt, "LDM checkpoint to resume")
        model, payload = load_ldm(layout.ldm_ckpt)
        opt_state, start, history = payload["train"]["optimizer"], payload["train"]["iteration"], payload["train"]["history"]
    else:
        _prepare_out(layout.ldm, args.force, "LDM")
    layout.ldm.mkdir(parents=True, exist_ok=True)

    def on_log(it, m, opt, hist):
        save_ldm(layout.ldm_ckpt, m, {"iteration": it, "history": hist, "optimizer": opt.state_dict()},
                 gae_payload["fingerprint"])
        atomic_write_text(layout.ldm / "curve.csv", ldm_curve_csv(hist))

    model, opt, history = train_ldm(latents, gae.cfg.encoder.C, settings.diffusion, settings.denoiser,
                                    settings.ldm_train, settings.run.seed, model, opt_state, start, history, on_log)
    if start >= settings.ldm_train.ldm_iters:
        on_log(start, model, opt, history)
    fp = read_checkpoint(layout.ldm_ckpt)["fingerprint"]
    write_manifest(layout.ldm, args, settings, inputs=[layout.gae_ckpt, layout.corpus / "records.jsonl"],
                   started=started, checkpoints={"gae": gae_payload["fingerprint"], "ldm": fp})


def anticipation_tasks(seqs, settings, splits=None, fraction=None):
    """[(setting, sequence, F_s)] for fraction mode or for a list of AnticipationSplits."""
    tasks = []
    if splits is not None:
        by_id = {s.video_id: s for s in seqs}
        for sp in splits:
            if sp.video_id in by_id:
                tasks.append((sp.tier, by_id[sp.video_id], sp.F_s))
            else:
                log.warning("split for unknown video %s skipped", sp.video_id)
    else:
        for s in seqs:
            F_s = math.floor(fraction * (len(s) - 1))
            if F_s + 1 <= len(s) - 1:
                tasks.append((setting_name(fraction), s, F_s))
    return tasks


def cmd_anticipate(args, settings, layout):
    started = _now()
    fraction = args.fraction if args.fraction is not None else (
        settings.eval.fraction if settings.eval.mode == "fraction" and not args.splits else None)
    if fraction is not None and not 0.0 < fraction < 1.0:
        raise UsageError(f"--fraction must lie in (0, 1), got {fraction}")
    _require(layout.gae_ckpt, "GAE checkpoint (run train-gae first)")
    _require(layout.ldm_ckpt, "LDM checkpoint (run train-ldm first)")
    splits = None
    inputs = [layout.gae_ckpt, layout.ldm_ckpt, layout.corpus / "records.jsonl"]
    if fraction is None:
        path = Path(args.splits) if args.splits else layout.splits_file
        _require(path, "splits file (run build-splits first)")
        splits = [AnticipationSplit.from_record(r) for r in read_jsonl(path)]
        inputs.append(path)
    gae, gp = load_gae(layout.gae_ckpt)
    ldm, lp = load_ldm(layout.ldm_ckpt)
    if lp["config"].get("gae_fingerprint") not in (None, gp["fingerprint"]):
        raise MissingPrerequisite("LDM checkpoint was trained on a different GAE; retrain train-ldm")
    seqs, _, split = _load_corpus(layout)
    tasks = anticipation_tasks(_subset(seqs, split, settings.eval.eval_split), settings, splits, fraction)
    name = setting_name(fraction) if fraction is not None else "splits"
    out = _prepare_out(layout.rollouts / name, args.force, "rollouts")
    r = args.rollouts or settings.eval.r
    reqs = [AnticipationRequest(s.video_id, list(s.graphs[: F_s + 1]), len(s), r, settings.run.seed)
            for _, s, F_s in tasks]
    t0 = time.time()
    results = anticipate_many(reqs, gae, ldm, settings.thresholds, top_n=max(settings.eval.K_triplet),
                              constraint=settings.eval.constraint, max_batch=settings.eval.anticipate_batch)
    rows = []
    for (setting, _, _), rollouts in zip(tasks, results):
        for ro in rollouts:
            rows.extend(rollout_rows(ro, gae.vocab, setting))
    write_jsonl(out / "rollouts.jsonl", rows)
    log.info("%d tasks x %d rollouts in %.1fs", len(tasks), r, time.time() - t0)
    write_manifest(out, args, settings, inputs=inputs, started=started,
                   checkpoints={"gae": gp["fingerprint"], "ldm": lp["fingerprint"]},
                   extra={"S": ldm.diff_cfg.S, "T": ldm.diff_cfg.T, "r": r, "n_tasks": len(tasks)})


def _score_group(job):
    setting, method, rollouts, seq = job
    return score_task(setting, method, rollouts, seq)


def baseline_rollouts(setting, seq, F_s, vocab, seed):
    observed = list(seq.graphs[: F_s + 1])
    copy = Rollout(seq.video_id, F_s, 0, copy_last_frames(observed, len(seq)))
    rng = np.random.default_rng([seed, int.from_bytes(seq.video_id.encode()[:8].ljust(8, b"\0"), "little"), F_s])
    rand = Rollout(seq.video_id, F_s, 0, random_object_frames(vocab, len(seq) - F_s - 1, F_s + 1, rng))
    return [("copy_last", [copy]), ("random_object", [rand])]


def cmd_evaluate(args, settings, layout):
    started = _now()
    name = args.rollouts_name or (setting_name(args.fraction) if args.fraction is not None else
                                  (setting_name(settings.eval.fraction) if settings.eval.mode == "fraction" else "splits"))
    path = _require(layout.rollouts / name / "rollouts.jsonl", "rollout file (run anticipate first)")
    seqs, vocab, _ = _load_corpus(layout)
    by_id = {s.video_id: s for s in seqs}
    groups = rollouts_from_rows(read_jsonl(path), vocab)
    jobs, skipped = [], []
    for (setting, vid, F_s), rollouts in sorted(groups.items()):
        if vid not in by_id:
            skipped.append(vid)
            continue
        seq = by_id[vid]
        jobs.append((setting, "model", rollouts, seq))
        for method, rs in baseline_rollouts(setting, seq, F_s, vocab, settings.run.seed):
            jobs.append((setting, method, rs, seq))
    if skipped:
        log.warning("skipped %d rollout groups with unknown video ids: %s", len(skipped), sorted(set(skipped)))
    if not jobs:
        raise RuntimeError("no rollout video ids match the ground truth; nothing evaluated")
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            scored = list(ex.map(_score_group, jobs, chunksize=8))
    else:
        scored = [_score_group(j) for j in jobs]
    selection = args.selection or settings.eval.selection
    pool = max(len(rs) for _, method, rs, _ in jobs if method == "model") if jobs else 1
    rs = sorted({r for r in settings.eval.best_of if r <= pool} | {1, pool})
    rows = result_rows(scored, rs, selection)
    out = _prepare_out(layout.results / name, args.force, "results")
    atomic_write_text(out / "results.csv", results_csv(rows))
    table = text_table(rows)
    atomic_write_text(out / "tables.txt", table)
    print(table)
    write_manifest(out, args, settings, inputs=[path, layout.corpus / "records.jsonl"], started=started,
                   extra={"skipped": sorted(set(skipped)), "selection": selection})


def cmd_plot(args, settings, layout):
    from .plots import plot_curve, plot_difficulty_cdf, plot_metric_vs_r, plot_observed_fraction

    started = _now()
    out = _prepare_out(layout.plots, args.force, "plots")
    made = []
    if layout.splits_file.exists():
        seqs, _, split = _load_corpus(layout)
        corpus = _subset(seqs, split, settings.eval.eval_split)
        splits = [AnticipationSplit.from_record(r) for r in read_jsonl(layout.splits_file)]
        stats = split_stats(splits, {s.video_id: len(s) for s in corpus})
        made.append(plot_difficulty_cdf(stats, out / "difficulty_cdf.png"))
        made.append(plot_observed_fraction(stats, out / "observed_fraction.png"))
    if (layout.gae / "curve.csv").exists():
        rows = read_curve((layout.gae / "curve.csv").read_text())
        made.append(plot_curve(rows, "epoch", ["total", "L_obj", "L_rel", "L_con"], out / "gae_curve.png", "GAE"))
    if (layout.ldm / "curve.csv").exists():
        rows = [{"iteration": int(r["iteration"]), "loss": float(r["loss"])}
                for r in csv.DictReader((layout.ldm / "curve.csv").read_text().splitlines())]
        made.append(plot_curve(rows, "iteration", ["loss"], out / "ldm_curve.png", "LDM"))
    results = sorted(layout.results.glob("*/results.csv")) if layout.results.exists() else []
    for path in results:
        agg = aggregate(read_results(path.read_text()))
        tag = path.parent.name.replace("=", "")
        for setting in sorted({k[0] for k in agg}):
            stem = f"{tag}_{setting}".replace("=", "")
            made.append(plot_metric_vs_r(agg, setting, "J_sim", 0, "", out / f"{stem}_jsim_vs_r.png"))
            made.append(plot_metric_vs_r(agg, setting, "triplet_recall", 10, "no_constraint",
                                         out / f"{stem}_r10nc_vs_r.png"))
    if not made:
        raise MissingPrerequisite("nothing to plot (no splits, curves or results found)")
    write_manifest(out, args, settings, inputs=results, started=started)
    log.info("wrote %d plots to %s", len(made), out)


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-splits": cmd_build_splits,
    "train-gae": cmd_train_gae,
    "train-ldm": cmd_train_ldm,
    "anticipate": cmd_anticipate,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def build_parser():
    p = argparse.ArgumentParser(prog="forescene", description="Scene graph anticipation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="flat key = value config file")
        c.add_argument("--seed", type=int, help="override run seed")
        c.add_argument("--jobs", type=int, default=1, help="worker processes / torch threads")
        c.add_argument("--force", action="store_true", help="overwrite existing outputs")
        c.add_argument("--data-dir", help="data root (beats $FORESCENE_DATA_DIR and data_dir)")
        c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
        c.add_argument("-v", "--verbose", action="store_true")
        if name in ("train-gae", "train-ldm"):
            c.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
        if name in ("anticipate", "evaluate"):
            c.add_argument("--fraction", type=float, help="observation fraction F in (0, 1)")
        if name == "anticipate":
            c.add_argument("--splits", help="splits file (default: <data>/splits/splits.jsonl)")
            c.add_argument("--rollouts", type=int, help="rollouts r per task")
        if name == "evaluate":
            c.add_argument("--rollouts-name", help="rollout directory name under <data>/rollouts")
            c.add_argument("--selection", choices=("per_metric", "r10_nc"))
    return p


def _overrides(args):
    out = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out.append((k.strip(), parse_value(v)))
    if args.seed is not None:
        out.append(("seed", args.seed))
    return out


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = load_config(args.config, _overrides(args))
    except ConfigError as e:
        print(f"forescene: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("forescene: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.jobs)
    layout = Layout(data_root(args, settings))
    try:
        COMMANDS[args.command](args, settings, layout)
    except UsageError as e:
        print(f"forescene: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingPrerequisite, FileNotFoundError) as e:
        print(f"forescene: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"forescene: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK

