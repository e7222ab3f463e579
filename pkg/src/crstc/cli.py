"""``crstc`` command line: features, synth, train, segment, eval, aggregate, split."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, annotations, dsp, featio, metrics, pipeline, segmentation, stvae, synthgen
from .config import RunConfig

log = logging.getLogger("crstc")


class CLIError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _read_manifest(d: Path) -> dict:
    p = d / "manifest.json"
    if not p.exists():
        raise CLIError(f"{d}: no manifest.json")
    return json.loads(p.read_text())


def _feature_files(d: Path) -> dict[str, Path]:
    files = {p.name[:-4]: p for p in sorted(d.glob("*.bin"))}
    if not files:
        raise CLIError(f"{d}: no feature matrices (*.bin)")
    return files


def read_frame_labels(path: Path) -> np.ndarray:
    """Second column of a ``frame,<label>`` CSV (e.g. ``frame,u`` or ``frame,label``)."""
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows or rows[0][0] != "frame":
        raise CLIError(f"{path}: expected a header starting with 'frame'")
    col = rows[0].index("label") if "label" in rows[0] else 1
    return np.array([int(r[col]) for r in rows[1:] if r], dtype=np.int64)


def _truth_labels(truth_dir: Path, fid: str, grid: dsp.FrameGrid) -> np.ndarray:
    lab = truth_dir / f"{fid}.labels.csv"
    if lab.exists():
        return read_frame_labels(lab)
    for suffix, parse in ((".events.csv", segmentation.events_from_csv),
                          (".events.json", segmentation.events_from_json)):
        p = truth_dir / f"{fid}{suffix}"
        if p.exists():
            return segmentation.events_to_labels(parse(p.read_text()), grid)
    tg = truth_dir / f"{fid}.TextGrid"
    if tg.exists():
        tiers = annotations.parse_textgrid(tg.read_bytes())
        return segmentation.events_to_labels(tiers[0].events(), grid)
    raise CLIError(f"missing ground truth for {fid} in {truth_dir}")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "model.epochs": getattr(args, "epochs", None),
        "model.seed": getattr(args, "seed", None) if args.command == "train" else None,
        "synth.seed": getattr(args, "seed", None) if args.command == "synth" else None,
        "clustering.method": getattr(args, "method", None),
        "clustering.k": _k_value(getattr(args, "k", None)),
        "clustering.bandwidth": getattr(args, "bandwidth", None),
        "segmentation.mapping": getattr(args, "mapping", None),
        "metrics.iou_threshold": getattr(args, "iou_threshold", None),
    }
    return cfg.with_overrides(overrides)


def _k_value(raw):
    if raw is None or raw == "auto":
        return raw
    return int(raw)


# ---------------------------------------------------------------- features

def _feature_job(job):
    path, out, fcfg_dict, fmt = job
    fcfg = dsp.FeatureConfig.from_dict(fcfg_dict)
    try:
        clip = dsp.prepare(dsp.read_wav(path), fcfg)
        feats = dsp.extract_features(clip, fcfg.grid(), fcfg).frames
    except (ValueError, OSError) as exc:
        return {"error": f"{path}: {exc}"}
    stem = Path(path).stem
    if fmt == "csv":
        featio.write_matrix_csv(Path(out) / f"{stem}.csv", feats)
    featio.write_matrix(Path(out) / f"{stem}.bin", feats)
    return {"id": stem, "source": Path(path).name, "rows": int(feats.shape[0]),
            "cols": int(feats.shape[1])}


def cmd_features(args, cfg: RunConfig) -> int:
    src, out = Path(args.wav_dir), Path(args.out)
    if not src.is_dir():
        raise CLIError(f"{src}: not a directory")
    out.mkdir(parents=True, exist_ok=True)
    wavs = sorted(p for p in src.iterdir() if p.suffix.lower() == ".wav")
    fdict = cfg.features.to_dict()
    results = _map(_feature_job, [(str(p), str(out), fdict, args.format) for p in wavs], args.jobs)
    errors = [r["error"] for r in results if "error" in r]
    if errors:
        raise CLIError("; ".join(errors))
    body = {"kind": "features", "config": cfg.to_dict(), "config_hash": cfg.hash(),
            "files": results}
    body["manifest_hash"] = _digest({"config_hash": cfg.hash(), "files": results})
    (out / "manifest.json").write_text(_json(body))
    print(_json({"files": len(results), "manifest_hash": body["manifest_hash"]}), end="")
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args, cfg: RunConfig) -> int:
    seqs = synthgen.generate_dataset(cfg.synth)
    synthgen.write_dataset(args.out, seqs, cfg.synth,
                           {"config_hash": cfg.hash(), "run_config": cfg.to_dict()})
    print(_json({"sequences": len(seqs), "T": cfg.synth.T, "config_hash": cfg.hash()}), end="")
    return 0


# ---------------------------------------------------------------- train

def _train_ids(files: dict[str, Path], split_path: str | None) -> list[str]:
    if not split_path:
        return list(files)
    manifest = json.loads(Path(split_path).read_text())
    missing = [i for i in manifest["train"] if i not in files]
    if missing:
        raise CLIError(f"split lists ids without features: {missing[:5]}")
    return list(manifest["train"])


def cmd_train(args, cfg: RunConfig) -> int:
    fdir, out = Path(args.features), Path(args.out)
    files = _feature_files(fdir)
    ids = _train_ids(files, args.split)
    raw = [featio.read_matrix(files[i]) for i in ids]
    dims = {m.shape[1] for m in raw}
    if len(dims) != 1:
        raise CLIError(f"inconsistent feature dims across files: {sorted(dims)}")
    mean, std = dsp.fit_standardizer(raw)
    data = [dsp.apply_standardizer(m, mean, std) for m in raw]
    result = stvae.train(data, cfg.model)
    out.mkdir(parents=True, exist_ok=True)
    stvae.save_model(out / "checkpoint.bin", result.params, mean, std)
    stvae.save_model(out / "checkpoint_best.bin", result.best_params, mean, std)
    (out / "loss.csv").write_text(result.log_csv())
    info = {"kind": "checkpoint", "config": cfg.to_dict(), "config_hash": cfg.hash(),
            "feature_dim": int(dims.pop()), "train_ids": ids, "best_epoch": result.best_epoch,
            "final_loss": result.log[-1] if result.log else None}
    (out / "manifest.json").write_text(_json(info))
    print(_json({"epochs": len(result.log), "best_epoch": result.best_epoch,
                 "config_hash": cfg.hash()}), end="")
    return 0


# ---------------------------------------------------------------- segment

def _segment_job(job):
    fid, path, ckpt, cfg_dict, ref = job
    cfg = RunConfig.from_dict(cfg_dict)
    params, mean, std = stvae.load_model(ckpt)
    raw = featio.read_matrix(path)
    if raw.shape[1] != params.input_dim:
        return {"error": f"{fid}: feature dim {raw.shape[1]} != checkpoint input dim {params.input_dim}"}
    x = raw if mean is None else dsp.apply_standardizer(raw, mean, std)
    emb = pipeline.embed(x, params, cfg.model.embedding)
    clusters = pipeline.cluster_embeddings(emb, cfg.clustering)
    return {"id": fid, "clusters": clusters, "energy": pipeline.energy_proxy(raw), "ref": ref}


def cmd_segment(args, cfg: RunConfig) -> int:
    fdir, out = Path(args.features), Path(args.out)
    files = _feature_files(fdir)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CLIError(f"{ckpt}: checkpoint not found")
    ref_dir = Path(args.reference) if args.reference else None
    if cfg.segmentation.mapping == "eval" and ref_dir is None:
        raise CLIError("mapping 'eval' needs --reference (or use --mapping heuristic)")
    n_frames = {featio.read_matrix(p).shape[0] for p in files.values()}
    if len(n_frames) != 1:
        raise CLIError(f"feature files disagree on frame count: {sorted(n_frames)}")
    grid = dsp.FrameGrid.from_frames(n_frames.pop(), cfg.features.frame_len_s)
    if cfg.clustering.pooled:
        params, mean, std = stvae.load_model(ckpt)
        embs = []
        for fid, p in files.items():
            raw = featio.read_matrix(p)
            x = raw if mean is None else dsp.apply_standardizer(raw, mean, std)
            embs.append(pipeline.embed(x, params, cfg.model.embedding))
        labels = pipeline.cluster_pooled(embs, cfg.clustering)
        results = [{"id": fid, "clusters": lab, "energy": pipeline.energy_proxy(featio.read_matrix(p))}
                   for (fid, p), lab in zip(files.items(), labels)]
    else:
        jobs = [(fid, str(p), str(ckpt), cfg.to_dict(), None) for fid, p in files.items()]
        results = _map(_segment_job, jobs, args.jobs)
    errors = [r["error"] for r in results if "error" in r]
    if errors:
        raise CLIError("; ".join(errors))

    out.mkdir(parents=True, exist_ok=True)
    entries, scores = [], []
    for r in results:
        fid = r["id"]
        ref = None
        if ref_dir is not None:
            ref = _truth_labels(ref_dir, fid, grid)
            scores.append(synthgen.identifiability_score(r["clusters"], ref))
            if not np.isin(ref, (0, 1)).all():
                ref = (ref == 1).astype(np.int64)
        seg = pipeline.segment_labels(r["clusters"], cfg.segmentation, grid, ref, r["energy"])
        lines = ["frame,cluster,label"] + [f"{t},{int(c)},{int(l)}" for t, (c, l)
                                           in enumerate(zip(seg.clusters, seg.labels))]
        (out / f"{fid}.labels.csv").write_text("\n".join(lines) + "\n")
        (out / f"{fid}.events.csv").write_text(segmentation.events_to_csv(seg.events))
        (out / f"{fid}.events.json").write_text(segmentation.events_to_json(seg.events) + "\n")
        entries.append({"id": fid, "n_clusters": int(len(np.unique(seg.clusters))),
                        "n_events": len(seg.events), "mapping": seg.mapping,
                        "heuristic": seg.heuristic})
    body = {"kind": "segments", "config": cfg.to_dict(), "config_hash": cfg.hash(),
            "checkpoint": str(ckpt), "files": entries}
    if scores:
        body["identifiability"] = float(np.mean(scores))
    (out / "manifest.json").write_text(_json(body))
    summary = {"files": len(entries), "config_hash": cfg.hash()}
    if scores:
        summary["identifiability"] = body["identifiability"]
    print(_json(summary), end="")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args, cfg: RunConfig) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    pm = _read_manifest(pred_dir)
    tm_path = truth_dir / "manifest.json"
    tm = json.loads(tm_path.read_text()) if tm_path.exists() else {}
    if "config_hash" in tm and tm["config_hash"] != pm.get("config_hash") and not args.force:
        raise CLIError(f"config hash mismatch: predictions {pm.get('config_hash')} vs truth "
                       f"{tm['config_hash']} (use --force to override)")
    run_cfg = RunConfig.from_dict(pm["config"]) if "config" in pm else cfg
    per_file, scores = [], []
    ids = [e["id"] for e in pm["files"]]
    if not ids:
        raise CLIError(f"{pred_dir}: manifest lists no files")
    for fid in ids:
        rows = list(csv.DictReader(io.StringIO((pred_dir / f"{fid}.labels.csv").read_text())))
        pl = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        grid = dsp.FrameGrid.from_frames(len(pl), run_cfg.features.frame_len_s)
        raw_truth = _truth_labels(truth_dir, fid, grid)
        if len(raw_truth) != len(pl):
            raise CLIError(f"{fid}: {len(pl)} predicted frames vs {len(raw_truth)} truth frames")
        if "cluster" in rows[0]:
            scores.append(synthgen.identifiability_score([int(r["cluster"]) for r in rows], raw_truth))
        tl = (raw_truth == 1).astype(np.int64)
        pe = segmentation.events_from_csv((pred_dir / f"{fid}.events.csv").read_text())
        te = segmentation.labels_to_events(tl, grid)
        per_file.append((pl, tl, pe, te))
    report = metrics.evaluate_corpus(per_file, cfg.metrics.iou_threshold)
    if scores:
        report["identifiability"] = float(np.mean(scores))
    report.update({"config": run_cfg.to_dict(), "config_hash": pm.get("config_hash"),
                   "files": ids})
    out = Path(args.out) if args.out else pred_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(_json(report))
    header = ["config_hash", "n_files", "frame_f1", "frame_accuracy", "event_f1", "event_iou",
              "matched_iou", "identifiability"]
    row = [pm.get("config_hash"), report["n_files"], report["frame_f1"], report["frame_accuracy"],
           report["event_f1"], report["event_iou"], report["event"]["matched_iou"],
           report.get("identifiability", "")]
    (out / "summary.csv").write_text(",".join(header) + "\n" + ",".join(map(str, row)) + "\n")
    print(_json({k: report[k] for k in ("frame_f1", "frame_accuracy", "event_f1", "event_iou")}
                | ({"identifiability": report["identifiability"]} if scores else {})), end="")
    return 0


# ---------------------------------------------------------------- aggregate / split

def _load_annotator(src: Path, grid: dsp.FrameGrid) -> dict[str, list[segmentation.Event]]:
    if src.is_dir():
        out = {}
        for p in sorted(src.glob("*.TextGrid")):
            tiers = annotations.parse_textgrid(p.read_bytes())
            if not tiers:
                raise CLIError(f"{p}: no interval tiers")
            out[p.stem] = tiers[0].events()
        return out
    return annotations.parse_csv_annotations(src.read_text())


def cmd_aggregate(args, cfg: RunConfig) -> int:
    grid = cfg.features.grid()
    per_annotator = [_load_annotator(Path(s), grid) for s in args.annotators]
    voted = annotations.vote_files(per_annotator, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = {}
    for fid, lab in voted.items():
        lines = ["frame,label"] + [f"{t},{int(v)}" for t, v in enumerate(lab)]
        (out / f"{fid}.labels.csv").write_text("\n".join(lines) + "\n")
        events = segmentation.labels_to_events(lab, grid)
        (out / f"{fid}.events.csv").write_text(segmentation.events_to_csv(events))
        table[fid] = events
    (out / "voted.csv").write_text(annotations.annotations_to_csv(table))
    (out / "manifest.json").write_text(_json({
        "kind": "annotations", "annotators": [str(a) for a in args.annotators],
        "config": cfg.to_dict(), "config_hash": cfg.hash(),
        "files": [{"id": f} for f in voted]}))
    print(_json({"files": len(voted), "annotators": len(per_annotator)}), end="")
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    src = Path(args.source)
    if src.is_dir():
        ids = list(_feature_files(src))
    else:
        ids = [l.strip() for l in src.read_text().splitlines() if l.strip()]
    text = annotations.split_manifest(ids, cfg.split.train_frac,
                                      cfg.split.seed if args.seed is None else args.seed)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crstc", description=__doc__)
    p.add_argument("--version", action="store_true", help="print version as JSON and exit")
    p.add_argument("--config-dump", action="store_true",
                   help="print the resolved config (defaults + --config) and exit")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
        sp.add_argument("--jobs", type=int, default=1, help="parallel files")

    sp = sub.add_parser("features", help="WAV directory -> log-mel feature matrices")
    common(sp)
    sp.add_argument("wav_dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("bin", "csv"), default="bin",
                    help="csv also writes a CSV copy next to each binary matrix")

    sp = sub.add_parser("synth", help="synthetic dataset with ground-truth domains")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("train", help="fit the ST-VAE on a feature directory")
    common(sp)
    sp.add_argument("features")
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", help="split manifest JSON; trains on its 'train' ids")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("segment", help="cluster transition embeddings into events")
    common(sp)
    sp.add_argument("features")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--reference", help="ground-truth dir for eval-mode cluster mapping")
    sp.add_argument("--method", choices=("kmeans", "bisecting", "meanshift"))
    sp.add_argument("--k")
    sp.add_argument("--bandwidth", type=float)
    sp.add_argument("--mapping", choices=("eval", "heuristic", "identity"))

    sp = sub.add_parser("eval", help="score segments against ground truth")
    common(sp)
    sp.add_argument("pred")
    sp.add_argument("truth")
    sp.add_argument("--out")
    sp.add_argument("--iou-threshold", type=float)
    sp.add_argument("--force", action="store_true", help="ignore config hash mismatch")

    sp = sub.add_parser("aggregate", help="majority-vote several annotators")
    common(sp)
    sp.add_argument("annotators", nargs="+", help="annotation CSV files or TextGrid directories")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("split", help="seeded train/test split manifest")
    common(sp)
    sp.add_argument("source", help="feature directory or text file of ids")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    return p


COMMANDS = {"features": cmd_features, "synth": cmd_synth, "train": cmd_train,
            "segment": cmd_segment, "eval": cmd_eval, "aggregate": cmd_aggregate,
            "split": cmd_split}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.version:
            print(json.dumps({"name": "crstc", "version": __version__}))
            return 0
        if args.config_dump:
            cfg = RunConfig.load(args.config) if args.config else RunConfig()
            sys.stdout.write(cfg.dump())
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            return 2
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (CLIError, ValueError, OSError, FloatingPointError, KeyError) as exc:
        print(f"crstc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
