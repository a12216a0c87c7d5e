"""Pipeline stages. Each stage reads declared inputs from the workspace, writes
its outputs and records a manifest of input/output hashes."""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..augment import AugmentPlan, augment_dataset, count_table, output_names
from ..classify import ClassifierConfig, build_classifier, extract_features, finetune, load_classifier, predict_batch
from ..classify import save_classifier
from ..data_model import (
    RECORD_FIELDS,
    DataError,
    Dataset,
    load_directory,
    load_manifest,
    load_records,
    one_vs_all_partition,
    save_records,
    split_dataset,
    write_table,
)
from ..gan.train import GanConfig, generate, load_generator, save_checkpoint, train_gan
from ..interpret import channel_histograms, frequency_spectrum, grad_cam, mean_intensity_table, pca_project
from ..interpret.figures import heatmap_overlay, histogram_panel, pca_scatter, spectrum_panel
from ..interpret.gradcam import TABLE3_HEADERS, TABLE3_METHODS, write_intensity_csv
from ..metrics import compute_metrics, confusion_matrix, format_metrics_table, metrics_rows, write_metrics_csv
from .config import METHODS, PipelineConfig
from .workspace import MissingInput, Workspace, file_sha256

log = logging.getLogger(__name__)

STAGES = ("ingest", "split", "augment", "train-gan", "generate", "train-classifier", "evaluate", "interpret", "report")


class IsolationError(RuntimeError):
    """Test images leaked into a training corpus."""


def read_table(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- ingest / split / augment ------------------------------------------------------

def ingest(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    size = cfg.data.image_size
    manifest, image_root = cfg.paths.manifest, cfg.paths.image_root
    splits: list[str] = []
    if manifest:
        mpath = Path(manifest)
        if not mpath.is_file():
            raise MissingInput("ingest", mpath)
        ds = load_manifest(mpath, size)
        rows = read_table(mpath)
        splits = [(r.get("split") or "").strip().lower() for r in rows]
        base = mpath.parent.resolve()
    elif image_root:
        base = Path(image_root)
        if not base.is_dir():
            raise MissingInput("ingest", base)
        ds = load_directory(base, size)
        base = base.resolve()
    else:
        raise MissingInput("ingest", Path("<paths.manifest or paths.image_root>"))
    if len(ds) == 0:
        raise DataError("ingest found no images")
    # store source paths relative to the corpus root so tables do not depend on where it lives
    recs = []
    for r in ds:
        src = Path(r.source_path)
        try:
            src = src.resolve().relative_to(base)
        except ValueError:
            pass
        recs.append(r.with_pixels(r.pixels, source_path=src.as_posix()))
    ds = Dataset(tuple(recs))
    rows = save_records(ds, ws.path("data", "images"), ws.path("data", "records.csv"), root=ws.root)
    if any(splits):
        bad = sorted(set(splits) - {"train", "test"})
        if bad:
            raise DataError(f"manifest split column must be train or test, got {bad}")
        for row, s in zip(rows, splits):
            row["split"] = s
        write_table(ws.path("data", "records.csv"), rows, RECORD_FIELDS + ("split",))
    # the source corpus lives outside the workspace; record its manifest hash instead
    source = {"manifest_sha256": file_sha256(Path(manifest))} if manifest else {"image_root": "directory"}
    ws.write_manifest("ingest", [], ["data/records.csv", "data/images"], cfg.hash(), cfg.seed,
                      extra={"n_records": len(ds), "per_grade": ds.per_grade_counts, **source})
    log.info("ingest: %d records", len(ds))


def split(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    ws.require("split", "data/records.csv")
    table = ws.path("data", "records.csv")
    rows = read_table(table)
    ds = load_records(table, ws.root)
    preset = [r.get("split", "") for r in rows]
    if all(preset):
        is_train = [s == "train" for s in preset]
        mode = "manifest"
    else:
        if any(preset):
            warnings.warn("manifest split column is only partly filled; ignoring it", stacklevel=2)
        train, _ = split_dataset(ds, cfg.split.ratio, cfg.seed, cfg.split.by_patient)
        ids = {id(r) for r in train}
        is_train = [id(r) in ids for r in ds]
        mode = "by_patient" if cfg.split.by_patient else "by_image"
    fields = RECORD_FIELDS
    write_table(ws.path("data", "train.csv"), [r for r, t in zip(rows, is_train) if t], fields)
    write_table(ws.path("data", "test.csv"), [r for r, t in zip(rows, is_train) if not t], fields)
    _write_csv(
        ws.path("data", "split.csv"),
        ["record_id", "patient_id", "grade", "sha256", "split"],
        [[r["record_id"], r["patient_id"], r["grade"], r["sha256"], "train" if t else "test"] for r, t in zip(rows, is_train)],
    )
    ws.write_manifest("split", ["data/records.csv"], ["data/train.csv", "data/test.csv", "data/split.csv"],
                      cfg.hash(), cfg.seed, extra={"mode": mode, "n_train": sum(is_train), "n_test": len(rows) - sum(is_train)})


def augment_plan(cfg: PipelineConfig) -> AugmentPlan:
    a = cfg.augment
    kw = {}
    if a.op_mix:
        kw["op_mix"] = tuple((k, float(w)) for k, w in a.op_mix.items())
    return AugmentPlan(
        per_grade_targets=a.targets, factor=a.factor, seed=cfg.seed, strategy=a.strategy,
        size=cfg.data.image_size, min_crop_area=a.min_crop_area, crop_area=tuple(a.crop_area), **kw,
    )


def augment(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    ws.require("augment", "data/train.csv")
    train = load_records(ws.path("data", "train.csv"), ws.root)
    aug = augment_dataset(train, augment_plan(cfg))
    save_records(aug, ws.path("augmented"), ws.path("augmented", "records.csv"), output_names(aug), root=ws.root)
    rows = count_table({"original": train, "transform": aug})
    _write_csv(ws.path("augmented", "counts.csv"), list(rows[0]), [list(r.values()) for r in rows])
    ws.write_manifest("augment", ["data/train.csv"], ["augmented"], cfg.hash(), cfg.seed,
                      extra={"per_grade": aug.per_grade_counts})


# -- GAN stages ---------------------------------------------------------------------

def _gan_corpus_table(cfg: PipelineConfig) -> str:
    return "augmented/records.csv" if cfg.gan.train_on == "augmented" else "data/train.csv"


def gan_config(cfg: PipelineConfig, variant: str, grade: int) -> GanConfig:
    g = cfg.gan
    skip = {"variants", "grades", "train_on", "workers", "generate_factor", "generate_targets"}
    kw = {k: v for k, v in asdict(g).items() if k not in skip}
    kw["nce_layers"] = tuple(kw["nce_layers"])
    return GanConfig(variant=variant, seed=cfg.seed * 100 + grade, **kw)


def _selected(values, chosen):
    if chosen is None:
        return list(values)
    return [v for v in values if v == chosen] or [chosen]


def _train_one(root: str, table: str, variant: str, grade: int, gcfg: dict) -> str:
    import torch

    torch.set_num_threads(1)
    ws = Workspace(root)
    corpus = load_records(ws.path(table), ws.root)
    cfg = GanConfig(**gcfg)
    res = train_gan(one_vs_all_partition(corpus, grade), cfg)
    out = ws.path("models", "gan", variant, f"grade_{grade}")
    save_checkpoint(out, res, grade)
    return out.as_posix()


def train_gan_stage(cfg: PipelineConfig, ws: Workspace, grade=None, variant=None, **_) -> None:
    table = _gan_corpus_table(cfg)
    ws.require("train-gan", table)
    jobs = [
        (ws.root.as_posix(), table, v, g, asdict(gan_config(cfg, v, g)))
        for v in _selected(cfg.gan.variants, variant)
        for g in _selected(cfg.gan.grades, grade)
    ]
    if cfg.gan.workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=cfg.gan.workers, mp_context=ctx) as pool:
            done = list(pool.map(_train_one, *zip(*jobs)))
    else:
        done = [_train_one(*j) for j in jobs]
    for d in done:
        log.info("train-gan: wrote %s", d)
    ws.write_manifest("train-gan", [table], ["models/gan"], cfg.hash(), cfg.seed)


def generate_count(cfg: PipelineConfig, variant: str, grade: int, n_original: int) -> int:
    targets = (cfg.gan.generate_targets or {}).get(variant)
    if targets and grade in targets:
        return int(targets[grade])
    factor = cfg.gan.generate_factor if cfg.gan.generate_factor is not None else 1.0
    return max(1, int(np.floor(factor * n_original + 0.5)))


def generate_stage(cfg: PipelineConfig, ws: Workspace, grade=None, variant=None, **_) -> None:
    table = _gan_corpus_table(cfg)
    variants = _selected(cfg.gan.variants, variant)
    grades = _selected(cfg.gan.grades, grade)
    ws.require("generate", "data/train.csv", table,
               *[f"models/gan/{v}/grade_{g}/manifest.json" for v in variants for g in grades])
    originals = load_records(ws.path("data", "train.csv"), ws.root).per_grade_counts
    corpus = load_records(ws.path(table), ws.root)
    for v in variants:
        for g in grades:
            G, _ = load_generator(ws.path("models", "gan", v, f"grade_{g}"))
            sources = one_vs_all_partition(corpus, g).trainA
            n = generate_count(cfg, v, g, originals.get(g, 0))
            gen = generate(G, sources, g, n, variant=v)
            gdir = ws.path("generated", v, f"grade_{g}")
            names = [f"grade_{g}/gen_{i:05d}.png" for i in range(len(gen))]
            save_records(gen, ws.path("generated", v), gdir / "records.csv", names, root=ws.root)
            log.info("generate: %s grade %d -> %d images", v, g, n)
        # combined per-variant table over every grade generated so far
        rows = []
        for p in sorted(ws.path("generated", v).glob("grade_*/records.csv")):
            rows.extend(read_table(p))
        for i, r in enumerate(rows):
            r["record_id"] = i
        write_table(ws.path("generated", v, "records.csv"), rows)
    ws.write_manifest("generate", ["models/gan", table], ["generated"], cfg.hash(), cfg.seed)


# -- classifier stages ----------------------------------------------------------------

def corpus_tables(cfg: PipelineConfig, method: str) -> list[str]:
    """Workspace tables that make up the training corpus for ``method``."""
    if method == "original":
        return ["data/train.csv"]
    if method == "transform":
        return ["augmented/records.csv"]
    gen = f"generated/{method}/records.csv"
    compose = cfg.classifier.compose
    if compose == "alone":
        return [gen]
    if compose == "with_transforms":
        return ["augmented/records.csv", gen]
    return ["data/train.csv", gen]


def load_corpus(ws: Workspace, tables) -> Dataset:
    ds = Dataset()
    for t in tables:
        ds = ds + load_records(ws.path(t), ws.root)
    return ds


def method_images(ws: Workspace, method: str) -> Dataset:
    """Images a method contributes by itself (for image statistics and Grad-CAM)."""
    if method == "original":
        return load_records(ws.path("data", "train.csv"), ws.root)
    if method == "transform":
        aug = load_records(ws.path("augmented", "records.csv"), ws.root)
        return Dataset(tuple(r for r in aug if r.provenance == "transform"))
    return load_records(ws.path("generated", method, "records.csv"), ws.root)


def classifier_config(cfg: PipelineConfig, backbone: str) -> ClassifierConfig:
    c = cfg.classifier
    return ClassifierConfig(
        backbone=backbone, pretrained=c.pretrained, weights=(c.weights or {}).get(backbone),
        trainable_scope=c.trainable_scope, epochs=c.epochs, batch_size=c.batch_size, lr=c.lr,
        weight_decay=c.weight_decay, seed=cfg.seed, image_size=cfg.data.image_size,
        profile=cfg.profile, class_weighting=c.class_weighting,
    )


def model_path(ws: Workspace, backbone: str, method: str) -> Path:
    return ws.path("models", "classifier", f"{backbone}__{method}.pt")


def train_classifier_stage(cfg: PipelineConfig, ws: Workspace, backbone=None, **_) -> None:
    backbones = _selected(cfg.classifier.backbones, backbone)
    methods = [m for m in METHODS if m in cfg.classifier.methods]
    tables = sorted({t for m in methods for t in corpus_tables(cfg, m)})
    ws.require("train-classifier", *[t for m in methods for t in corpus_tables(cfg, m)])
    for b in backbones:
        ccfg = classifier_config(cfg, b)
        for m in methods:
            corpus = load_corpus(ws, corpus_tables(cfg, m))
            val = None
            train = corpus
            if cfg.classifier.val_fraction > 0:
                train, val = split_dataset(corpus, 1 - cfg.classifier.val_fraction, cfg.seed, by_patient=False)
            model = build_classifier(ccfg)
            model, history = finetune(model, train, val, ccfg)
            path = model_path(ws, b, m)
            save_classifier(model, path, extra={"backbone": b, "method": m, "corpus": corpus_tables(cfg, m)})
            _write_csv(
                path.with_name(f"{b}__{m}_history.csv"),
                ["epoch", "train_loss", "val_accuracy"],
                [[h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_accuracy"]))] for h in history],
            )
            log.info("train-classifier: %s/%s on %d images, last val %.3f", b, m, len(train), history[-1]["val_accuracy"])
    ws.write_manifest("train-classifier", tables, ["models/classifier"], cfg.hash(), cfg.seed)


def evaluate_stage(cfg: PipelineConfig, ws: Workspace, backbone=None, **_) -> None:
    backbones = _selected(cfg.classifier.backbones, backbone)
    methods = [m for m in METHODS if m in cfg.classifier.methods]
    combos = [(b, m) for b in backbones for m in methods]
    ws.require("evaluate", "data/test.csv", *[ws.rel(model_path(ws, b, m)) for b, m in combos])
    test = load_records(ws.path("data", "test.csv"), ws.root)
    if len(test) == 0:
        raise DataError("test split is empty")
    test_hashes = test.hashes()
    isolation, results = {}, []
    for b, m in combos:
        model = load_classifier(model_path(ws, b, m))
        corpus = load_corpus(ws, corpus_tables(cfg, m))
        leaked = test_hashes & (model.train_hashes | corpus.hashes())
        isolation[f"{b}__{m}"] = {"train_hashes": len(model.train_hashes), "overlap": len(leaked)}
        if leaked:
            raise IsolationError(f"{b}/{m}: {len(leaked)} test images appear in the training corpus")
        pred, _ = predict_batch(model, test.images())
        cm = confusion_matrix(test.labels(), pred, k=6)
        _write_csv(ws.path("eval", "confusion", f"{b}__{m}.csv"), ["true\\pred", *range(1, 7)],
                   [[g, *row] for g, row in zip(range(1, 7), cm.counts.tolist())])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results.append((b, m, compute_metrics(cm)))
    rows = metrics_rows(results)
    write_metrics_csv(ws.path("eval", "metrics.csv"), rows)
    ws.path("eval", "metrics_table.txt").write_text(format_metrics_table(rows))
    ws.path("eval", "isolation.json").write_text(
        json.dumps({"test_images": len(test_hashes), "disjoint": True, "models": isolation}, indent=1, sort_keys=True) + "\n"
    )
    ws.write_manifest("evaluate", ["data/test.csv", "models/classifier"], ["eval"], cfg.hash(), cfg.seed)


# -- interpretation ---------------------------------------------------------------------

def interpret_stage(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    icfg = cfg.interpret
    backbone = icfg.backbone if icfg.backbone in cfg.classifier.backbones else cfg.classifier.backbones[0]
    methods = [m for m in TABLE3_METHODS if m in cfg.classifier.methods]
    ws.require("interpret", "data/test.csv", *[ws.rel(model_path(ws, backbone, m)) for m in methods])
    out = ws.path("interpret")
    corpora = {m: method_images(ws, m) for m in methods}

    # colour histograms and spectra per grade, one panel column per method
    hist_rows, spec_rows = [], []
    for g in range(1, 7):
        hists, spectra = {}, {}
        for m in methods:
            imgs = corpora[m].of_grade(g)
            if len(imgs) == 0:
                continue
            label = TABLE3_HEADERS[m]
            h = channel_histograms(imgs)
            hists[label] = h
            for ch, dens in h.as_dict().items():
                hist_rows.append([g, m, ch, *(f"{v:.6g}" for v in dens)])
            specs = [frequency_spectrum(px, icfg.low_radius_fraction) for px in imgs.images()]
            spectra[label] = np.mean([s.log_magnitude for s in specs], axis=0)
            low = float(np.mean([s.low_band_energy for s in specs]))
            high = float(np.mean([s.high_band_energy for s in specs]))
            spec_rows.append([g, m, len(specs), f"{low:.6g}", f"{high:.6g}", f"{high / (low + high):.6f}"])
        if hists:
            histogram_panel(hists, f"Colour histograms, grade {g}", out / "histograms" / f"grade_{g}.png")
            spectrum_panel(spectra, f"Log-magnitude spectra, grade {g}", out / "spectra" / f"grade_{g}.png")
    _write_csv(out / "histograms.csv", ["grade", "method", "channel", *[f"bin{i}" for i in range(256)]], hist_rows)
    _write_csv(out / "spectra.csv", ["grade", "method", "n_images", "low_band_energy", "high_band_energy", "high_fraction"], spec_rows)

    # PCA of penultimate features on the untouched test split
    test = load_records(ws.path("data", "test.csv"), ws.root)
    models = {m: load_classifier(model_path(ws, backbone, m)) for m in methods}
    pca_rows = []
    for m in methods:
        feats = extract_features(models[m], test.images())
        try:
            emb = pca_project(feats, 2, labels=test.labels())
        except ValueError as exc:
            try:
                emb = pca_project(feats, 2)
            except ValueError:
                warnings.warn(f"PCA skipped for {m}: {exc}", stacklevel=2)
                continue
        pca_scatter(emb, f"{TABLE3_HEADERS[m]} ({backbone})", out / "pca" / f"{m}.png")
        sep = "" if emb.separability is None else f"{emb.separability:.6f}"
        pca_rows.append([m, backbone, *(f"{r:.6f}" for r in emb.explained_variance_ratio), sep])
    _write_csv(out / "pca.csv", ["method", "backbone", "explained_pc1", "explained_pc2", "silhouette"], pca_rows)

    # Grad-CAM over each method's own images
    allow = icfg.allow_vit
    if backbone == "vit" and not allow:
        raise DataError("Grad-CAM on the ViT backbone needs interpret.allow_vit: true")
    groups: dict = {}
    cam_rows = []
    for m in methods:
        for g in range(1, 7):
            imgs = corpora[m].of_grade(g)
            hms = []
            for k, rec in enumerate(list(imgs)[: icfg.max_images_per_group]):
                target = None if icfg.target == "predicted" else rec.grade
                hm = grad_cam(models[m], rec.pixels, target_class=target, allow_token_grid=allow)
                hms.append(hm)
                cam_rows.append([g, m, k, rec.sha256[:16], hm.target_class, f"{hm.mean_intensity:.4f}"])
                if k < icfg.overlays_per_group:
                    heatmap_overlay(rec.pixels, hm.grid, out / "gradcam" / m / f"grade_{g}_{k}.png", icfg.overlay_alpha)
            groups[(g, m)] = hms
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = mean_intensity_table(groups, methods=TABLE3_METHODS)
    write_intensity_csv(out / "mean_intensity.csv", table)
    _write_csv(out / "gradcam.csv", ["grade", "method", "index", "image_sha256", "target_class", "mean_intensity"], cam_rows)
    ws.write_manifest("interpret", ["data/test.csv", "models/classifier"], ["interpret"], cfg.hash(), cfg.seed)


def run_stage(stage: str, cfg: PipelineConfig, ws: Workspace | None = None, **selectors) -> None:
    from .report import report_stage

    ws = ws or Workspace(cfg.workspace)
    fn = {
        "ingest": ingest,
        "split": split,
        "augment": augment,
        "train-gan": train_gan_stage,
        "generate": generate_stage,
        "train-classifier": train_classifier_stage,
        "evaluate": evaluate_stage,
        "interpret": interpret_stage,
        "report": report_stage,
    }[stage]
    ws.root.mkdir(parents=True, exist_ok=True)
    fn(cfg, ws, **selectors)
