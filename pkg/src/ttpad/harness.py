"""Dataset ingestion, benchmark runs, metrics, ablation sweeps, and persistence.

Datasets follow the directory-per-class layout (an optional ``classes.txt``
fixes class ordering). Every evaluation writes one line-delimited JSON record
per (sample, variant); metrics are always recomputable from those records.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .attacks import AttackConfig, run_attack
from .detector import calibrate_threshold, detection_accuracy, similarity_shift
from .encoders import ClassPrototypeSet, EncoderHandle, encode_text_prototypes, make_backend
from .encoders import DEFAULT_TEMPLATE
from .errors import IngestionError, InvalidArgumentError
from .images import ImageBuffer, image_from_array, load_image, save_image
from .pipeline import PredictionOutcome, TtpConfig, ttp_predict

logger = logging.getLogger(__name__)

NO_ATTACK = "none"


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    class_names: tuple[str, ...]
    template: str
    split: str
    samples: tuple[tuple[str, int], ...]  # (relative path, label index)

    @property
    def sample_count(self) -> int:
        return len(self.samples)


def load_dataset(root: str | Path, template: str = DEFAULT_TEMPLATE, split: str = "test") -> DatasetManifest:
    """Scan a directory-per-class tree into a manifest with deterministic ordering."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root does not exist: {root}")
    class_file = root / "classes.txt"
    if class_file.is_file():
        names = [line.strip() for line in class_file.read_text().splitlines() if line.strip()]
        missing = [n for n in names if not (root / n).is_dir()]
        if missing:
            raise IngestionError(f"classes.txt lists missing class directories: {missing}")
    else:
        names = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not names:
        raise IngestionError(f"no class directories under {root}")
    samples = []
    for label, name in enumerate(names):
        files = sorted(
            p for p in (root / name).iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp"}
        )
        for p in files:
            samples.append((str(p.relative_to(root)), label))
    if not samples:
        raise IngestionError(f"no images found under {root}")
    return DatasetManifest(
        root=root,
        class_names=tuple(names),
        template=template,
        split=split,
        samples=tuple(samples),
    )


def make_synthetic_dataset(
    root: str | Path,
    class_names: list[str],
    per_class: int,
    size: int = 48,
    seed: int = 0,
    noise: float = 20.0,
) -> DatasetManifest:
    """Write a small synthetic dataset (smooth per-class pattern + noise) for offline runs."""
    root = Path(root)
    rng = np.random.Generator(np.random.PCG64(seed))
    for name in class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
        base = rng.uniform(40.0, 215.0, size=(4, 4, 3))
        base_t = torch.as_tensor(base)
        from .encoders import resize_pixels

        pattern = resize_pixels(base_t, (size, size)).numpy()
        for i in range(per_class):
            jitter = rng.normal(0.0, noise, size=pattern.shape) if noise > 0 else 0.0
            arr = np.clip(pattern + jitter, 0.0, 255.0)
            save_image(image_from_array(arr), root / name / f"{name}_{i:03d}.png")
    return load_dataset(root)


@dataclass(frozen=True)
class EvaluationRecord:
    """One evaluated (sample, variant) outcome, flat enough for a JSON line."""

    sample_id: str
    true_label: int
    class_name: str
    attack_kind: str
    similarity: float | None
    verdict: str | None
    predicted_class: int
    correct: bool
    mean_entropy: float | None
    selected_view_count: int
    adaptation_steps: int
    degraded: bool
    failed: bool
    error: str | None
    wall_time_ms: float

    def __post_init__(self):
        if not self.failed and self.correct != (self.predicted_class == self.true_label):
            raise InvalidArgumentError("correct flag inconsistent with labels")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "EvaluationRecord":
        return EvaluationRecord(**d)


@dataclass(frozen=True)
class MetricsSummary:
    clean_accuracy: float | None
    robust_accuracy: float | None
    detection_accuracy: float | None
    n_clean: int
    n_attacked: int
    failures: int
    per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.clean_accuracy, self.robust_accuracy, self.detection_accuracy):
            if v is not None and not (0.0 <= v <= 100.0):
                raise InvalidArgumentError("percentages must lie in [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(records: list[EvaluationRecord]) -> MetricsSummary:
    """Clean/robust/detection accuracy (percent) plus a per-class breakdown."""
    if not records:
        raise InvalidArgumentError("no records to summarize")
    ok = [r for r in records if not r.failed]
    clean = [r for r in ok if r.attack_kind == NO_ATTACK]
    attacked = [r for r in ok if r.attack_kind != NO_ATTACK]

    def pct(hits: int, total: int) -> float | None:
        return 100.0 * hits / total if total else None

    detection_hits = sum(
        1 for r in ok if (r.verdict == "adversarial") == (r.attack_kind != NO_ATTACK)
    )
    per_class: dict[str, dict[str, int]] = {}
    for r in ok:
        row = per_class.setdefault(
            r.class_name, {"clean_correct": 0, "clean_total": 0, "adv_correct": 0, "adv_total": 0}
        )
        if r.attack_kind == NO_ATTACK:
            row["clean_total"] += 1
            row["clean_correct"] += int(r.correct)
        else:
            row["adv_total"] += 1
            row["adv_correct"] += int(r.correct)
    return MetricsSummary(
        clean_accuracy=pct(sum(r.correct for r in clean), len(clean)),
        robust_accuracy=pct(sum(r.correct for r in attacked), len(attacked)),
        detection_accuracy=pct(detection_hits, len(ok)),
        n_clean=len(clean),
        n_attacked=len(attacked),
        failures=sum(r.failed for r in records),
        per_class=per_class,
    )


@dataclass(frozen=True)
class RunConfig:
    """Everything a benchmark run needs; flags and config files both build this."""

    dataset: str
    backend: str = "toy"
    ttp: TtpConfig = field(default_factory=TtpConfig)
    attack: AttackConfig | None = field(default_factory=AttackConfig)
    template: str = DEFAULT_TEMPLATE
    limit: int | None = None
    workers: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset,
            "backend": self.backend,
            "template": self.template,
            "limit": self.limit,
            "workers": self.workers,
            "seed": self.seed,
            "ttp": {
                "pad_width": self.ttp.pad_width,
                "clean_branch_hook": self.ttp.clean_branch_hook,
                "detector": {
                    "threshold": self.ttp.detector.threshold,
                    "pattern": self.ttp.detector.pattern.kind.value,
                    "pattern_seed": self.ttp.detector.pattern.seed,
                    "pad_width": self.ttp.detector.pad_width,
                },
                "adaptation": {
                    "num_views": self.ttp.adaptation.num_views,
                    "select_fraction": self.ttp.adaptation.select_fraction,
                    "lr": self.ttp.adaptation.lr,
                },
                "classifier": {"temperature": self.ttp.classifier.temperature},
            },
            "attack": None if self.attack is None else asdict(self.attack),
        }
        return d


def sample_seed(run_seed: int, sample_id: str) -> int:
    """Per-sample seed tied to the sample identity, not its batch position."""
    digest = hashlib.sha256(f"{run_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _record_from_outcome(
    sample_id: str,
    label: int,
    class_name: str,
    attack_kind: str,
    outcome: PredictionOutcome,
) -> EvaluationRecord:
    entropies = outcome.entropies
    return EvaluationRecord(
        sample_id=sample_id,
        true_label=label,
        class_name=class_name,
        attack_kind=attack_kind,
        similarity=outcome.similarity,
        verdict=outcome.verdict.label,
        predicted_class=outcome.predicted_class,
        correct=outcome.predicted_class == label,
        mean_entropy=float(np.mean(entropies)) if entropies else None,
        selected_view_count=outcome.selected_view_count,
        adaptation_steps=outcome.adaptation_steps,
        degraded=outcome.degraded,
        failed=False,
        error=None,
        wall_time_ms=outcome.wall_time * 1000.0,
    )


def _failure_record(sample_id: str, label: int, class_name: str, attack_kind: str, err: Exception) -> EvaluationRecord:
    return EvaluationRecord(
        sample_id=sample_id,
        true_label=label,
        class_name=class_name,
        attack_kind=attack_kind,
        similarity=None,
        verdict=None,
        predicted_class=-1,
        correct=False,
        mean_entropy=None,
        selected_view_count=0,
        adaptation_steps=0,
        degraded=False,
        failed=True,
        error=f"{type(err).__name__}: {err}",
        wall_time_ms=0.0,
    )


def _evaluate_sample(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg: RunConfig,
    manifest: DatasetManifest,
    sample: tuple[str, int],
) -> list[EvaluationRecord]:
    rel, label = sample
    class_name = manifest.class_names[label]
    seed = sample_seed(cfg.seed, rel)
    records = []
    try:
        image = load_image(manifest.root / rel)
        outcome = ttp_predict(enc, protos, cfg.ttp, image, seed=seed)
        records.append(_record_from_outcome(rel, label, class_name, NO_ATTACK, outcome))
    except Exception as err:
        logger.warning("clean evaluation failed for %s", rel, exc_info=True)
        return [_failure_record(rel, label, class_name, NO_ATTACK, err)]
    if cfg.attack is not None:
        try:
            attack_cfg = replace(cfg.attack, seed=seed)
            adv = run_attack(enc, protos, cfg.ttp.classifier, image, label, attack_cfg)
            adv_outcome = ttp_predict(enc, protos, cfg.ttp, adv, seed=seed + 1)
            records.append(
                _record_from_outcome(rel, label, class_name, attack_cfg.kind, adv_outcome)
            )
        except Exception as err:
            logger.warning("attacked evaluation failed for %s", rel, exc_info=True)
            records.append(_failure_record(rel, label, class_name, cfg.attack.kind, err))
    return records


def run_benchmark(cfg: RunConfig) -> tuple[MetricsSummary, list[EvaluationRecord]]:
    """Evaluate every sample clean and (optionally) attacked; order-stable output."""
    manifest = load_dataset(cfg.dataset, template=cfg.template)
    enc = make_backend(cfg.backend)
    protos = encode_text_prototypes(enc, list(manifest.class_names), manifest.template)
    samples = list(manifest.samples[: cfg.limit] if cfg.limit else manifest.samples)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(
                pool.map(lambda s: _evaluate_sample(enc, protos, cfg, manifest, s), samples)
            )
    else:
        chunks = [_evaluate_sample(enc, protos, cfg, manifest, s) for s in samples]
    records = [r for chunk in chunks for r in chunk]
    return compute_metrics(records), records


# --- ablation sweeps ----------------------------------------------------------


def _load_pools(
    cfg: RunConfig,
) -> tuple[EncoderHandle, ClassPrototypeSet, list[tuple[str, int, ImageBuffer]], list[tuple[str, int, ImageBuffer]]]:
    """Clean pool and its attacked counterpart, generated once and reused."""
    manifest = load_dataset(cfg.dataset, template=cfg.template)
    enc = make_backend(cfg.backend)
    protos = encode_text_prototypes(enc, list(manifest.class_names), manifest.template)
    samples = list(manifest.samples[: cfg.limit] if cfg.limit else manifest.samples)
    clean_pool = [(rel, label, load_image(manifest.root / rel)) for rel, label in samples]
    adv_pool = []
    if cfg.attack is not None:
        for rel, label, image in clean_pool:
            attack_cfg = replace(cfg.attack, seed=sample_seed(cfg.seed, rel))
            adv_pool.append((rel, label, run_attack(enc, protos, cfg.ttp.classifier, image, label, attack_cfg)))
    return enc, protos, clean_pool, adv_pool


def sweep_padding_size(cfg: RunConfig, sizes: list[int]) -> list[dict]:
    """Similarity, detection, and robustness curves across fixed padding sizes."""
    if not sizes:
        raise InvalidArgumentError("sizes must be non-empty")
    enc, protos, clean_pool, adv_pool = _load_pools(cfg)
    rows = []
    for size in sizes:
        det_cfg = replace(cfg.ttp.detector, pad_width=size)
        clean_sims = [similarity_shift(enc, img, det_cfg) for _, _, img in clean_pool]
        adv_sims = [similarity_shift(enc, img, det_cfg) for _, _, img in adv_pool]
        det_acc = (
            detection_accuracy(clean_sims, adv_sims, det_cfg.threshold) if adv_sims else None
        )
        robust_acc = None
        if adv_pool:
            # trainable padding needs width >= 1 even when detection pads by 0
            ttp_cfg = replace(cfg.ttp, detector=det_cfg, pad_width=max(size, 1))
            hits = 0
            for rel, label, img in adv_pool:
                outcome = ttp_predict(enc, protos, ttp_cfg, img, seed=sample_seed(cfg.seed, rel) + 1)
                hits += int(outcome.predicted_class == label)
            robust_acc = 100.0 * hits / len(adv_pool)
        rows.append(
            {
                "pad_size": size,
                "mean_clean_similarity": float(np.mean(clean_sims)),
                "mean_adv_similarity": float(np.mean(adv_sims)) if adv_sims else None,
                "detection_accuracy": det_acc if det_acc is None else 100.0 * det_acc,
                "robust_accuracy": robust_acc,
            }
        )
    return rows


def sweep_threshold(cfg: RunConfig, grid: list[float]) -> tuple[float, list[dict]]:
    """Detection accuracy per threshold over the evaluated pool, plus the maximizer."""
    if not grid:
        raise InvalidArgumentError("grid must be non-empty")
    enc, _, clean_pool, adv_pool = _load_pools(cfg)
    if not adv_pool:
        raise InvalidArgumentError("threshold sweep needs an attack configuration")
    clean_sims = [similarity_shift(enc, img, cfg.ttp.detector) for _, _, img in clean_pool]
    adv_sims = [similarity_shift(enc, img, cfg.ttp.detector) for _, _, img in adv_pool]
    best, curve = calibrate_threshold(clean_sims, adv_sims, grid)
    rows = [{"threshold": t, "detection_accuracy": 100.0 * acc} for t, acc in curve]
    return best, rows


# --- persistence ---------------------------------------------------------------


def write_records(records: list[EvaluationRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[EvaluationRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(EvaluationRecord.from_dict(json.loads(line)))
    return records


def write_curve_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise InvalidArgumentError("no curve rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


SUMMARY_COLUMNS = ["dataset", "backbone", "attack", "eps", "Acc", "Rob", "Det", "n", "failures"]


def write_summary_csv(summary: MetricsSummary, context: dict, path: str | Path) -> None:
    """One-row summary table with the run context columns."""

    def fmt(v) -> str:
        return "" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))

    row = {
        "dataset": context.get("dataset", ""),
        "backbone": context.get("backend", ""),
        "attack": context.get("attack_kind", NO_ATTACK),
        "eps": context.get("eps", ""),
        "Acc": fmt(summary.clean_accuracy),
        "Rob": fmt(summary.robust_accuracy),
        "Det": fmt(summary.detection_accuracy),
        "n": summary.n_clean + summary.n_attacked,
        "failures": summary.failures,
    }
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerow(row)


def emit_report(
    summary: MetricsSummary,
    records: list[EvaluationRecord],
    out_dir: str | Path,
    run_config: dict | None = None,
    make_plots: bool = True,
) -> dict[str, Path]:
    """Persist records, summary, config, and the similarity histogram."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.jsonl",
        "summary": out / "summary.csv",
        "summary_json": out / "summary.json",
    }
    write_records(records, paths["records"])
    context = {}
    if run_config:
        paths["config"] = out / "config.json"
        paths["config"].write_text(json.dumps(run_config, indent=2, sort_keys=True) + "\n")
        attack = run_config.get("attack") or {}
        context = {
            "dataset": run_config.get("dataset", ""),
            "backend": run_config.get("backend", ""),
            "attack_kind": attack.get("kind", NO_ATTACK) if attack else NO_ATTACK,
            "eps": attack.get("epsilon", "") if attack else "",
        }
    write_summary_csv(summary, context, paths["summary"])
    paths["summary_json"].write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    if make_plots:
        from .plots import similarity_histogram

        clean = [r.similarity for r in records if r.attack_kind == NO_ATTACK and r.similarity is not None]
        adv = [r.similarity for r in records if r.attack_kind != NO_ATTACK and r.similarity is not None]
        if clean or adv:
            paths["similarity_hist"] = out / "similarity_hist.png"
            similarity_histogram(clean, adv, paths["similarity_hist"])
            paths["similarity_table"] = out / "similarities.csv"
            with open(paths["similarity_table"], "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["pool", "similarity"])
                for s in clean:
                    writer.writerow(["clean", repr(s)])
                for s in adv:
                    writer.writerow(["adversarial", repr(s)])
    return paths
