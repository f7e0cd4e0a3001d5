"""Command-line face of the package.

Subcommands: eval, attack, detect, calibrate, sweep-pad, sweep-threshold,
plot. Every flag can also be set in a sectioned key=value config file
(--config); explicit flags win over the file. Epsilon is given in integer
intensity levels (e.g. 4) and divided by 255 internally.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .attacks import AttackConfig, run_attack
from .adapter import AdaptationConfig
from .detector import DetectorConfig, detect, export_calibration_curve, similarity_shift
from .encoders import ClassifierConfig, DEFAULT_TEMPLATE, encode_text_prototypes, make_backend
from .errors import ConfigurationError, IngestionError, InvalidArgumentError
from .images import load_image, save_image
from .padding import PaddingPattern
from .pipeline import TtpConfig

DEFAULTS = {
    "dataset": None,
    "backend": "toy",
    "out": "ttpad_out",
    "seed": 0,
    "workers": 1,
    "limit": None,
    "template": DEFAULT_TEMPLATE,
    "threshold": 0.8,
    "pattern": "zero",
    "pattern_seed": 0,
    "pad_size": 32,
    "views": 64,
    "select_frac": 0.1,
    "lr": 5.0,
    "temperature": 0.01,
    "clean_hook": None,
    "attack": "pgd",
    "eps": 4.0,
    "steps": 100,
    "step_size": None,
    "random_start": True,
    "overshoot": 0.02,
    "margin_const": 1.0,
}

_CONFIG_SECTIONS = {
    "run": ["dataset", "backend", "out", "seed", "workers", "limit", "template", "clean_hook"],
    "detector": ["threshold", "pattern", "pattern_seed", "pad_size"],
    "adaptation": ["views", "select_frac", "lr"],
    "classifier": ["temperature"],
    "attack": ["attack", "eps", "steps", "step_size", "random_start", "overshoot", "margin_const"],
}

_INT_KEYS = {"seed", "workers", "limit", "pattern_seed", "pad_size", "views", "steps"}
_FLOAT_KEYS = {"threshold", "select_frac", "lr", "temperature", "eps", "overshoot", "margin_const"}
_BOOL_KEYS = {"random_start"}


def _coerce(key: str, raw: str):
    if raw in ("", "none", "None", "auto"):
        return None
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def _load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise InvalidArgumentError(f"config file not found: {path}")
    settings = {}
    for section, keys in _CONFIG_SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if parser.has_option(section, key):
                settings[key] = _coerce(key, parser.get(section, key))
    return settings


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="sectioned key=value config file; flags override it")
    p.add_argument("--dataset", help="dataset root (one subdirectory per class)")
    p.add_argument("--backend", help="encoder backend id, e.g. toy or toy:seed=7,dim=64,res=96")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--limit", type=int, help="evaluate at most this many samples")
    p.add_argument("--template", help="prompt template containing [CLASS]")
    p.add_argument("--pad-size", dest="pad_size", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--pattern", choices=["zero", "white", "random"])
    p.add_argument("--views", type=int)
    p.add_argument("--select-frac", dest="select_frac", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--clean-hook", dest="clean_hook", help="clean-branch strategy id")
    p.add_argument("--attack", choices=["fgsm", "pgd", "cw", "deepfool", "none"])
    p.add_argument("--eps", type=float, help="perturbation bound in intensity levels (4 means 4/255)")
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", dest="step_size", help="attack step size in levels, or 'auto'")
    p.add_argument("--no-random-start", dest="random_start", action="store_false", default=None)
    p.add_argument("--overshoot", type=float)
    p.add_argument("--margin-const", dest="margin_const", type=float)


def _resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(_load_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if isinstance(settings.get("step_size"), str):
        settings["step_size"] = _coerce("step_size", settings["step_size"])
        if settings["step_size"] is not None:
            settings["step_size"] = float(settings["step_size"])
    return settings


def _ttp_config(s: dict) -> TtpConfig:
    return TtpConfig(
        detector=DetectorConfig(
            threshold=s["threshold"],
            pattern=PaddingPattern(kind=s["pattern"], seed=s["pattern_seed"]),
            pad_width=s["pad_size"],
        ),
        adaptation=AdaptationConfig(
            num_views=s["views"], select_fraction=s["select_frac"], lr=s["lr"], seed=s["seed"]
        ),
        classifier=ClassifierConfig(temperature=s["temperature"]),
        pad_width=max(s["pad_size"], 1),
        clean_branch_hook=s["clean_hook"],
    )


def _attack_config(s: dict) -> AttackConfig | None:
    if s["attack"] in (None, "none"):
        return None
    step = s["step_size"]
    return AttackConfig(
        kind=s["attack"],
        epsilon=s["eps"] / 255.0,
        steps=s["steps"],
        step_size=None if step is None else step / 255.0,
        random_start=s["random_start"],
        overshoot=s["overshoot"],
        margin_const=s["margin_const"],
        seed=s["seed"],
    )


def _run_config(s: dict) -> harness.RunConfig:
    if not s["dataset"]:
        raise InvalidArgumentError("--dataset is required (or set it in the config file)")
    return harness.RunConfig(
        dataset=s["dataset"],
        backend=s["backend"],
        ttp=_ttp_config(s),
        attack=_attack_config(s),
        template=s["template"],
        limit=s["limit"],
        workers=s["workers"],
        seed=s["seed"],
    )


def _prepare_out(s: dict, cfg: harness.RunConfig) -> Path:
    """Write the effective configuration before any sample is processed."""
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        grid, t = [], lo
        while t <= hi + 1e-12:
            grid.append(round(t, 12))
            t += step
        return grid
    return [float(x) for x in spec.split(",")]


def cmd_eval(args) -> int:
    s = _resolve(args)
    cfg = _run_config(s)
    out = _prepare_out(s, cfg)
    summary, records = harness.run_benchmark(cfg)
    paths = harness.emit_report(summary, records, out, run_config=cfg.to_dict())
    print(f"records: {paths['records']}")
    print(
        f"Acc={summary.clean_accuracy} Rob={summary.robust_accuracy} "
        f"Det={summary.detection_accuracy} n={summary.n_clean + summary.n_attacked} "
        f"failures={summary.failures}"
    )
    return 0


def cmd_attack(args) -> int:
    s = _resolve(args)
    cfg = _run_config(s)
    if cfg.attack is None:
        raise InvalidArgumentError("attack subcommand needs --attack != none")
    out = _prepare_out(s, cfg)
    manifest = harness.load_dataset(cfg.dataset, template=cfg.template)
    enc = make_backend(cfg.backend)
    protos = encode_text_prototypes(enc, list(manifest.class_names), manifest.template)
    samples = manifest.samples[: cfg.limit] if cfg.limit else manifest.samples
    adv_dir = out / "adv"
    manifest_path = out / "attack_manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for rel, label in samples:
            image = load_image(manifest.root / rel)
            attack_cfg = replace(cfg.attack, seed=harness.sample_seed(cfg.seed, rel))
            adv = run_attack(enc, protos, cfg.ttp.classifier, image, label, attack_cfg)
            dest = adv_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            save_image(adv, dest)
            fh.write(
                json.dumps(
                    {
                        "source": str(manifest.root / rel),
                        "adversarial": str(dest),
                        "label": label,
                        "class_name": manifest.class_names[label],
                        "attack": attack_cfg.kind,
                        "config_hash": attack_cfg.config_hash(),
                        "quantized_8bit": True,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"adversarial images under {adv_dir}, manifest {manifest_path}")
    return 0


def cmd_detect(args) -> int:
    s = _resolve(args)
    cfg = _run_config(s)
    out = _prepare_out(s, cfg)
    manifest = harness.load_dataset(cfg.dataset, template=cfg.template)
    enc = make_backend(cfg.backend)
    samples = manifest.samples[: cfg.limit] if cfg.limit else manifest.samples
    rows = []
    for rel, label in samples:
        sim = similarity_shift(enc, load_image(manifest.root / rel), cfg.ttp.detector)
        rows.append(
            {
                "sample": rel,
                "label": label,
                "similarity": sim,
                "verdict": detect(sim, cfg.ttp.detector).label,
            }
        )
    path = out / "detections.csv"
    harness.write_curve_csv(rows, path)
    n_adv = sum(1 for r in rows if r["verdict"] == "adversarial")
    print(f"{len(rows)} samples, {n_adv} flagged adversarial -> {path}")
    return 0


def _similarity_pools(cfg: harness.RunConfig) -> tuple[list[float], list[float]]:
    enc, _, clean_pool, adv_pool = harness._load_pools(cfg)
    if not adv_pool:
        raise InvalidArgumentError("calibration needs an attack configuration")
    clean_sims = [similarity_shift(enc, img, cfg.ttp.detector) for _, _, img in clean_pool]
    adv_sims = [similarity_shift(enc, img, cfg.ttp.detector) for _, _, img in adv_pool]
    return clean_sims, adv_sims


def cmd_calibrate(args) -> int:
    from .detector import calibrate_threshold

    s = _resolve(args)
    cfg = _run_config(s)
    out = _prepare_out(s, cfg)
    grid = _parse_grid(args.grid)
    clean_sims, adv_sims = _similarity_pools(cfg)
    best, curve = calibrate_threshold(clean_sims, adv_sims, grid)
    path = out / "calibration.csv"
    export_calibration_curve(curve, path)
    print(f"best threshold {best} (curve -> {path})")
    return 0


def cmd_sweep_pad(args) -> int:
    from .plots import curve_plot

    s = _resolve(args)
    cfg = _run_config(s)
    out = _prepare_out(s, cfg)
    sizes = [int(x) for x in args.sizes.split(",")]
    rows = harness.sweep_padding_size(cfg, sizes)
    csv_path = out / "pad_sweep.csv"
    harness.write_curve_csv(rows, csv_path)
    curve_plot(
        rows,
        "pad_size",
        ["mean_clean_similarity", "mean_adv_similarity"],
        out / "pad_sweep_similarity.png",
        xlabel="padding size",
        ylabel="mean cosine similarity",
    )
    curve_plot(
        rows,
        "pad_size",
        ["detection_accuracy", "robust_accuracy"],
        out / "pad_sweep_accuracy.png",
        xlabel="padding size",
        ylabel="accuracy (%)",
    )
    print(f"{len(rows)} sizes -> {csv_path}")
    return 0


def cmd_sweep_threshold(args) -> int:
    from .plots import curve_plot

    s = _resolve(args)
    cfg = _run_config(s)
    out = _prepare_out(s, cfg)
    grid = _parse_grid(args.grid)
    best, rows = harness.sweep_threshold(cfg, grid)
    csv_path = out / "threshold_sweep.csv"
    harness.write_curve_csv(rows, csv_path)
    curve_plot(
        rows,
        "threshold",
        ["detection_accuracy"],
        out / "threshold_sweep.png",
        xlabel="detection threshold",
        ylabel="detection accuracy (%)",
    )
    print(f"best threshold {best} -> {csv_path}")
    return 0


def cmd_plot(args) -> int:
    from .plots import curve_plot, similarity_histogram

    out = Path(args.out or "ttpad_out")
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if args.records:
        records = harness.read_records(args.records)
        clean = [r.similarity for r in records if r.attack_kind == harness.NO_ATTACK and r.similarity is not None]
        adv = [r.similarity for r in records if r.attack_kind != harness.NO_ATTACK and r.similarity is not None]
        path = out / "similarity_hist.png"
        similarity_histogram(clean, adv, path)
        made.append(path)
    if args.curve:
        import csv as csv_mod

        with open(args.curve) as fh:
            rows = []
            for row in csv_mod.DictReader(fh):
                rows.append({k: (float(v) if v not in ("", None) else None) for k, v in row.items()})
        x_key = list(rows[0].keys())[0]
        y_keys = [k for k in rows[0].keys() if k != x_key]
        path = out / (Path(args.curve).stem + ".png")
        curve_plot(rows, x_key, y_keys, path, xlabel=x_key)
        made.append(path)
    if not made:
        raise InvalidArgumentError("plot needs --records and/or --curve")
    print("wrote: " + ", ".join(str(p) for p in made))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttpad",
        description="Test-time padding defense: detection, adaptation, attacks, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "eval": (cmd_eval, "run the full benchmark (clean + optional attack)"),
        "attack": (cmd_attack, "craft and persist adversarial images plus a manifest"),
        "detect": (cmd_detect, "similarity shift + verdict for every sample"),
        "calibrate": (cmd_calibrate, "grid-search the detection threshold"),
        "sweep-pad": (cmd_sweep_pad, "padding-size ablation curves"),
        "sweep-threshold": (cmd_sweep_threshold, "threshold ablation curve"),
        "plot": (cmd_plot, "render plots from saved records/curves"),
    }
    for name, (fn, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        _add_shared_flags(p)
        p.set_defaults(fn=fn)
        if name == "attack":
            # --kind is an alias for --attack on this subcommand
            p.add_argument("--kind", dest="attack", choices=["fgsm", "pgd", "cw", "deepfool"])
        if name == "calibrate":
            p.add_argument("--grid", default="0.5:0.95:0.05", help="lo:hi:step or comma list")
        if name == "sweep-threshold":
            p.add_argument("--grid", default="0.5:0.95:0.05", help="lo:hi:step or comma list")
        if name == "sweep-pad":
            p.add_argument("--sizes", default="0,4,8,16,32,64", help="comma-separated pad sizes")
        if name == "plot":
            p.add_argument("--records", help="records.jsonl to histogram")
            p.add_argument("--curve", help="curve csv to render")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidArgumentError, ConfigurationError, IngestionError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
