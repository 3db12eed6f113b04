"""Command line entry point: fixture, understand, assemble, pipeline and diffusion-lab.

Configuration comes from defaults, then an optional TOML/JSON file, then flags.
Exit codes: 0 success, 2 configuration error, 3 unreadable input, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import assembly, files
from .fixtures import FixtureConfig

log = logging.getLogger("isoscene")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_STAGE = 0, 2, 3, 4
SKETCH_CATEGORIES = ("water", "building", "bridge", "road", "tree")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"stage {stage} failed: {exc}")


@dataclass
class ScheduleConfig:
    T: int = 200
    start: float = 0.9999
    end: float = 1e-4


@dataclass
class DiffusionConfig:
    samples: int = 10_000
    fit_samples: int = 100_000
    t_bins: int = 10
    rounds: int = 8
    batch: int = 20_000
    unroll: bool = False
    unroll_start: float = 0.5
    unroll_prob: float = 0.5
    target_mean: float = 3.0
    target_var: float = 4.0


@dataclass
class PipelineConfig:
    seed: int = 0
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    sal_sigma: float = 2.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    bed_offset: float = 0.5
    feather: int = 5
    texel_per_cell: int = 4
    manifest: str | None = None
    out: str | None = None


_SECTIONS = {"fixture": FixtureConfig, "schedule": ScheduleConfig, "diffusion": DiffusionConfig}


def _coerce(name, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{name} must be a list of {len(default)} numbers")
        return tuple(float(v) for v in value)
    return value


def _merge_section(obj, values, prefix):
    if not isinstance(values, dict):
        raise ConfigError(f"[{prefix}] must be a table")
    names = {f.name for f in fields(obj)}
    for k, v in values.items():
        if k not in names:
            raise ConfigError(f"unknown option {prefix}.{k}")
        cur = getattr(obj, k)
        if k == "object_count" and v is not None:
            cur = 0  # optional integer
        setattr(obj, k, _coerce(f"{prefix}.{k}", v, cur))


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Defaults < file < overrides (a flat dict, dotted keys for sections)."""
    cfg = PipelineConfig()
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            text = p.read_text()
            data = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    top = {f.name for f in fields(cfg)}
    for k, v in data.items():
        if k in _SECTIONS:
            _merge_section(getattr(cfg, k), v, k)
        elif k in top:
            setattr(cfg, k, _coerce(k, v, getattr(cfg, k)))
        else:
            raise ConfigError(f"unknown option {k}")
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        if "." in key:
            sec, name = key.split(".", 1)
            _merge_section(getattr(cfg, sec), {name: v}, sec)
        else:
            setattr(cfg, key, _coerce(key, v, getattr(cfg, key)))
    return cfg


def config_dict(cfg: PipelineConfig):
    d = asdict(cfg)
    d.pop("out", None)
    return d


def _out_dir(cfg):
    if cfg.out is None:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    return out


def _library(cfg):
    if cfg.manifest is None:
        return assembly.default_library()
    if not Path(cfg.manifest).is_file():
        raise ConfigError(f"asset manifest {cfg.manifest} not found")
    return assembly.load_manifest(cfg.manifest)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (files.InputParseError, ConfigError, FileNotFoundError):
        raise
    except (ValueError, KeyError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# stages


def run_fixture(cfg: PipelineConfig, out: Path):
    from .fixtures import generate_random_scene, render_bev, render_isometric
    from .sketch import SketchMap
    from .scene import CATEGORIES

    scene = _stage("fixture", generate_random_scene, cfg.seed, cfg.fixture)
    frame = _stage("fixture", render_isometric, scene)
    color, heights, labels = _stage("fixture", render_bev, scene)
    out.mkdir(exist_ok=True)
    files.write_frame(frame, out / "frame")
    sketch = SketchMap.from_labels(frame.semantic, {c: CATEGORIES[c] for c in SKETCH_CATEGORIES})
    files.write_sketch(sketch, out / "sketch")
    truth = out / "truth"
    truth.mkdir(exist_ok=True)
    (truth / "scene.json").write_text(scene.to_json() + "\n")
    files.write_png(truth / "bev_color.png", files.to_uint8(color))
    files.write_heightmap(scene.terrain, truth)
    files.write_json(out / "config.json", config_dict(cfg))
    return scene, frame


def run_understand(cfg: PipelineConfig, frame, out: Path):
    from .scene import SceneDescriptor
    from .understanding import understand

    u = _stage("understand", understand, frame, None, cfg.fixture.cell_size, cfg.bed_offset, 2,
               feather=cfg.feather)
    scene = SceneDescriptor(u.heightmap, u.splat, u.placements, u.water_regions, {}, cfg.seed, frame.camera)
    out.mkdir(exist_ok=True)
    (out / "scene.json").write_text(scene.to_json() + "\n")
    files.write_heightmap(u.heightmap, out)
    files.write_splatmap(u.splat, out)
    files.write_json(out / "placements.json", [p.to_dict() for p in u.placements])
    files.write_json(out / "diagnostics.json", u.diagnostics)
    return scene


def read_scene(path):
    from .scene import SceneDescriptor

    p = Path(path)
    if p.is_dir():
        p = p / "scene.json"
    try:
        return SceneDescriptor.from_dict(files.read_json(p))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, files.InputParseError):
            raise
        raise files.InputParseError(p, f"malformed scene description ({exc})") from exc


def run_assemble(cfg: PipelineConfig, scene, library, out: Path):
    out.mkdir(exist_ok=True)
    mesh, texture, scatter, objects, diag = _stage("assemble", assembly.assemble, scene, library, cfg.seed,
                                                   cfg.texel_per_cell)
    diag["scatter_seed"] = cfg.seed
    return _stage("assemble", assembly.export_scene, out, mesh, texture, scatter, objects, scene, library, diag)


def run_diffusion_lab(cfg: PipelineConfig, sketch_dir, out: Path):
    from .diffusion import (
        DiffusionSchedule,
        analytic_gaussian_predictor,
        ancestral_sample,
        fit_linear_predictor,
        linear_oracle_coefficients,
        train_linear_predictor,
    )
    from .sketch import sal_weights

    d = cfg.diffusion
    sched = _stage("diffusion-lab", DiffusionSchedule.linear, cfg.schedule.T, cfg.schedule.start, cfg.schedule.end)
    seeds = [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(cfg.seed).spawn(4)]
    data = np.random.default_rng(seeds[0]).standard_normal(d.fit_samples)
    # exact first two moments, so the oracle for N(0, 1) applies to the sample
    data = (data - data.mean()) / data.std()

    fitted = _stage("diffusion-lab", fit_linear_predictor, data, sched, d.t_bins, d.fit_samples, seeds[1])
    oa, ob = linear_oracle_coefficients(0.0, 1.0, sched, d.t_bins)
    _, history = _stage("diffusion-lab", train_linear_predictor, data, sched, d.t_bins, d.rounds, d.batch,
                        d.unroll, d.unroll_start, d.unroll_prob, seeds[2])
    pred = analytic_gaussian_predictor(d.target_mean, d.target_var, sched)
    x = ancestral_sample(pred, sched, seeds[3], d.samples)
    metrics = {
        "schedule": asdict(cfg.schedule),
        "fit": {"a": fitted.a.tolist(), "b": fitted.b.tolist(), "oracle_a": oa.tolist(), "oracle_b": ob.tolist(),
                "max_abs_error_a": float(np.abs(fitted.a - oa).max()),
                "max_abs_error_b": float(np.abs(fitted.b - ob).max())},
        "training": {"unroll": d.unroll, "unroll_start": d.unroll_start, "unroll_prob": d.unroll_prob,
                     "history": history},
        "sampling": {"target_mean": d.target_mean, "target_var": d.target_var, "n": d.samples,
                     "mean": float(x.mean()), "var": float(x.var())},
    }
    if sketch_dir is not None:
        sketch = files.read_sketch(sketch_dir)
        w = _stage("diffusion-lab", sal_weights, sketch, cfg.sal_sigma)
        metrics["sal"] = {"sigma": cfg.sal_sigma, "categories": sketch.category_names,
                          "mean": float(w.mean()), "min": float(w.min()), "max": float(w.max()),
                          "floor_fraction": float(np.mean(w <= 0.1))}
    files.write_json(out / "metrics.json", metrics)
    return metrics


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON configuration file")
    common.add_argument("--seed", type=int, help="seed (explicit; no clock-based default)")
    common.add_argument("--out", help="existing output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="isoscene", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", parents=[common], help="generate and render a synthetic scene")
    p.add_argument("--object-count", type=int)

    p = sub.add_parser("understand", parents=[common], help="frame files -> heightmap, splat, placements")
    p.add_argument("--frame", required=True, help="frame directory")
    p.add_argument("--bed-offset", type=float)
    p.add_argument("--feather", type=int)

    p = sub.add_parser("assemble", parents=[common], help="understanding outputs -> GLB bundle")
    p.add_argument("--scene", required=True, help="scene.json or a directory containing it")
    p.add_argument("--manifest", help="asset library manifest (JSON)")

    p = sub.add_parser("pipeline", parents=[common], help="fixture (or --frame) -> understand -> assemble")
    p.add_argument("--frame", help="use this frame directory instead of a generated fixture")
    p.add_argument("--manifest")
    p.add_argument("--object-count", type=int)

    p = sub.add_parser("diffusion-lab", parents=[common], help="scalar diffusion oracle experiments")
    p.add_argument("--schedule-T", type=int, dest="schedule_T")
    p.add_argument("--unroll", action="store_true", default=None)
    p.add_argument("--unroll-start", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--sal-sigma", type=float)
    p.add_argument("--sketch", help="sketch directory to report SAL weights for")
    return parser


def _overrides(args):
    ov = {"seed": args.seed, "out": args.out}
    get = lambda name: getattr(args, name, None)  # noqa: E731
    ov["fixture.object_count"] = get("object_count")
    ov["bed_offset"] = get("bed_offset")
    ov["feather"] = get("feather")
    ov["manifest"] = get("manifest")
    ov["schedule.T"] = get("schedule_T")
    ov["diffusion.unroll"] = get("unroll")
    ov["diffusion.unroll_start"] = get("unroll_start")
    ov["diffusion.samples"] = get("samples")
    ov["sal_sigma"] = get("sal_sigma")
    return ov


def _existing(path, what):
    if path is not None and not Path(path).exists():
        raise ConfigError(f"{what} {path} does not exist")
    return path


def dispatch(args):
    cfg = load_config(args.config, _overrides(args))
    out = _out_dir(cfg)
    cmd = args.command
    if cmd == "fixture":
        run_fixture(cfg, out)
    elif cmd == "understand":
        frame = files.read_frame(_existing(args.frame, "frame directory"))
        run_understand(cfg, frame, out)
    elif cmd == "assemble":
        library = _library(cfg)
        scene = read_scene(_existing(args.scene, "scene"))
        run_assemble(cfg, scene, library, out)
    elif cmd == "pipeline":
        library = _library(cfg)
        if args.frame is not None:
            frame = files.read_frame(_existing(args.frame, "frame directory"))
        else:
            run_fixture(cfg, out / "fixture")
            # read back so the result matches `understand` run on the written files
            frame = files.read_frame(out / "fixture" / "frame")
        scene = run_understand(cfg, frame, out / "understand")
        run_assemble(cfg, scene, library, out / "assemble")
    elif cmd == "diffusion-lab":
        run_diffusion_lab(cfg, _existing(args.sketch, "sketch directory"), out)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except ConfigError as exc:
        print(f"isoscene: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (files.InputParseError, FileNotFoundError) as exc:
        print(f"isoscene: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"isoscene: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
