"""Single entry point exposing the pipeline stages as subcommands.

Every run resolves its options (defaults < config file < explicit flags),
emits the resolved config next to its primary output, and can be reproduced
byte-identically by re-running with that config.  Exit codes: 0 success,
2 usage/parameter, 3 data/format, 4 numerical, 5 unknown class.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._container import FORMAT_VERSION
from .errors import (
    DataError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    ToolkitError,
    UnknownClassError,
)
from .estimation import (
    DEFAULT_FALLBACK_MIN_COUNT,
    PriorAccumulator,
    load_bank,
    save_bank,
)
from .metrics import (
    batch_diversity,
    frechet_distance,
    furthest_point_sampling,
    oracle_segmentation_scores,
    summarize,
)
from .sampling import assemble_map, generate, sample_init
from .schedule import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_TOTAL_STEPS,
    build_schedule,
    make_timestep_plan,
    truncation_step,
)
from .tensor_io import (
    DEFAULT_IGNORE_ID,
    LabelMask,
    load_corpus,
    load_records,
    read_array,
    read_manifest,
    save_corpus,
    write_array,
)
from .toy import (
    TOY_TOTAL_STEPS,
    ToyDenoiser,
    TrainConfig,
    class_base_values,
    empirical_mismatch_study,
    make_toy_corpus,
    train_toy_denoiser,
)

DATA_DIR_ENV = "SCP_DATA_DIR"


@dataclass(frozen=True)
class Opt:
    """One CLI option: flag spelling, type, default, and path semantics."""

    name: str
    type: Callable = str
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple | None = None
    input_path: bool = False  # must exist before the command runs
    data_dir: bool = False  # relative paths may resolve under SCP_DATA_DIR

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _resolve_data_path(value: str) -> str:
    path = Path(value)
    if path.is_absolute() or path.exists():
        return value
    root = os.environ.get(DATA_DIR_ENV)
    if root and (Path(root) / path).exists():
        return str(Path(root) / path)
    return value


def _emit_config(target: Path, command: str, options: dict) -> Path:
    """Write the resolved-run record next to the command's primary output."""
    if target.is_dir():
        config_path = target / "run_config.json"
    else:
        config_path = target.with_name(target.name + ".config.json")
    payload = {
        "subcommand": command,
        "options": options,
        "toolkit_version": __version__,
        "container_format_version": FORMAT_VERSION,
    }
    config_path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return config_path


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ParameterError(f"grid must be start:stop:stride, got {text!r}")
        start, stop, stride = (float(p) for p in parts)
        if stride <= 0:
            raise ParameterError("grid stride must be positive")
        values = []
        k = 0
        while True:
            v = round(start + k * stride, 10)
            if v > stop + 1e-9:
                break
            values.append(min(v, stop))
            k += 1
        return values
    return [float(p) for p in text.split(",") if p.strip()]


def _load_mask(path: str, ignore_id: int) -> LabelMask:
    return LabelMask(read_array(path), ignore_id)


def _schedule_for_denoiser(model: ToyDenoiser, provenance: dict, opts: dict):
    beta_start = opts.get("beta_start")
    beta_end = opts.get("beta_end")
    if beta_start is None:
        beta_start = provenance.get("beta_start", DEFAULT_BETA_START)
    if beta_end is None:
        beta_end = provenance.get("beta_end", DEFAULT_BETA_END)
    return build_schedule(model.total_steps, float(beta_start), float(beta_end))


# ---------------------------------------------------------------------------
# subcommand implementations (options arrive fully resolved)
# ---------------------------------------------------------------------------


def cmd_dump_schedule(opts: dict) -> None:
    schedule = build_schedule(opts["steps"], opts["beta_start"], opts["beta_end"])
    lines = [
        f"{t}\t{schedule.alpha_bar[t]:.17g}\n" for t in range(schedule.total_steps + 1)
    ]
    if opts["out"]:
        out = Path(opts["out"])
        out.write_text("".join(lines), encoding="utf-8")
        _emit_config(out, "dump-schedule", opts)
        print(f"wrote {len(lines)}-row schedule table to {out}")
    else:
        sys.stdout.write("".join(lines))


def cmd_make_toy_corpus(opts: dict) -> None:
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = save_corpus(
        make_toy_corpus(opts["n"], opts["classes"], opts["seed"]), out_dir
    )
    _emit_config(out_dir, "make-toy-corpus", opts)
    print(f"wrote {opts['n']} records to {manifest}")


def cmd_estimate(opts: dict) -> None:
    entries = read_manifest(Path(opts["manifest"]))
    jobs = max(1, opts["jobs"])
    num_classes = opts["classes"]
    ignore_id = opts["ignore_id"]

    def shard_worker(shard):
        acc = PriorAccumulator(num_classes)
        for record in load_records(shard, ignore_id):
            acc.update(record)
        return acc

    if jobs == 1 or len(entries) < 2 * jobs:
        merged = shard_worker(entries)
    else:
        bounds = np.linspace(0, len(entries), jobs + 1, dtype=int)
        shards = [entries[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            accumulators = list(pool.map(shard_worker, shards))
        merged = accumulators[0]
        for acc in accumulators[1:]:
            merged = merged.merge(acc)
    bank = merged.finalize(opts["fallback_min"])
    out = Path(opts["out"])
    save_bank(bank, out)
    _emit_config(out, "estimate", opts)
    print(
        f"wrote bank to {out}: {bank.n_records} records, "
        f"{bank.num_classes} classes, grid {bank.height}x{bank.width}x{bank.channels}"
    )


def cmd_sample(opts: dict) -> None:
    bank = load_bank(opts["bank"])
    mask = _load_mask(opts["mask"], opts["ignore_id"])
    schedule = build_schedule(opts["steps"], opts["beta_start"], opts["beta_end"])
    on_unknown = "spatial" if opts["fallback_unknown"] == "spatial" else "error"
    dmap = assemble_map(bank, mask, opts["kind"], on_unknown=on_unknown)
    latent = sample_init(dmap, opts["mu"], schedule, opts["seed"])
    out = Path(opts["out"])
    write_array(out, latent.astype(np.float32))
    _emit_config(out, "sample", opts)
    print(f"wrote initialization latent to {out}")


def cmd_generate(opts: dict) -> None:
    bank = load_bank(opts["bank"])
    mask = _load_mask(opts["mask"], opts["ignore_id"])
    model, provenance = ToyDenoiser.load(opts["denoiser"])
    schedule = _schedule_for_denoiser(model, provenance, opts)
    t_start = truncation_step(opts["mu"], schedule.total_steps)
    n_sub = 1 if t_start == 0 else max(2, min(opts["substeps"], t_start + 1))
    plan = make_timestep_plan(opts["mu"], n_sub, schedule)
    on_unknown = "spatial" if opts["fallback_unknown"] == "spatial" else "error"
    latent = generate(
        bank,
        mask,
        opts["kind"],
        opts["mu"],
        plan,
        model,
        opts["seed"],
        schedule=schedule,
        on_unknown=on_unknown,
    )
    out = Path(opts["out"])
    write_array(out, latent.astype(np.float32))
    _emit_config(out, "generate", opts)
    print(f"wrote generated latent to {out}")


def cmd_train_toy(opts: dict) -> None:
    if opts["manifest"]:
        corpus = list(load_corpus(opts["manifest"]))
    else:
        corpus = list(make_toy_corpus(opts["n"], opts["classes"], opts["seed"]))
    schedule = build_schedule(opts["total_steps"], opts["beta_start"], opts["beta_end"])
    config = TrainConfig(
        steps=opts["steps"],
        batch_records=opts["batch_records"],
        learning_rate=opts["lr"],
        momentum=opts["momentum"],
        hidden=opts["hidden"],
    )
    model = train_toy_denoiser(corpus, schedule, config, opts["seed"])
    out = Path(opts["out"])
    provenance = {
        "beta_start": opts["beta_start"],
        "beta_end": opts["beta_end"],
        "corpus_manifest": opts["manifest"],
        "toy_n": opts["n"],
        "toy_classes": opts["classes"],
        "seed": opts["seed"],
    }
    model.save(out, provenance=provenance)
    _emit_config(out, "train-toy", opts)
    print(f"wrote denoiser to {out} (held-out loss {model.final_loss:.4f})")


def cmd_sweep_mu(opts: dict) -> None:
    model, provenance = ToyDenoiser.load(opts["denoiser"])
    bank = load_bank(opts["bank"])
    corpus = list(load_corpus(opts["manifest"]))
    schedule = _schedule_for_denoiser(model, provenance, opts)
    grid = _parse_grid(opts["grid"])
    rows = empirical_mismatch_study(
        model,
        corpus,
        bank,
        schedule,
        grid,
        n_eval=opts["n_eval"],
        substeps=opts["substeps"],
        seed=opts["seed"],
    )
    out = Path(opts["out"])
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("mu\tfid_gt\tfid_normal\tfid_joint\n")
        for row in rows:
            fh.write(
                f"{row.mu:.10g}\t{row.fid_gt_prior:.10g}\t"
                f"{row.fid_normal:.10g}\t{row.fid_joint:.10g}\n"
            )
    _emit_config(out, "sweep-mu", opts)
    print(f"wrote {len(rows)}-row sweep table to {out}")


def cmd_eval(opts: dict) -> None:
    bank = load_bank(opts["bank"])
    records = list(load_corpus(opts["real"]))
    if not records:
        raise DataError("real manifest is empty")
    gen_dir = Path(opts["gen"])
    base = class_base_values(bank.num_classes, bank.channels)
    gen_latents = []
    mious = []
    accs = []
    for record in records:
        gen_path = gen_dir / f"{record.id}.arr"
        if not gen_path.exists():
            raise DataError(f"no generated latent for record '{record.id}' in {gen_dir}")
        latent = read_array(gen_path).astype(np.float64)
        gen_latents.append(latent)
        miou, acc = oracle_segmentation_scores(latent, record.mask, base)
        mious.append(miou)
        accs.append(acc)
    real_feats = np.stack([r.latent.data.astype(np.float64).ravel() for r in records])
    gen_feats = np.stack([g.ravel() for g in gen_latents])
    fid = frechet_distance(summarize(gen_feats), summarize(real_feats))
    diversity = batch_diversity(gen_latents) if len(gen_latents) >= 2 else 0.0
    out = Path(opts["report"])
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("fid\tmiou\tacc\tdiversity\n")
        fh.write(
            f"{fid:.10g}\t{np.mean(mious):.10g}\t{np.mean(accs):.10g}\t{diversity:.10g}\n"
        )
    _emit_config(out, "eval", opts)
    print(f"wrote evaluation report to {out}")


def cmd_fps_select(opts: dict) -> None:
    feats = read_array(opts["features"]).astype(np.float64)
    if feats.ndim > 2:
        feats = feats.reshape(feats.shape[0], -1)
    indices = furthest_point_sampling(feats, opts["k"], opts["start"])
    out = Path(opts["out"])
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("index\n")
        fh.writelines(f"{i}\n" for i in indices)
    _emit_config(out, "fps-select", opts)
    print(f"wrote {len(indices)} selected indices to {out}")


# ---------------------------------------------------------------------------
# option tables and dispatch
# ---------------------------------------------------------------------------

_SCHEDULE_OPTS = [
    Opt("steps", int, DEFAULT_TOTAL_STEPS, help="total diffusion steps T"),
    Opt("beta_start", float, DEFAULT_BETA_START, help="first beta of the ramp"),
    Opt("beta_end", float, DEFAULT_BETA_END, help="last beta of the ramp"),
]

COMMANDS: dict[str, tuple[Callable[[dict], None], list[Opt], str]] = {
    "dump-schedule": (
        cmd_dump_schedule,
        _SCHEDULE_OPTS + [Opt("out", str, help="write the table here instead of stdout")],
        "print the (t, alpha_bar[t]) table for cross-checking",
    ),
    "make-toy-corpus": (
        cmd_make_toy_corpus,
        [
            Opt("n", int, required=True, help="number of records"),
            Opt("classes", int, required=True, help="number of classes"),
            Opt("seed", int, 0),
            Opt("out_dir", str, required=True, help="corpus output directory"),
        ],
        "write a synthetic latent/mask corpus with a manifest",
    ),
    "estimate": (
        cmd_estimate,
        [
            Opt("manifest", str, required=True, input_path=True, data_dir=True),
            Opt("classes", int, required=True, help="number of classes"),
            Opt("out", str, required=True, help="bank output path"),
            Opt("fallback_min", int, DEFAULT_FALLBACK_MIN_COUNT,
                help="joint cells below this count fall back to class stats"),
            Opt("ignore_id", int, DEFAULT_IGNORE_ID),
            Opt("jobs", int, 1, help="parallel shards"),
        ],
        "estimate spatial/categorical/joint prior banks from a corpus",
    ),
    "sample": (
        cmd_sample,
        [
            Opt("bank", str, required=True, input_path=True),
            Opt("mask", str, required=True, input_path=True),
            Opt("kind", str, "joint", choices=("normal", "spatial", "categorical", "joint")),
            Opt("mu", float, 0.85),
            Opt("substeps", int, 50,
                help="recorded for downstream samplers; unused by sample itself"),
            Opt("seed", int, 0),
            Opt("out", str, required=True),
            Opt("fallback_unknown", str, "error", choices=("error", "spatial")),
            Opt("ignore_id", int, DEFAULT_IGNORE_ID),
        ] + _SCHEDULE_OPTS,
        "assemble a prior map for a mask and write the noised initialization",
    ),
    "generate": (
        cmd_generate,
        [
            Opt("bank", str, required=True, input_path=True),
            Opt("mask", str, required=True, input_path=True),
            Opt("denoiser", str, required=True, input_path=True),
            Opt("kind", str, "joint", choices=("normal", "spatial", "categorical", "joint")),
            Opt("mu", float, 0.85),
            Opt("substeps", int, 20),
            Opt("seed", int, 0),
            Opt("out", str, required=True),
            Opt("fallback_unknown", str, "error", choices=("error", "spatial")),
            Opt("ignore_id", int, DEFAULT_IGNORE_ID),
            Opt("beta_start", float, help="override the denoiser's recorded ramp"),
            Opt("beta_end", float, help="override the denoiser's recorded ramp"),
        ],
        "run truncated inference with the toy denoiser",
    ),
    "train-toy": (
        cmd_train_toy,
        [
            Opt("n", int, 2000, help="toy corpus size (ignored with --manifest)"),
            Opt("classes", int, 5, help="toy class count (ignored with --manifest)"),
            Opt("manifest", str, input_path=True, data_dir=True,
                help="train from an existing corpus instead of generating one"),
            Opt("seed", int, 0),
            Opt("out", str, required=True),
            Opt("steps", int, TrainConfig.steps, help="optimizer steps"),
            Opt("batch_records", int, TrainConfig.batch_records),
            Opt("lr", float, TrainConfig.learning_rate),
            Opt("momentum", float, TrainConfig.momentum),
            Opt("hidden", int, TrainConfig.hidden),
            Opt("total_steps", int, TOY_TOTAL_STEPS, help="schedule steps T"),
            Opt("beta_start", float, DEFAULT_BETA_START),
            Opt("beta_end", float, DEFAULT_BETA_END),
        ],
        "train the toy denoiser and save it",
    ),
    "sweep-mu": (
        cmd_sweep_mu,
        [
            Opt("denoiser", str, required=True, input_path=True),
            Opt("bank", str, required=True, input_path=True),
            Opt("manifest", str, required=True, input_path=True, data_dir=True,
                help="held-out evaluation corpus"),
            Opt("grid", str, "0:1:0.05", help="start:stop:stride or comma list"),
            Opt("out", str, required=True),
            Opt("n_eval", int, 96),
            Opt("substeps", int, 16),
            Opt("seed", int, 0),
            Opt("beta_start", float, help="override the denoiser's recorded ramp"),
            Opt("beta_end", float, help="override the denoiser's recorded ramp"),
        ],
        "tabulate FID from oracle/normal/joint initializations over a mu grid",
    ),
    "eval": (
        cmd_eval,
        [
            Opt("real", str, required=True, input_path=True, data_dir=True),
            Opt("gen", str, required=True, input_path=True),
            Opt("bank", str, required=True, input_path=True),
            Opt("report", str, required=True),
        ],
        "score generated latents against a real corpus",
    ),
    "fps-select": (
        cmd_fps_select,
        [
            Opt("features", str, required=True, input_path=True),
            Opt("k", int, required=True),
            Opt("start", int, 0),
            Opt("out", str, required=True),
        ],
        "greedy max-min subset selection over feature vectors",
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scprior",
        description="Gaussian noise priors for truncated diffusion inference.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"scprior {__version__} (container format {FORMAT_VERSION}, arrays npy-1.0)",
    )
    subparsers = parser.add_subparsers(dest="command")
    for name, (_, opts, description) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=description, description=description)
        sub.add_argument("--config", help="resolved-config JSON to overlay")
        for opt in opts:
            kwargs: dict = {"help": opt.help, "default": None, "dest": opt.name}
            if opt.choices:
                kwargs["choices"] = opt.choices
            if opt.type is not str:
                kwargs["type"] = opt.type
            sub.add_argument(opt.flag, **kwargs)
    return parser


def _resolve_options(name: str, ns: argparse.Namespace) -> dict:
    config_options: dict = {}
    if ns.config is not None:
        config_path = Path(ns.config)
        if not config_path.exists():
            raise ParameterError(f"config file does not exist: {config_path}")
        try:
            payload = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{config_path}: invalid JSON ({exc})") from exc
        if payload.get("subcommand") != name:
            raise ParameterError(
                f"config is for subcommand {payload.get('subcommand')!r}, not {name!r}"
            )
        config_options = payload.get("options", {})

    _, opts, _ = COMMANDS[name]
    resolved = {}
    for opt in opts:
        value = getattr(ns, opt.name)
        if value is None and opt.name in config_options:
            value = config_options[opt.name]
            if value is not None and opt.type is not str:
                value = opt.type(value)
        if value is None:
            value = opt.default
        if opt.required and value is None:
            raise ParameterError(f"missing required option {opt.flag}")
        if value is not None and opt.choices and value not in opt.choices:
            raise ParameterError(f"{opt.flag} must be one of {opt.choices}")
        if value is not None and opt.data_dir:
            value = _resolve_data_path(str(value))
        resolved[opt.name] = value
    for opt in opts:
        value = resolved[opt.name]
        if opt.input_path and value is not None and not Path(value).exists():
            raise ParameterError(f"{opt.flag} path does not exist: {value}")
    return resolved


def dispatch(argv: list[str]) -> int:
    """Parse argv, run the subcommand, and map errors to exit codes."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_help()
        return 2
    try:
        options = _resolve_options(ns.command, ns)
        COMMANDS[ns.command][0](options)
        return 0
    except UnknownClassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DataError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
