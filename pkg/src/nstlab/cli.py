"""Batch command-line front end.

Subcommands: stylize, adain, train-toy, compare, validate-weights, plot,
fixtures. Jobs are described by a JSON config with sections ``job``,
``loss``, ``optimizer``, ``network`` (plus ``decoder``/``trainer`` where
relevant); every defaulted value is echoed back into the report so a report
is a complete experiment record.

Exit codes: 0 success, 2 config parse error, 3 validation error, 4 numeric
failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

from . import fixtures, reporting
from .errors import (
    ConfigError,
    ContractError,
    DivergenceError,
    EngineError,
    GeometryError,
    ImageError,
    NumericError,
    ShapeError,
    ValidationError,
    WeightError,
    WeightFormatError,
)
from .images import PreprocessSpec
from .losses import LossConfig, Smoothing
from .network import get_network, load_weights, save_weights
from .optim import OptimizerConfig
from .pipelines import (
    RunReport,
    StylizeJob,
    _default_adain_config,
    _default_loss_config,
    _job_echo,
    _resolve_network,
    stylize_adain,
    stylize_image_based,
    swag_ab_compare,
    train_feedforward,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ValidationError, ContractError, ShapeError, GeometryError, WeightError)):
        return EXIT_VALIDATION
    if isinstance(exc, (NumericError, DivergenceError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ImageError, WeightFormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, EngineError):
        return EXIT_VALIDATION
    return 1


# ---------------------------------------------------------------------------
# config parsing


def _load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValidationError([f"unknown key {where}.{k!r}" for k in unknown])


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError([f"missing required field {where}.{key!r}"])
    return section[key]


def _check_file(path, field: str) -> str:
    if not os.path.exists(path):
        raise ValidationError([f"{field}: file {str(path)!r} does not exist"])
    return str(path)


def _parse_loss(section: dict, network: str,
                base: LossConfig | None = None) -> tuple[LossConfig, list[str]]:
    if base is None:
        base = _default_loss_config(network)
    if not section:
        return base, []
    allowed = {"alpha", "beta", "lambda", "content_tap", "style_taps", "smoothing",
               "smoothed_taps", "softmax_axis", "gram_normalization",
               "content_normalization", "adain_content_mode", "adain_style_mode",
               "epsilon"}
    _check_keys(section, allowed, "loss")
    warnings: list[str] = []
    kwargs = {}
    for key, attr in (("alpha", "alpha"), ("beta", "beta"), ("lambda", "lam"),
                      ("epsilon", "epsilon")):
        if key in section:
            kwargs[attr] = float(section[key])
    for key in ("content_tap", "softmax_axis", "gram_normalization",
                "content_normalization", "adain_content_mode", "adain_style_mode"):
        if key in section:
            kwargs[key] = section[key]
    if "smoothing" in section:
        kwargs["smoothing"] = Smoothing.parse(section["smoothing"])
    if "smoothed_taps" in section:
        value = section["smoothed_taps"]
        kwargs["smoothed_taps"] = None if value is None else frozenset(value)
    if "style_taps" in section:
        value = section["style_taps"]
        if isinstance(value, dict):
            defaults = [t for t, _ in base.style_taps]
            unknown = sorted(set(value) - set(defaults))
            taps = sorted(set(defaults) | set(value)) if unknown else defaults
            pairs = tuple((t, float(value.get(t, 1.0))) for t in taps)
            defaulted = [t for t in taps if t not in value]
            if defaulted:
                warnings.append(
                    "style tap weights defaulted to 1.0 for: " + ", ".join(defaulted)
                )
            kwargs["style_taps"] = pairs
        elif isinstance(value, list):
            pairs = []
            for item in value:
                if isinstance(item, str):
                    pairs.append((item, 1.0))
                else:
                    tap, weight = item
                    pairs.append((str(tap), float(weight)))
            kwargs["style_taps"] = tuple(pairs)
        else:
            raise ValidationError(["loss.style_taps must be a list or a mapping"])
    try:
        return replace(base, **kwargs), warnings
    except ContractError as exc:
        raise ValidationError([f"loss: {exc}"]) from exc


def _parse_optimizer(section: dict) -> OptimizerConfig:
    base = OptimizerConfig()
    if not section:
        return base
    allowed = {"kind", "learning_rate", "beta1", "beta2", "adam_epsilon", "history",
               "max_line_search", "armijo_c", "max_iterations", "tolerance",
               "grad_tolerance"}
    _check_keys(section, allowed, "optimizer")
    kwargs = dict(section)
    for key in ("history", "max_line_search", "max_iterations"):
        if key in kwargs:
            kwargs[key] = int(kwargs[key])
    try:
        return replace(base, **kwargs)
    except ContractError as exc:
        raise ValidationError([f"optimizer: {exc}"]) from exc


def _parse_stylize_job(cfg: dict, args, kind: str) -> tuple[StylizeJob, list[str]]:
    job_sec = cfg.get("job")
    if not isinstance(job_sec, dict):
        raise ValidationError(["missing required section 'job'"])
    allowed = {"content", "style", "styles", "output", "init", "seed",
               "alpha_interp", "resize"}
    _check_keys(job_sec, allowed, "job")
    net_sec = cfg.get("network", {})
    _check_keys(net_sec, {"id", "weights"}, "network")
    network = net_sec.get("id", "vgg-tiny")
    weights = net_sec.get("weights")
    if weights is not None:
        weights = _check_file(weights, "network.weights")
    dec_sec = cfg.get("decoder", {})
    _check_keys(dec_sec, {"id", "weights"}, "decoder")
    decoder = dec_sec.get("id", "vgg-tiny-decoder")
    decoder_weights = dec_sec.get("weights")
    if decoder_weights is not None:
        decoder_weights = _check_file(decoder_weights, "decoder.weights")

    content = _check_file(_require(job_sec, "content", "job"), "job.content")
    if "styles" in job_sec:
        styles = tuple(_check_file(s, "job.styles") for s in job_sec["styles"])
    elif "style" in job_sec:
        styles = (_check_file(job_sec["style"], "job.style"),)
    else:
        raise ValidationError(["missing required field job.'style' (or job.'styles')"])

    base = _default_adain_config(network) if kind == "adain" else None
    loss_cfg, warnings = _parse_loss(cfg.get("loss", {}), network, base=base)
    opt_cfg = _parse_optimizer(cfg.get("optimizer", {}))
    seed = args.seed if args.seed is not None else int(job_sec.get("seed", 0))
    out_dir = _resolve_out_dir(args)
    output = os.path.join(out_dir, job_sec.get("output", "output.png"))
    resize = job_sec.get("resize")
    try:
        job = StylizeJob(
            kind=kind,
            content=content,
            styles=styles,
            output=output,
            network=network,
            weights=weights,
            loss=loss_cfg,
            optimizer=opt_cfg,
            init=job_sec.get("init", "content"),
            seed=seed,
            alpha_interp=float(job_sec.get("alpha_interp", 1.0)),
            decoder=decoder,
            decoder_weights=decoder_weights,
            resize=tuple(resize) if resize else None,
        )
    except ContractError as exc:
        raise ValidationError([f"job: {exc}"]) from exc
    return job, warnings


def _resolve_out_dir(args) -> str:
    if args.out_dir:
        return args.out_dir
    stem = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(os.path.dirname(os.path.abspath(args.config)), f"{stem}_out")


def _dry_run_echo(job: StylizeJob) -> str:
    net, store = _resolve_network(job.network, job.weights, seed=job.seed)
    config = job.loss if job.loss is not None else _default_loss_config(job.network)
    preproc = PreprocessSpec.from_metadata(store.metadata)
    echo = _job_echo(job, config, preproc, store.metadata)
    return json.dumps(echo, sort_keys=True, indent=2)


def _finish_run(report: RunReport, out_dir: str, warnings: list[str]) -> None:
    report.warnings.extend(warnings)
    paths = reporting.write_report(report, out_dir)
    reporting.emit_plot(paths["csv"], os.path.join(out_dir, "report_loss.svg"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_stylize(args) -> int:
    cfg = _load_config(args.config)
    _expect_command(cfg, "stylize")
    job, warnings = _parse_stylize_job(cfg, args, "image-based")
    if args.dry_run:
        print(_dry_run_echo(job))
        return EXIT_OK
    os.makedirs(_resolve_out_dir(args), exist_ok=True)
    _, report = stylize_image_based(job)
    _finish_run(report, _resolve_out_dir(args), warnings)
    print(f"wrote {report.outputs['image']}")
    return EXIT_OK


def cmd_adain(args) -> int:
    cfg = _load_config(args.config)
    _expect_command(cfg, "adain")
    job, warnings = _parse_stylize_job(cfg, args, "adain")
    if args.dry_run:
        print(_dry_run_echo(job))
        return EXIT_OK
    os.makedirs(_resolve_out_dir(args), exist_ok=True)
    _, report = stylize_adain(job)
    _finish_run(report, _resolve_out_dir(args), warnings)
    print(f"wrote {report.outputs['image']}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = _load_config(args.config)
    _expect_command(cfg, "train-toy")
    job_sec = cfg.get("job")
    if not isinstance(job_sec, dict):
        raise ValidationError(["missing required section 'job'"])
    _check_keys(job_sec, {"kind", "corpus", "style", "steps", "seed", "output"}, "job")
    trainer = cfg.get("trainer", {})
    _check_keys(trainer, {"batch_size", "learning_rate", "style_weight", "lambda",
                          "style_source"}, "trainer")
    kind = _require(job_sec, "kind", "job")
    corpus_cfg = job_sec.get("corpus", "fixture")
    if corpus_cfg == "fixture":
        corpus = fixtures.corpus_images()
    else:
        corpus = [_check_file(p, "job.corpus") for p in corpus_cfg]
    style = job_sec.get("style", "fixture")
    if style == "fixture":
        style = fixtures.content_style_pairs()[0][1]
    elif style is not None:
        style = _check_file(style, "job.style")
    seed = args.seed if args.seed is not None else int(job_sec.get("seed", 0))
    steps = int(job_sec.get("steps", 200))
    out_dir = _resolve_out_dir(args)

    if args.dry_run:
        echo = {"command": "train-toy", "kind": kind, "steps": steps, "seed": seed,
                "corpus": corpus_cfg, "trainer": trainer}
        print(json.dumps(echo, sort_keys=True, indent=2))
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    kwargs = {}
    if "batch_size" in trainer:
        kwargs["batch_size"] = int(trainer["batch_size"])
    if "learning_rate" in trainer:
        kwargs["learning_rate"] = float(trainer["learning_rate"])
    if "style_weight" in trainer:
        kwargs["style_weight"] = float(trainer["style_weight"])
    if "lambda" in trainer:
        kwargs["lam"] = float(trainer["lambda"])
    if "style_source" in trainer:
        kwargs["style_source"] = trainer["style_source"]
    try:
        result = train_feedforward(kind, corpus, style=style, steps=steps, seed=seed,
                                   **kwargs)
    except ContractError as exc:
        raise ValidationError([f"job: {exc}"]) from exc
    weights_path = os.path.join(out_dir, job_sec.get("output", "trained.nstw"))
    save_weights(result.weights, weights_path)
    with open(weights_path, "rb") as fh:
        weights_sha = hashlib.sha256(fh.read()).hexdigest()
    report = RunReport(
        job={"command": "train-toy", "kind": kind, "steps": steps, "seed": seed,
             "corpus": corpus_cfg if corpus_cfg == "fixture" else list(corpus_cfg),
             "trainer": {k: trainer.get(k) for k in sorted(trainer)},
             "initial_full_loss": result.initial_loss,
             "final_full_loss": result.final_loss},
        seed=seed,
        trace=[{"total": v} for v in result.curve],
        final={"total": result.final_loss},
        stop_reason="steps-exhausted",
        checksums={"weights": weights_sha},
        outputs={"weights": weights_path},
    )
    _finish_run(report, out_dir, [])
    print(f"wrote {weights_path} (loss {result.initial_loss:.4g} -> {result.final_loss:.4g})")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    _expect_command(cfg, "compare")
    job_sec = cfg.get("job")
    if not isinstance(job_sec, dict):
        raise ValidationError(["missing required section 'job'"])
    _check_keys(job_sec, {"content", "style", "kinds", "seed", "init"}, "job")
    net_sec = cfg.get("network", {})
    _check_keys(net_sec, {"id", "weights"}, "network")
    network = net_sec.get("id", "resnet-small")
    weights = net_sec.get("weights")
    if weights is not None:
        weights = _check_file(weights, "network.weights")
    content = _check_file(_require(job_sec, "content", "job"), "job.content")
    style = _check_file(_require(job_sec, "style", "job"), "job.style")
    kinds = job_sec.get("kinds", ["none", "softmax", "scale:0.001", "tanh", "softsign"])
    seed = args.seed if args.seed is not None else int(job_sec.get("seed", 0))
    swag_base = replace(_default_loss_config(network), alpha=1.0, beta=1e12)
    loss_cfg, _ = _parse_loss(cfg.get("loss", {}), network, base=swag_base)
    opt_cfg = _parse_optimizer(cfg.get("optimizer", {}))
    out_dir = _resolve_out_dir(args)

    if args.dry_run:
        echo = {"command": "compare", "network": network, "kinds": kinds,
                "seed": seed, "optimizer": opt_cfg.__dict__}
        print(json.dumps(echo, sort_keys=True, indent=2))
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    if args.jobs and args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            report = swag_ab_compare(content, style, kinds, out_dir, network=network,
                                     weights=weights, optimizer=opt_cfg,
                                     loss=loss_cfg, seed=seed,
                                     init=job_sec.get("init", "content"),
                                     map_fn=pool.map)
    else:
        report = swag_ab_compare(content, style, kinds, out_dir, network=network,
                                 weights=weights, optimizer=opt_cfg, loss=loss_cfg,
                                 seed=seed, init=job_sec.get("init", "content"))
    comparison_path = os.path.join(out_dir, "comparison.json")
    with open(comparison_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    reporting.emit_compare_figure(report, os.path.join(out_dir, "comparison.svg"))
    failures = [e for e in report.entries if e.error is not None]
    for entry in report.entries:
        status = entry.error or f"raw style metric {entry.raw_style_metric:.6g}"
        print(f"{entry.kind}: {status}")
    print(f"wrote {comparison_path}")
    if failures:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_validate_weights(args) -> int:
    store = load_weights(args.path)
    summary = {
        "path": str(args.path),
        "entries": len(store.entries),
        "metadata": store.metadata,
    }
    if args.network:
        net = get_network(args.network)
        problems = store.validate_for(net)
        summary["network"] = args.network
        summary["violations"] = problems
        if problems:
            print(json.dumps(summary, sort_keys=True, indent=2))
            return EXIT_VALIDATION
    if args.probe:
        from .images import load_image, preprocess
        from .network import forward_with_taps

        if not args.network:
            raise ValidationError(["--probe requires --network"])
        net = get_network(args.network)
        preproc = PreprocessSpec.from_metadata(store.metadata)
        probe_t = preprocess(load_image(args.probe), preproc)
        bundle = forward_with_taps(net, store.as_tensors(), probe_t)
        import numpy as np

        summary["probe"] = {
            tap: {
                "mean": float(np.mean(t.data, dtype=np.float64)),
                "l2": float(np.sqrt(np.sum(t.data.astype(np.float64) ** 2))),
                "shape": list(t.shape),
            }
            for tap, t in sorted(bundle.items())
        }
    print(json.dumps(summary, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    out = args.out or os.path.splitext(str(args.csv))[0] + ".svg"
    reporting.emit_plot(args.csv, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    out_dir = args.out_dir or "fixtures"
    paths = fixtures.materialize(out_dir, size=args.size)
    written = sum(len(v) for v in paths.values())
    for network in args.weights:
        store = fixtures.fixture_weights(network, seed=args.seed or 0)
        path = os.path.join(out_dir, f"{network}.nstw")
        save_weights(store, path)
        written += 1
        print(f"wrote {path}")
    print(f"wrote {written} fixture files under {out_dir}")
    return EXIT_OK


def _expect_command(cfg: dict, command: str) -> None:
    declared = cfg.get("command")
    if declared is not None and declared != command:
        raise ValidationError(
            [f"config declares command {declared!r} but {command!r} was invoked"]
        )


COMMANDS = {
    "stylize": cmd_stylize,
    "adain": cmd_adain,
    "train-toy": cmd_train_toy,
    "compare": cmd_compare,
    "validate-weights": cmd_validate_weights,
    "plot": cmd_plot,
    "fixtures": cmd_fixtures,
}


def run_job(config_path, seed=None, out_dir=None, dry_run=False, jobs=1):
    """Programmatic entry: dispatch a config file to its pipeline.

    Returns the exit status (0 success, 2 config parse, 3 validation,
    4 numeric, 5 I/O); artifacts land in ``out_dir``. The config's
    ``command`` field picks the pipeline.
    """
    try:
        cfg = _load_config(config_path)
        command = cfg.get("command")
        if command not in COMMANDS or command in ("validate-weights", "plot", "fixtures"):
            raise ValidationError([f"config must declare command, one of: stylize, "
                                   f"adain, train-toy, compare (got {command!r})"])
        ns = argparse.Namespace(config=config_path, seed=seed, out_dir=out_dir,
                                dry_run=dry_run, jobs=jobs)
        return COMMANDS[command](ns)
    except EngineError as exc:
        code = exit_code_for(exc)
        print(f"error (exit {code}): {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error (exit {EXIT_IO}): {exc}", file=sys.stderr)
        return EXIT_IO


def _add_common(parser) -> None:
    parser.add_argument("--config", required=True, help="path to the JSON job config")
    parser.add_argument("--seed", type=int, default=None, help="override the job seed")
    parser.add_argument("--out-dir", default=None, help="artifact directory")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate and print the resolved config, do not run")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers (compare kinds)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nstlab",
                                     description="neural style transfer batch runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("stylize", "adain", "train-toy", "compare"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("validate-weights")
    p.add_argument("path")
    p.add_argument("--network", default=None, help="validate against this built-in network")
    p.add_argument("--probe", default=None, help="image to forward; prints tap stats")
    p = sub.add_parser("plot")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    p = sub.add_parser("fixtures")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--weights", nargs="*", default=["resnet-small", "vgg-tiny"],
                   help="networks whose fixture weights to write")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command]
    try:
        return handler(args)
    except EngineError as exc:
        code = exit_code_for(exc)
        print(f"error (exit {code}): {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error (exit {EXIT_IO}): {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
