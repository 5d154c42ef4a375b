"""Command-line entry point.

Subcommands map onto pipeline stages, so a full ``run`` and the chain
``blueprint -> generate -> refine -> eval`` write byte-identical artifacts.
Exit codes: 0 success, 1 stage failure, 2 bad configuration or usage.
Failures print a one-line JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .artifacts import load_json, load_png, save_json, save_png
from .blueprint import BlueprintError, blueprint_from_json_dict, blueprint_to_json_dict
from .evaluation import EmptyBatch, par_score
from .llm import LlmConfig, MockLlm, QuotaOrAuthError, TransportError, UnparsableAfterRetries
from .pipeline import (
    ConfigError,
    GuidanceWeights,
    NoiseCorrectConfig,
    RunConfig,
    StageError,
    assemble_report,
    build_blueprint,
    make_initial_image,
    make_refined_image,
    render_layout,
    run_pipeline,
    world_for,
)
from .refinement import RefinementPolicy

_EXIT_OK = 0
_EXIT_STAGE = 1
_EXIT_CONFIG = 2


def _error_record(stage: str, exc: BaseException) -> str:
    return json.dumps(
        {"schema_version": 1,
         "error": {"stage": stage, "type": type(exc).__name__,
                   "message": str(exc)}},
        ensure_ascii=False)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=3,
                   help="layout samples to blend (default 3)")
    p.add_argument("--eta", type=float, default=0.5,
                   help="layout blend rate in [0, 1] (default 0.5)")
    p.add_argument("--steps", type=int, default=20,
                   help="denoising steps for global composition (default 20)")
    p.add_argument("--refine-steps", type=int, default=50,
                   help="denoising steps per refinement round (default 50)")
    p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    p.add_argument("--backend", choices=("toy", "http"), default="toy",
                   help="scene backend (default toy)")
    p.add_argument("--out", default="run-out",
                   help="output directory (default run-out)")
    p.add_argument("--tau", type=float, default=0.5,
                   help="refinement acceptance threshold (default 0.5)")
    p.add_argument("--max-rounds", type=int, default=3,
                   help="refinement rounds per object (default 3)")
    p.add_argument("--no-keep-best", action="store_true",
                   help="always adopt the latest refinement candidate")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="reference guidance weight (default 1)")
    p.add_argument("--gamma", type=float, default=100.0,
                   help="background guidance weight (default 100)")
    p.add_argument("--noise-correct", action="store_true",
                   help="apply a denoise round trip after composition")
    p.add_argument("--strength", type=float, default=0.3,
                   help="noise-correct strength in (0, 1) (default 0.3)")
    p.add_argument("--endpoint-url",
                   default="http://localhost:8080/v1/chat/completions",
                   help="chat completion endpoint for layout queries")
    p.add_argument("--model", default="gpt-3.5-turbo",
                   help="model name sent to the endpoint")
    p.add_argument("--api-key-env", default="LLM_API_KEY",
                   help="environment variable holding the API key")
    p.add_argument("--mock-script", default=None,
                   help="JSON file with a list of scripted replies; used "
                        "instead of the endpoint")


def _add_caption_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--caption", default=None, help="scene caption")
    p.add_argument("--prompt-file", default=None,
                   help="file containing the scene caption")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneloom",
        description="Layout-guided scene composition pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("blueprint",
                       help="caption to blueprint.json and layout.svg")
    _add_caption_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("generate", help="blueprint to initial.png")
    p.add_argument("--blueprint", required=True, help="blueprint.json path")
    _add_config_flags(p)

    p = sub.add_parser("refine",
                       help="initial.png to refined.png and report.json")
    p.add_argument("--blueprint", required=True, help="blueprint.json path")
    p.add_argument("--image", required=True, help="initial image path")
    _add_config_flags(p)

    p = sub.add_parser("eval",
                       help="score images against a blueprint; writes "
                            "eval.json and eval.csv")
    p.add_argument("--blueprint", required=True, help="blueprint.json path")
    p.add_argument("--image", action="append", required=True,
                   metavar="[ID=]PATH",
                   help="image to score; repeatable; optional id prefix")
    _add_config_flags(p)

    p = sub.add_parser("render", help="blueprint to layout.svg")
    p.add_argument("--blueprint", required=True, help="blueprint.json path")
    p.add_argument("--out", default="run-out",
                   help="output directory (default run-out)")

    p = sub.add_parser("run", help="caption to a full run directory")
    _add_caption_flags(p)
    _add_config_flags(p)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(
        k=args.k, eta=args.eta, global_steps=args.steps,
        refine_steps=args.refine_steps, seed=args.seed,
        backend=args.backend, output_dir=args.out,
        llm=LlmConfig(endpoint_url=args.endpoint_url,
                      api_key_env=args.api_key_env, model_name=args.model),
        guidance=GuidanceWeights(lam=args.lam, gamma=args.gamma),
        policy=RefinementPolicy(score_threshold=args.tau,
                                max_rounds=args.max_rounds,
                                keep_best=not args.no_keep_best),
        noise_correct=NoiseCorrectConfig(enabled=args.noise_correct,
                                         strength=args.strength),
    )
    config.validate()
    return config


def _caption_from_args(args: argparse.Namespace) -> str:
    if args.caption is not None and args.prompt_file is not None:
        raise ConfigError("give either --caption or --prompt-file, not both")
    if args.caption is not None:
        return args.caption
    if args.prompt_file is not None:
        return Path(args.prompt_file).read_text(encoding="utf-8").strip()
    raise ConfigError("a caption is required (--caption or --prompt-file)")


def _llm_backend_from_args(args: argparse.Namespace):
    """Scripted replies when requested; otherwise the configured endpoint."""
    if args.mock_script is None:
        return None
    try:
        script = load_json(Path(args.mock_script))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read --mock-script: {exc}") from exc
    if (not isinstance(script, list)
            or not all(isinstance(s, str) for s in script)):
        raise ConfigError("--mock-script must be a JSON list of strings")
    return MockLlm(script)


def _load_blueprint(path: str):
    try:
        return blueprint_from_json_dict(load_json(Path(path)))
    except BlueprintError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise BlueprintError(
            f"cannot load blueprint from {path}: {exc}") from exc


def _cmd_blueprint(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    caption = _caption_from_args(args)
    backend = _llm_backend_from_args(args)
    try:
        bp = build_blueprint(caption, config, backend=backend)
    except Exception as exc:
        raise StageError("blueprint", exc) from exc
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_json(out / "blueprint.json", blueprint_to_json_dict(bp))
    (out / "layout.svg").write_text(render_layout(bp), encoding="utf-8")
    save_json(out / "config-echo.json", config.to_json_dict())
    print(f"wrote {out / 'blueprint.json'}")
    return _EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bp = _load_blueprint(args.blueprint)
    world = world_for(config)
    try:
        initial_u8 = make_initial_image(bp, world, config)
    except Exception as exc:
        raise StageError("generate", exc) from exc
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "initial.png", initial_u8)
    print(f"wrote {out / 'initial.png'}")
    return _EXIT_OK


def _cmd_refine(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bp = _load_blueprint(args.blueprint)
    initial_u8 = load_png(Path(args.image))
    world = world_for(config)
    try:
        refined_u8, report = make_refined_image(bp, initial_u8, world, config)
        report_dict = assemble_report(report, bp, initial_u8, refined_u8,
                                      world.detector)
    except Exception as exc:
        raise StageError("refine", exc) from exc
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "refined.png", refined_u8)
    save_json(out / "report.json", report_dict)
    print(f"wrote {out / 'refined.png'}")
    return _EXIT_OK


def _parse_image_args(items: list[str]) -> list[tuple[str, Path]]:
    pairs = []
    for item in items:
        if "=" in item:
            label, _, raw = item.partition("=")
        else:
            label, raw = Path(item).stem, item
        pairs.append((label, Path(raw)))
    return pairs


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bp = _load_blueprint(args.blueprint)
    world = world_for(config)
    pairs = _parse_image_args(args.image)
    try:
        from .artifacts import dequantize
        batch = [(dequantize(load_png(path)), bp) for _, path in pairs]
        result = par_score(batch, world.detector,
                           ids=[label for label, _ in pairs])
    except EmptyBatch as exc:
        raise ConfigError(str(exc)) from exc
    except Exception as exc:
        raise StageError("eval", exc) from exc
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_json(out / "eval.json", result.to_json_dict())
    (out / "eval.csv").write_text(result.to_csv(), encoding="utf-8")
    print(f"overall_par={result.overall_par:.6f}")
    return _EXIT_OK


def _cmd_render(args: argparse.Namespace) -> int:
    bp = _load_blueprint(args.blueprint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "layout.svg").write_text(render_layout(bp), encoding="utf-8")
    print(f"wrote {out / 'layout.svg'}")
    return _EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    caption = _caption_from_args(args)
    backend = _llm_backend_from_args(args)
    result = run_pipeline(caption, config, llm_backend=backend)
    print(f"par_initial={result.par_initial:.6f} "
          f"par_refined={result.par_refined:.6f} out={result.output_dir}")
    return _EXIT_OK


_COMMANDS = {
    "blueprint": _cmd_blueprint,
    "generate": _cmd_generate,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return _EXIT_CONFIG
    except StageError as exc:
        print(_error_record(exc.stage, exc.cause), file=sys.stderr)
        return _EXIT_STAGE
    except (BlueprintError, TransportError, QuotaOrAuthError,
            UnparsableAfterRetries) as exc:
        print(_error_record(args.command, exc), file=sys.stderr)
        return _EXIT_STAGE
    except OSError as exc:
        print(_error_record(args.command, exc), file=sys.stderr)
        return _EXIT_STAGE


if __name__ == "__main__":
    raise SystemExit(main())
