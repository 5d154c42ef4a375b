"""End-to-end orchestration: caption to blueprint to composed, refined image.

Stages communicate through 8-bit artifacts on disk, so a monolithic run and
the equivalent chain of stage commands produce byte-identical outputs; the
stage helpers here are the single implementation both paths share. All
randomness derives from the run seed through named stage streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .artifacts import dequantize, quantize, render_layout_svg, save_json, save_png
from .blueprint import (
    Canvas,
    LayoutSet,
    ObjectSpec,
    SceneBlueprint,
    blueprint_to_json_dict,
    box_to_mask,
    interpolate_layouts,
    parse_description_response,
    parse_layout_response,
    resolve_overlaps,
    sort_for_refinement,
)
from .diffusion import NoiseSchedule, ddim_step, forward_noise, guided_compose
from .evaluation import par_score
from .guidance import GuidanceSpec
from .llm import LlmConfig, request_descriptions, request_layouts
from .refinement import (
    RefinementPolicy,
    RefinementReport,
    SceneBackends,
    box_on_image,
    refine_image,
)
from .toyworld import ToyWorld, build_toy_world

# stage identifiers for seed derivation
_STAGE_BACKGROUND = 0
_STAGE_INITIAL = 1
_STAGE_REFINE = 2
_STAGE_CORRECT = 3


class ConfigError(ValueError):
    """Run configuration violates an invariant."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class GuidanceWeights:
    lam: float = 1.0
    gamma: float = 100.0


@dataclass
class NoiseCorrectConfig:
    enabled: bool = False
    strength: float = 0.3


@dataclass
class RunConfig:
    """Everything one pipeline run depends on, serializable as JSON.

    refine_steps overrides policy.steps at run time; both serialize so a
    config echo reloads to an identical object.
    """

    k: int = 3
    eta: float = 0.5
    global_steps: int = 20
    refine_steps: int = 50
    seed: int = 0
    backend: str = "toy"
    output_dir: str = "run-out"
    llm: LlmConfig = field(default_factory=LlmConfig)
    guidance: GuidanceWeights = field(default_factory=GuidanceWeights)
    policy: RefinementPolicy = field(default_factory=RefinementPolicy)
    noise_correct: NoiseCorrectConfig = field(default_factory=NoiseCorrectConfig)

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must be in [0, 1], got {self.eta}")
        if self.global_steps < 1 or self.refine_steps < 1:
            raise ConfigError("step counts must be >= 1")
        if self.backend not in ("toy", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if not (np.isfinite(self.guidance.lam) and self.guidance.lam >= 0):
            raise ConfigError("lambda must be finite and >= 0")
        if not (np.isfinite(self.guidance.gamma) and self.guidance.gamma >= 0):
            raise ConfigError("gamma must be finite and >= 0")
        if not 0.0 < self.noise_correct.strength < 1.0:
            raise ConfigError("noise_correct strength must be in (0, 1)")
        try:
            self.policy.validate()
            self.llm.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "k": self.k,
            "eta": self.eta,
            "global_steps": self.global_steps,
            "refine_steps": self.refine_steps,
            "seed": self.seed,
            "backend": self.backend,
            "output_dir": self.output_dir,
            "llm": {
                "endpoint_url": self.llm.endpoint_url,
                "api_key_env": self.llm.api_key_env,
                "model_name": self.llm.model_name,
                "temperature": self.llm.temperature,
                "timeout": self.llm.timeout,
                "max_retries": self.llm.max_retries,
            },
            "guidance": {"lambda": self.guidance.lam,
                         "gamma": self.guidance.gamma},
            "policy": {
                "score_threshold": self.policy.score_threshold,
                "max_rounds": self.policy.max_rounds,
                "keep_best": self.policy.keep_best,
                "n_inner": self.policy.n_inner,
                "steps": self.policy.steps,
            },
            "noise_correct": {"enabled": self.noise_correct.enabled,
                              "strength": self.noise_correct.strength},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        llm = d["llm"]
        gd = d["guidance"]
        pol = d["policy"]
        nc = d["noise_correct"]
        return cls(
            k=int(d["k"]), eta=float(d["eta"]),
            global_steps=int(d["global_steps"]),
            refine_steps=int(d["refine_steps"]), seed=int(d["seed"]),
            backend=d["backend"], output_dir=d["output_dir"],
            llm=LlmConfig(
                endpoint_url=llm["endpoint_url"],
                api_key_env=llm["api_key_env"],
                model_name=llm["model_name"],
                temperature=float(llm["temperature"]),
                timeout=float(llm["timeout"]),
                max_retries=int(llm["max_retries"]),
            ),
            guidance=GuidanceWeights(lam=float(gd["lambda"]),
                                     gamma=float(gd["gamma"])),
            policy=RefinementPolicy(
                score_threshold=float(pol["score_threshold"]),
                max_rounds=int(pol["max_rounds"]),
                keep_best=bool(pol["keep_best"]),
                n_inner=int(pol["n_inner"]),
                steps=int(pol["steps"]),
            ),
            noise_correct=NoiseCorrectConfig(
                enabled=bool(nc["enabled"]), strength=float(nc["strength"])),
        )


def stage_seed(seed: int, *key: int) -> int:
    """Derive a named per-stage seed from the run seed."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def build_blueprint(caption: str, config: RunConfig, backend=None) -> SceneBlueprint:
    """Caption to validated blueprint: k layouts, blended, de-overlapped,
    then one description query over the final object names."""
    canvas = Canvas()
    replies = request_layouts(caption, config.k, config.llm, backend=backend)
    parsed = [parse_layout_response(r) for r in replies]
    background = parsed[0][1]
    merged = interpolate_layouts(LayoutSet([p[0] for p in parsed]), config.eta)
    clamped = {name: box.clamped(canvas) for name, box in merged.items()}
    resolved = resolve_overlaps(clamped, canvas, max_iters=400)
    names = list(resolved.boxes)
    reply = request_descriptions(caption, names, config.llm, backend=backend)
    descriptions = parse_description_response(reply, names)
    bp = SceneBlueprint(
        objects=[ObjectSpec(name=n, box=resolved.boxes[n],
                            description=descriptions[n]) for n in names],
        background_prompt=background, canvas=canvas)
    bp.validate()
    return bp


def generate_initial(blueprint: SceneBlueprint, backends: SceneBackends,
                     config: RunConfig) -> np.ndarray:
    """Sample the background, then stamp each box background-to-foreground
    with a short guided composition toward its description."""
    x = np.asarray(
        backends.library.generate(blueprint.background_prompt,
                                  seed=stage_seed(config.seed, _STAGE_BACKGROUND)),
        dtype=float)
    x = np.clip(x, 0.0, 1.0)
    canvas_img = Canvas(width=x.shape[-1], height=x.shape[-2])
    for j, obj in enumerate(sort_for_refinement(blueprint)):
        ibox = box_on_image(obj.box, blueprint.canvas, x.shape)
        mask = box_to_mask(ibox, canvas_img)
        spec = GuidanceSpec(description=obj.description, mask=mask,
                            reference=None, lam=config.guidance.lam,
                            gamma=config.guidance.gamma, x_init=x)
        x = guided_compose(x, mask, spec, backends.scene, backends.schedule,
                           steps=config.global_steps,
                           n_inner=config.policy.n_inner,
                           seed=stage_seed(config.seed, _STAGE_INITIAL, j),
                           oracle=backends.oracle,
                           perceptual=backends.perceptual)
        x = np.clip(x, 0.0, 1.0)
    return x


def noise_correct(x: np.ndarray, strength: float, backend,
                  schedule: NoiseSchedule, *, n_steps: int = 50,
                  seed: int = 0) -> np.ndarray:
    """Round-trip denoise: forward-noise partway up the strided map, then
    walk deterministically back down. Strength sets how far up the schedule
    the image goes, so how strongly the prior reasserts itself on the way
    back; a tight prior pulls corrupted inputs toward its mean."""
    if not 0.0 < strength < 1.0:
        raise ValueError(f"strength must be in (0, 1), got {strength}")
    x = np.asarray(x, dtype=float)
    ts = schedule.strided_steps(n_steps)
    idx = min(max(1, round(strength * n_steps)), len(ts) - 1)
    rng = np.random.default_rng(seed)
    out = forward_noise(x, int(ts[idx]), rng.normal(size=x.shape), schedule)
    for i in range(idx, 0, -1):
        t, t_prev = int(ts[i]), int(ts[i - 1])
        out = ddim_step(out, t, t_prev, backend.predict_noise(out, t), schedule)
    return out


def render_layout(blueprint: SceneBlueprint) -> str:
    return render_layout_svg(blueprint)


def make_initial_image(blueprint: SceneBlueprint, world: ToyWorld,
                       config: RunConfig) -> np.ndarray:
    """Global composition stage, quantized to the 8-bit stage boundary."""
    initial = generate_initial(blueprint, world.backends, config)
    if config.noise_correct.enabled:
        initial = np.clip(
            noise_correct(initial, config.noise_correct.strength, world.scene,
                          world.schedule, n_steps=config.global_steps,
                          seed=stage_seed(config.seed, _STAGE_CORRECT)),
            0.0, 1.0)
    return quantize(initial)


def make_refined_image(blueprint: SceneBlueprint, initial_u8: np.ndarray,
                       world: ToyWorld, config: RunConfig
                       ) -> tuple[np.ndarray, RefinementReport]:
    """Refinement stage over an 8-bit initial image; returns 8-bit output."""
    policy = replace(config.policy, steps=config.refine_steps)
    refined, report = refine_image(
        dequantize(initial_u8), blueprint, policy, world.oracle,
        world.backends, stage_seed(config.seed, _STAGE_REFINE),
        lam=config.guidance.lam, gamma=config.guidance.gamma)
    return quantize(refined), report


def assemble_report(report: RefinementReport, blueprint: SceneBlueprint,
                    initial_u8: np.ndarray, refined_u8: np.ndarray,
                    detector) -> dict:
    """Refinement report plus the run's own before/after recall."""
    out = report.to_json_dict()
    out["par_initial"] = par_score([(dequantize(initial_u8), blueprint)],
                                   detector).overall_par
    out["par_refined"] = par_score([(dequantize(refined_u8), blueprint)],
                                   detector).overall_par
    return out


@dataclass
class RunResult:
    output_dir: Path
    blueprint: SceneBlueprint
    par_initial: float
    par_refined: float
    paths: dict[str, Path]


def world_for(config: RunConfig, world: ToyWorld | None = None) -> ToyWorld:
    if world is not None:
        return world
    if config.backend == "toy":
        return build_toy_world()
    # the http backend needs an external model service; the caller supplies
    # a world wired to it
    raise ConfigError("backend 'http' requires an explicit world "
                      "(see the bridge client)")


def run_pipeline(caption: str, config: RunConfig, *, script=None,
                 world: ToyWorld | None = None,
                 llm_backend=None) -> RunResult:
    """Execute every stage and write the run directory.

    Artifacts: blueprint.json, layout.svg, initial.png, refined.png,
    report.json, config-echo.json. Images pass through 8-bit quantization
    at stage boundaries, exactly as the stage commands would reload them.
    """
    config.validate()
    if script is not None and llm_backend is None:
        from .llm import MockLlm
        llm_backend = MockLlm(script)
    world = world_for(config, world)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in (
        "blueprint.json", "layout.svg", "initial.png", "refined.png",
        "report.json", "config-echo.json")}

    save_json(paths["config-echo.json"], config.to_json_dict())
    try:
        bp = build_blueprint(caption, config, backend=llm_backend)
    except Exception as exc:
        raise StageError("blueprint", exc) from exc
    save_json(paths["blueprint.json"], blueprint_to_json_dict(bp))
    paths["layout.svg"].write_text(render_layout(bp), encoding="utf-8")

    try:
        initial_u8 = make_initial_image(bp, world, config)
    except Exception as exc:
        raise StageError("generate", exc) from exc
    save_png(paths["initial.png"], initial_u8)

    try:
        refined_u8, report = make_refined_image(bp, initial_u8, world, config)
    except Exception as exc:
        raise StageError("refine", exc) from exc
    save_png(paths["refined.png"], refined_u8)

    try:
        report_dict = assemble_report(report, bp, initial_u8, refined_u8,
                                      world.detector)
    except Exception as exc:
        raise StageError("eval", exc) from exc
    save_json(paths["report.json"], report_dict)

    return RunResult(output_dir=out, blueprint=bp,
                     par_initial=report_dict["par_initial"],
                     par_refined=report_dict["par_refined"], paths=paths)
