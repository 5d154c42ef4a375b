"""Layout-guided scene composition.

A caption is turned into a bounding-box blueprint by a language model,
composed region by region with guided denoising, then refined per object
until a similarity oracle accepts each box.
"""

from .artifacts import (
    dequantize,
    load_json,
    load_png,
    quantize,
    render_layout_svg,
    save_json,
    save_png,
)
from .blueprint import (
    BBox,
    BlueprintError,
    Canvas,
    DegenerateBox,
    EmptyLayout,
    InconsistentNames,
    LayoutSet,
    MalformedTuple,
    Mask,
    MissingSection,
    NoDictionaryFound,
    ObjectSpec,
    ResolveResult,
    SceneBlueprint,
    ValidationError,
    blueprint_from_json,
    blueprint_from_json_dict,
    blueprint_to_json,
    blueprint_to_json_dict,
    box_iou,
    box_to_mask,
    interpolate_layouts,
    normalize_name,
    parse_description_response,
    parse_layout_response,
    render_layout_text,
    resolve_overlaps,
    sort_for_refinement,
)
from .diffusion import (
    BadTimestepOrder,
    GaussianMixtureBackend,
    NoiseSchedule,
    NonFiniteState,
    ddim_sample,
    ddim_step,
    forward_noise,
    guided_compose,
    predict_x0,
)
from .evaluation import (
    Detection,
    EmptyBatch,
    ParResult,
    PromptRecall,
    ToyWindowDetector,
    one_sided_sign_test,
    par_score,
    toy_detector,
)
from .guidance import (
    GuidanceSpec,
    NonFiniteGradient,
    RandomFeaturePerceptual,
    ToyLinearOracle,
    as_mask_channels,
    bg_loss,
    bg_loss_and_grad,
    clip_loss,
    cosine_loss,
    cosine_loss_and_grad,
    guidance_loss_and_grad,
)
from .llm import (
    HttpLlm,
    LlmConfig,
    MockLlm,
    PromptTemplate,
    QuotaOrAuthError,
    TransportError,
    UnparsableAfterRetries,
    mock_llm,
    request_descriptions,
    request_layouts,
)
from .pipeline import (
    ConfigError,
    GuidanceWeights,
    NoiseCorrectConfig,
    RunConfig,
    RunResult,
    StageError,
    assemble_report,
    build_blueprint,
    generate_initial,
    make_initial_image,
    make_refined_image,
    noise_correct,
    render_layout,
    run_pipeline,
    stage_seed,
    world_for,
)
from .refinement import (
    BackendError,
    ObjectReport,
    RefinementPolicy,
    RefinementReport,
    SceneBackends,
    box_on_image,
    make_reference,
    refine_image,
    score_box,
)
from .toyworld import (
    SUITE_FLOOR,
    SUITE_MAX_ROUNDS,
    SUITE_TAU,
    ComponentLibrary,
    LibraryEntry,
    SuitePrompt,
    ToyWorld,
    build_toy_world,
    smooth_field,
    toy_suite,
)

__version__ = "0.1.0"
