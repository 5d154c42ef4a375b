"""Score refinement on a small benchmark of generated scene prompts.

Runs the blueprint, composition, and refinement stages on each prompt,
scores detection recall before and after refinement with the shared
sliding-window detector, and sign-tests the paired recall differences.
A larger version of this loop backs the acceptance checks.
"""

from sceneloom import (
    MockLlm,
    RefinementPolicy,
    RunConfig,
    SUITE_MAX_ROUNDS,
    SUITE_TAU,
    build_blueprint,
    build_toy_world,
    make_initial_image,
    make_refined_image,
    one_sided_sign_test,
    par_score,
    toy_suite,
)
from sceneloom.artifacts import dequantize

N_PROMPTS = 8


def main() -> None:
    world = build_toy_world()
    prompts = toy_suite(world, n_prompts=N_PROMPTS, seed=0)

    diffs = []
    initial_batch, refined_batch = [], []
    print(f"{'caption':44s} {'before':>7s} {'after':>7s}")
    for i, prompt in enumerate(prompts):
        config = RunConfig(
            seed=i,
            policy=RefinementPolicy(score_threshold=SUITE_TAU,
                                    max_rounds=SUITE_MAX_ROUNDS),
        )
        bp = build_blueprint(prompt.caption, config,
                             backend=MockLlm(prompt.script))
        initial = make_initial_image(bp, world, config)
        refined, _ = make_refined_image(bp, initial, world, config)

        before = par_score([(dequantize(initial), bp)], world.detector)
        after = par_score([(dequantize(refined), bp)], world.detector)
        diffs.append(after.overall_par - before.overall_par)
        initial_batch.append((dequantize(initial), bp))
        refined_batch.append((dequantize(refined), bp))
        print(f"{prompt.caption[:44]:44s} {before.overall_par:7.3f} "
              f"{after.overall_par:7.3f}")

    pooled_before = par_score(initial_batch, world.detector).overall_par
    pooled_after = par_score(refined_batch, world.detector).overall_par
    print(f"\npooled recall: {pooled_before:.3f} -> {pooled_after:.3f}")
    print(f"prompts improved: {sum(d > 0 for d in diffs)}/{len(diffs)}")
    print(f"sign-test p-value: {one_sided_sign_test(diffs):.2e}")


if __name__ == "__main__":
    main()
