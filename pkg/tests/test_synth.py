import numpy as np
import pytest

from jppf.errors import InvalidSpec
from jppf.fusion import DenseLogits, FusionConfig, jppf_pipeline, panoptic_fuse
from jppf.instances import preprocess_instances
from jppf.metrics import density
from jppf.synth import (
    NoiseModel,
    SceneSpec,
    ThingSpec,
    conflict_suite,
    generate,
    oracle_fuse,
    random_scene_spec,
    random_taxonomy,
    without_conflicts,
)
from jppf.taxonomy import ClassTaxonomy, map_violations
from jppf.topdown import merge_top_down

NOISY = NoiseModel(temperature=0.5, flip_prob=0.2, logit_noise=0.5, confidence_jitter=0.3)


def test_generate_is_deterministic(cpp):
    spec = random_scene_spec(cpp, 4, 48, 48, noise=NOISY)
    a, b = generate(spec, cpp), generate(spec, cpp)
    assert a.gt == b.gt
    assert a.semantic.values.tobytes() == b.semantic.values.tobytes()
    assert a.parts.values.tobytes() == b.parts.values.tobytes()
    assert [p.mask.tobytes() for p in a.instances] == [p.mask.tobytes() for p in b.instances]


def test_generate_without_things(cpp):
    scene = generate(SceneSpec(16, 16, seed=1, stuff_regions=2), cpp)
    assert scene.instances == []
    assert np.all(np.isin(scene.gt.semantic, cpp.stuff_classes))
    assert not scene.gt.instance.any()


def test_gt_labels_are_consistent(ppp):
    for seed in range(10):
        scene = generate(random_scene_spec(ppp, seed, 40, 40, noise=NOISY), ppp)
        assert not map_violations(scene.gt, ppp).any()


def test_clean_scene_is_reproduced(cpp):
    scene = generate(random_scene_spec(cpp, 11, 64, 64, max_things=4, require_partitionable=True), cpp)
    assert jppf_pipeline(scene.semantic, scene.parts, scene.instances, FusionConfig(min_stuff_area=0), cpp) == scene.gt


@pytest.mark.parametrize(
    "spec",
    [
        SceneSpec(8, 8, things=(ThingSpec(24, (0, 0, 9, 4)),)),
        SceneSpec(8, 8, things=(ThingSpec(7, (0, 0, 4, 4)),)),
        SceneSpec(8, 8, noise=NoiseModel(temperature=0)),
        SceneSpec(8, 8, noise=NoiseModel(flip_prob=1.0)),
        SceneSpec(8, 8, things=(ThingSpec(24, (0, 0, 4, 4)), ThingSpec(26, (0, 0, 4, 4)))),
        SceneSpec(8, 8, stuff_regions=1, min_stuff_area=100),
    ],
)
def test_invalid_specs(cpp, spec):
    with pytest.raises(InvalidSpec):
        generate(spec, cpp)


def test_spec_json_round_trip(cpp):
    spec = random_scene_spec(cpp, 3, 32, 32, noise=NOISY)
    assert SceneSpec.from_dict(spec.to_dict()) == spec


def _pipeline_and_oracle(scene, t, cfg):
    h, w = scene.spec.height, scene.spec.width
    out = jppf_pipeline(scene.semantic, scene.parts, scene.instances, cfg, t)
    insts = preprocess_instances(scene.instances, h, w, cfg.conf_threshold, cfg.iou_threshold)
    return out, oracle_fuse(scene.semantic, scene.parts, insts, cfg, t)


@pytest.mark.parametrize("seed", range(12))
def test_oracle_agrees_on_random_scenes(seed):
    rng = np.random.default_rng(seed)
    t = random_taxonomy(rng)
    noise = NOISY if seed % 2 else NoiseModel()
    scene = generate(random_scene_spec(t, seed, 24, 24, noise=noise), t)
    out, ref = _pipeline_and_oracle(scene, t, FusionConfig(min_stuff_area=int(rng.integers(0, 30))))
    assert out == ref


def test_oracle_with_nothing_to_compete():
    t = ClassTaxonomy((), (), (0,), {})
    S = DenseLogits(np.zeros((1, 3, 3), np.float32), (99,))
    P = DenseLogits(np.zeros((1, 3, 3), np.float32), (0,))
    assert oracle_fuse(S, P, [], FusionConfig(min_stuff_area=0), t).void_mask.all()


def test_oracle_single_stuff_class():
    t = ClassTaxonomy((3,), (), (0,), {})
    S = DenseLogits(np.full((1, 5, 5), 0.4, np.float32), (3,))
    P = DenseLogits(np.full((1, 5, 5), 0.4, np.float32), (0,))
    assert np.all(oracle_fuse(S, P, [], FusionConfig(min_stuff_area=25), t).semantic == 3)
    assert oracle_fuse(S, P, [], FusionConfig(min_stuff_area=26), t).void_mask.all()


def test_conflict_suite_shows_void_rings(cpp):
    cfg = FusionConfig()
    for spec in conflict_suite(5, 0, cpp):
        scene = generate(spec, cpp)
        joint = jppf_pipeline(scene.semantic, scene.parts, scene.instances, cfg, cpp)
        merged = merge_top_down(panoptic_fuse(scene.semantic, scene.instances, cfg, cpp), scene.part_gt, cpp)
        assert density(joint) > density(merged)
        for inst in preprocess_instances(scene.instances, spec.height, spec.width):
            assert not joint.void_mask[inst.slices].any()

        clean = generate(without_conflicts(spec), cpp)
        joint = jppf_pipeline(clean.semantic, clean.parts, clean.instances, cfg, cpp)
        merged = merge_top_down(panoptic_fuse(clean.semantic, clean.instances, cfg, cpp), clean.part_gt, cpp)
        assert joint == merged


def test_conflict_suite_is_deterministic(cpp):
    assert conflict_suite(3, 5, cpp) == conflict_suite(3, 5, cpp)
    with pytest.raises(ValueError):
        conflict_suite(0, 1, cpp)
