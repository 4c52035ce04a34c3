"""Overlap grouping, weighted voting, and full fusion."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nucfuse import (
    DEFAULT_INSTANCE_WEIGHTS,
    DEFAULT_SEMANTIC_WEIGHTS,
    DetectionSet,
    FusionConfig,
    LabeledScene,
    ValidationError,
    VotingWeights,
    build_overlap_groups,
    extract_detections,
    fuse,
    vote_label,
)
from test_core import random_scene


def dets_of(scene: LabeledScene, source: str) -> DetectionSet:
    return extract_detections(scene, source)


def scene_pair(seed: int) -> tuple[LabeledScene, LabeledScene]:
    rng = np.random.default_rng(seed)
    return random_scene(rng, size=28, cells=7), random_scene(rng, size=28, cells=7)


class TestVoting:
    def test_neutrophil_beats_epithelial(self):
        # semantic says neutrophil (weight 2), instance says epithelial (1.5)
        winner = vote_label([(1, "semantic"), (2, "instance")], VotingWeights())
        assert winner == 1

    def test_agreement(self):
        assert vote_label([(4, "semantic"), (4, "instance")], VotingWeights()) == 4

    def test_low_weight_semantic_loses(self):
        # epithelial semantic weight is 1.0 < instance 1.5
        assert vote_label([(2, "semantic"), (6, "instance")], VotingWeights()) == 6

    def test_all_36_pairs_match_exact_table(self):
        weights = VotingWeights()
        for sem_label in range(1, 7):
            for inst_label in range(1, 7):
                members = [(sem_label, "semantic"), (inst_label, "instance")]
                assert vote_label(members, weights) == oracles.vote_table(members)

    def test_no_tie_possible_in_two_member_groups(self):
        sem = DEFAULT_SEMANTIC_WEIGHTS
        inst = DEFAULT_INSTANCE_WEIGHTS
        for s in range(6):
            for i in range(6):
                if s != i:
                    assert sem[s] != inst[i]

    def test_transitive_group_tie_prefers_semantic_label(self):
        # semantic class 2 (weight 1.0) + semantic class 3 (1.0): tie at 1.0;
        # the winner must be a semantically-voted label, lowest id
        winner = vote_label([(3, "semantic"), (2, "semantic")], VotingWeights())
        assert winner == 2

    def test_tie_without_semantic_member_takes_lower_class(self):
        winner = vote_label([(5, "instance"), (3, "instance")], VotingWeights())
        assert winner == 3

    @given(st.floats(min_value=0.01, max_value=50), st.integers(0, 5000))
    @settings(max_examples=100)
    def test_common_scalar_never_changes_winner(self, scale, seed):
        rng = np.random.default_rng(seed)
        members = [
            (int(rng.integers(1, 7)), ("semantic", "instance")[int(rng.integers(2))])
            for _ in range(int(rng.integers(1, 6)))
        ]
        base = VotingWeights()
        scaled = VotingWeights(
            semantic=tuple(w * scale for w in base.semantic),
            instance=tuple(w * scale for w in base.instance),
        )
        assert vote_label(members, base) == vote_label(members, scaled)

    def test_empty_members_rejected(self):
        with pytest.raises(ValidationError):
            vote_label([], VotingWeights())

    def test_weight_validation(self):
        with pytest.raises(ValidationError):
            VotingWeights(semantic=(1, 1, 1))
        with pytest.raises(ValidationError):
            VotingWeights(instance=(1, 1, 1, 1, 1, -2))


class TestConfig:
    def test_threshold_bounds(self):
        FusionConfig(iou_threshold=1.0)
        with pytest.raises(ValidationError):
            FusionConfig(iou_threshold=0.0)
        with pytest.raises(ValidationError):
            FusionConfig(iou_threshold=1.5)


class TestOverlapGroups:
    def test_both_empty(self):
        empty = DetectionSet(8, 8, ())
        groups, unmatched = build_overlap_groups(empty, empty)
        assert groups == [] and unmatched == []

    def test_identical_boxes_single_group(self):
        inst = np.zeros((8, 8), dtype=np.int32)
        inst[2:5, 2:5] = 1
        scene = LabeledScene(inst, (inst != 0).astype(np.uint8))
        groups, unmatched = build_overlap_groups(
            dets_of(scene, "semantic"), dets_of(scene, "instance")
        )
        assert len(groups) == 1 and len(groups[0].members) == 2
        assert unmatched == []

    def test_far_instance_detection_unmatched(self):
        sem_inst = np.zeros((50, 50), dtype=np.int32)
        sem_inst[0:10, 0:10] = 1
        sem = LabeledScene(sem_inst, (sem_inst != 0).astype(np.uint8))

        inst_inst = np.zeros((50, 50), dtype=np.int32)
        inst_inst[0:10, 0:10] = 4
        inst_inst[30:40, 30:40] = 9
        inst = LabeledScene(inst_inst, (inst_inst != 0).astype(np.uint8))

        groups, unmatched = build_overlap_groups(
            dets_of(sem, "semantic"), dets_of(inst, "instance")
        )
        assert len(groups) == 1
        assert len(groups[0].members) == 2
        assert [d.id for d in unmatched] == [9]

    def test_members_semantic_block_first(self, box_scene):
        groups, _ = build_overlap_groups(
            dets_of(box_scene, "semantic"), dets_of(box_scene, "instance")
        )
        for group in groups:
            sources = [d.source for d in group.members]
            assert sources == sorted(sources, key=lambda s: s != "semantic")

    def test_merged_pixels_are_union(self, box_scene):
        groups, _ = build_overlap_groups(
            dets_of(box_scene, "semantic"), dets_of(box_scene, "instance")
        )
        for group in groups:
            union = np.unique(np.concatenate([d.pixels for d in group.members]))
            assert np.array_equal(group.merged_pixels, union)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            build_overlap_groups(DetectionSet(4, 4, ()), DetectionSet(5, 4, ()))


def assert_scenes_equal(a: LabeledScene, b: LabeledScene):
    assert np.array_equal(a.instance_map, b.instance_map)
    assert np.array_equal(a.class_map, b.class_map)


class TestFuse:
    def test_one_sided_identity(self, box_scene):
        fused = fuse(
            dets_of(box_scene, "semantic"),
            DetectionSet(box_scene.height, box_scene.width, ()),
        )
        # same content up to renumbering: compare canonical detections
        got = extract_detections(fused, "truth")
        want = extract_detections(box_scene, "truth")
        assert [(d.label, d.pixels.tolist()) for d in got] == [
            (d.label, d.pixels.tolist()) for d in want
        ]
        ids = sorted(int(v) for v in np.unique(fused.instance_map) if v)
        assert ids == list(range(1, len(want) + 1))

    def test_self_fusion_reproduces_scene(self, box_scene):
        fused = fuse(dets_of(box_scene, "semantic"), dets_of(box_scene, "instance"))
        got = extract_detections(fused, "truth")
        want = extract_detections(box_scene, "truth")
        assert [(d.label, d.pixels.tolist()) for d in got] == [
            (d.label, d.pixels.tolist()) for d in want
        ]

    def test_union_of_overlapping_masks(self):
        # two single-pixel-disjoint masks, identical bbox -> union mask
        sem_inst = np.zeros((6, 6), dtype=np.int32)
        sem_inst[1, 1:4] = 2
        sem = LabeledScene(sem_inst, (sem_inst != 0).astype(np.uint8) * 3)

        inst_inst = np.zeros((6, 6), dtype=np.int32)
        inst_inst[1, 1] = 5
        inst_inst[1, 3] = 5
        inst = LabeledScene(inst_inst, (inst_inst != 0).astype(np.uint8) * 3)

        fused = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"))
        (det,) = extract_detections(fused, "truth")
        assert det.pixels.tolist() == [7, 8, 9]

    def test_drop_unmatched_flags(self):
        sem_inst = np.zeros((20, 20), dtype=np.int32)
        sem_inst[1:4, 1:4] = 1
        sem = LabeledScene(sem_inst, (sem_inst != 0).astype(np.uint8))
        inst_inst = np.zeros((20, 20), dtype=np.int32)
        inst_inst[10:14, 10:14] = 1
        inst = LabeledScene(inst_inst, (inst_inst != 0).astype(np.uint8) * 2)

        both = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"))
        assert len(extract_detections(both, "truth")) == 2

        cfg = FusionConfig(keep_unmatched_instance=False)
        only_sem = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"), cfg=cfg)
        dets = extract_detections(only_sem, "truth")
        assert [d.label for d in dets] == [1]

        cfg = FusionConfig(keep_unmatched_semantic=False, keep_unmatched_instance=False)
        neither = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"), cfg=cfg)
        assert len(extract_detections(neither, "truth")) == 0

    @given(st.integers(0, 100_000))
    @settings(max_examples=25, deadline=None)
    def test_matches_brute_force_reference(self, seed):
        sem, inst = scene_pair(seed)
        fused = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"))
        want_inst, want_cls = oracles.fuse_reference(
            sem.instance_map, sem.class_map, inst.instance_map, inst.class_map
        )
        assert np.array_equal(fused.instance_map, want_inst)
        assert np.array_equal(fused.class_map, want_cls)

    @given(st.integers(0, 100_000))
    @settings(max_examples=20, deadline=None)
    def test_id_permutation_invariance(self, seed):
        sem, inst = scene_pair(seed)
        rng = np.random.default_rng(seed + 1)

        def remap(scene):
            ids = [int(v) for v in np.unique(scene.instance_map) if v]
            new_ids = (rng.permutation(len(ids)) + 1) * 101
            out = scene.instance_map.copy()
            for old, new in zip(ids, new_ids):
                out[scene.instance_map == old] = new
            return LabeledScene(out, scene.class_map)

        baseline = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"))
        shuffled = fuse(
            dets_of(remap(sem), "semantic"), dets_of(remap(inst), "instance")
        )
        assert_scenes_equal(baseline, shuffled)

    @given(st.integers(0, 100_000))
    @settings(max_examples=20, deadline=None)
    def test_monotone_merge_covers_all_input_pixels(self, seed):
        sem, inst = scene_pair(seed)
        fused = fuse(dets_of(sem, "semantic"), dets_of(inst, "instance"))
        covered = fused.instance_map != 0
        assert covered[sem.instance_map != 0].all()
        assert covered[inst.instance_map != 0].all()

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            fuse(DetectionSet(4, 4, ()), DetectionSet(4, 5, ()))
