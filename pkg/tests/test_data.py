import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dive.config import ConfigError
from dive.data import (
    DataFormatError, ElasticDeformParams, apply_out_of_scene, apply_partial_occlusion,
    apply_varying_appearance, elastic_deform, make_batch, make_sample, read_dataset, read_header,
    synthesize_clean, write_dataset,
)
from dive.data import scenarios
from dive.data.mnist import load_glyphs


def test_clean_sample_shape_and_mask():
    s = synthesize_clean(2, 20, 7)
    assert s.complete.shape == (20, 64, 64)
    assert np.array_equal(s.corrupted, s.complete)
    assert not s.object_missing_mask.any()
    assert s.complete.min() >= 0 and s.complete.max() <= 1


def test_zero_speed_gives_static_frames():
    s = synthesize_clean(2, 8, 3, speed=0.0)
    assert all(np.array_equal(s.complete[0], f) for f in s.complete)


def test_same_seed_bit_identical():
    a, b = make_sample(2, (5, 9)), make_sample(2, (5, 9))
    for name in ("corrupted", "complete", "object_missing_mask", "patches", "positions"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.complete, make_sample(2, (5, 10)).complete)


@pytest.mark.parametrize("n,T", [(0, 20), (2, 1), (-1, 5)])
def test_invalid_parameters(n, T):
    with pytest.raises(ConfigError):
        synthesize_clean(n, T, 0)


def test_bad_scenario_rejected():
    with pytest.raises(ConfigError):
        make_sample(4, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_trajectories_are_reflected_straight_lines(seed):
    s = synthesize_clean(2, 20, seed)
    pos = s.positions
    assert pos.min() >= 0 and pos.max() <= 64 - 28



def test_bouncing_matches_folded_line_oracle():
    L = 36.0
    start, vel = np.array([3.0, 17.0]), np.array([2.5, -3.1])
    traj = scenarios.bouncing_trajectory(start, vel, 60, L)
    t = np.arange(60)[:, None]
    free = start + vel * t
    folded = L - np.abs(np.mod(free, 2 * L) - L)  # triangle wave = reflection at 0 and L
    assert np.allclose(traj, folded)


def test_overlaps_composite_by_max():
    patches = np.zeros((2, 1, 28, 28), np.float32)
    patches[0, 0] = 0.3
    patches[1, 0] = 0.8
    patches[1, 0, :5] = 0.1
    pos = np.array([[[0, 0]], [[0, 0]]])
    frame = scenarios.composite(patches, pos, 64)[0]
    assert np.allclose(frame[:28, :28], np.maximum(patches[0, 0], patches[1, 0]))


def _assert_uncorrupted_equal(s, occluded_rows=0):
    """Wherever no removed object has support, corrupted == complete."""
    layers = s.object_layers()
    removed = np.zeros(s.complete.shape, bool)
    for i in range(s.num_objects):
        removed |= (layers[i] > 0) & (s.object_missing_mask[i][:, None, None] == 1)
    keep = ~removed
    keep[:, :occluded_rows] = False
    assert np.array_equal(s.corrupted[keep], s.complete[keep])


def test_partial_occlusion_semantics():
    for seed in range(30):
        s = apply_partial_occlusion(synthesize_clean(2, 20, seed))
        assert not s.corrupted[:, :32].any()
        assert np.array_equal(s.corrupted[:, 32:], s.complete[:, 32:])
        layers = s.object_layers()
        for i in range(2):
            for t in range(20):
                hidden = not layers[i, t, 32:].any()
                assert s.object_missing_mask[i, t] == int(hidden)
        _assert_uncorrupted_equal(s, 32)


def test_partial_occlusion_cases():
    clean = synthesize_clean(1, 2, 0, speed=0.0)
    low = clean.replace(positions=np.full((1, 2, 2), 36), complete=None)
    low = low.replace(complete=scenarios.composite(low.patches, low.positions, 64))
    high = low.replace(positions=np.zeros((1, 2, 2), np.int64))
    high = high.replace(complete=scenarios.composite(high.patches, high.positions, 64))
    mid = low.replace(positions=np.full((1, 2, 2), 18))
    mid = mid.replace(complete=scenarios.composite(mid.patches, mid.positions, 64))
    assert apply_partial_occlusion(low).object_missing_mask.sum() == 0
    assert apply_partial_occlusion(high).object_missing_mask.all()
    m = apply_partial_occlusion(mid)
    assert m.object_missing_mask.sum() == 0
    assert np.array_equal(m.corrupted[:, 32:], m.complete[:, 32:])


def test_out_of_scene_removes_two_steps():
    for seed in range(30):
        s = make_sample(2, seed)
        assert np.array_equal(s.complete, synthesize_clean(2, 20, s_clean_seed(seed)).complete)
        for row in s.object_missing_mask:
            idx = np.flatnonzero(row)
            assert len(idx) == 2 and idx[1] == idx[0] + 1
            assert 2 <= idx[0] <= 8  # 1-based 3..9
        _assert_uncorrupted_equal(s)


def s_clean_seed(seed):
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])


def test_out_of_scene_known_start():
    clean = synthesize_clean(2, 20, 11)

    class Fixed:
        def integers(self, lo, hi, size=None):
            return 5  # 1-based t' = 5

    s = apply_out_of_scene(clean, Fixed())
    assert np.flatnonzero(s.object_missing_mask[0]).tolist() == [4, 5]
    # both objects drawn at the same step: frames 5 and 6 are empty, the rest untouched
    assert not s.corrupted[[4, 5]].any()
    others = [t for t in range(20) if t not in (4, 5)]
    assert np.array_equal(s.corrupted[others], clean.complete[others])
    assert np.array_equal(s.complete, clean.complete)


def test_first_missing_bounds_monte_carlo():
    draws = scenarios.draw_first_missing(np.random.default_rng(0), size=10 ** 4) + 1
    assert draws.min() == 3 and draws.max() == 9
    counts = np.bincount(draws, minlength=10)[3:10]
    # each of the 7 values appears with probability 1/7; 4 sigma binomial band
    sd = np.sqrt(10 ** 4 * (1 / 7) * (6 / 7))
    assert np.all(np.abs(counts - 10 ** 4 / 7) < 4 * sd)


def test_out_of_scene_needs_long_sequences():
    with pytest.raises(ConfigError):
        apply_out_of_scene(synthesize_clean(2, 10, 0), np.random.default_rng(0))


def test_elastic_identity_and_determinism(rng):
    glyphs, _ = load_glyphs("train")
    img = glyphs[3] / 255.0
    assert np.array_equal(elastic_deform(img, ElasticDeformParams(0.0, 4.0, 1)), img)
    p = ElasticDeformParams(100.0, 4.0, 17)
    a, b = elastic_deform(img, p), elastic_deform(img, p)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert np.abs(a - img).max() > 0.3


def test_elastic_mass_within_twenty_percent():
    """Mean mass ratio over 100 digits at the strongest setting stays within 20%."""
    glyphs, _ = load_glyphs("train")
    ratios = []
    for k in range(100):
        img = glyphs[k] / 255.0
        out = elastic_deform(img, ElasticDeformParams(100.0, 4.0, k))
        ratios.append(out.sum() / img.sum())
    ratios = np.array(ratios)
    assert abs(ratios.mean() - 1) < 0.2
    assert abs(np.median(ratios) - 1) < 0.2
    # individual digits spread wider (local compression and stretching)
    assert np.all((ratios > 0.25) & (ratios < 2.5))


@pytest.mark.parametrize("alpha,sigma", [(-1.0, 4.0), (10.0, 0.0)])
def test_elastic_params_validated(alpha, sigma):
    with pytest.raises(ValueError):
        ElasticDeformParams(alpha, sigma)


def test_varying_appearance():
    for seed in range(10):
        s = make_sample(3, seed)
        assert (s.object_missing_mask.sum(1) == 1).all()
        assert s.object_missing_mask[:, :2].sum() == 0
        # last step undeformed: equal to the original glyph
        clean = synthesize_clean(2, 20, s_clean_seed(seed))
        assert np.array_equal(s.patches[:, -1], clean.patches[:, -1])
        assert not np.array_equal(s.patches[:, 0], clean.patches[:, 0])
        # independent fields per object: the displacement differs
        d0 = s.patches[0, 0] - clean.patches[0, 0]
        d1 = s.patches[1, 0] - clean.patches[1, 0]
        assert not np.array_equal(d0, d1)
        _assert_uncorrupted_equal(s)
    assert scenarios.deformation_alpha(0, 20) == 100.0
    assert scenarios.deformation_alpha(19, 20) == 0.0


def test_container_round_trip(tmp_path):
    for scenario in (1, 2, 3):
        samples = make_batch(scenario, 3, range(4))
        path = write_dataset(tmp_path / f"s{scenario}.dive", samples, scenario, 3)
        header, back = read_dataset(path)
        assert header["count"] == 4 and header["scenario"] == scenario and header["H"] == 64
        for a, b in zip(samples, back):
            for name in ("corrupted", "complete", "object_missing_mask", "patches", "positions", "labels"):
                assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_container_single_sample_and_bit_stability(tmp_path):
    samples = make_batch(2, 0, range(1))
    p1 = write_dataset(tmp_path / "a.dive", samples, 2, 0)
    p2 = write_dataset(tmp_path / "b.dive", make_batch(2, 0, range(1)), 2, 0)
    assert p1.read_bytes() == p2.read_bytes()
    assert read_header(p1)["count"] == 1


def test_container_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.dive"
    bad.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(DataFormatError):
        read_dataset(bad)
    path = write_dataset(tmp_path / "t.dive", make_batch(2, 0, range(2)), 2, 0)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(DataFormatError):
        read_dataset(path)


def test_glyph_split_shapes():
    for split in ("train", "test"):
        images, labels = load_glyphs(split)
        assert images.shape[1:] == (28, 28)
        assert set(np.unique(labels)) == set(range(10))
