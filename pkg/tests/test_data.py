import numpy as np
import pytest

from rfmlab.data import (
    IngestReport,
    LANDMARK_GROUPS,
    Label,
    RegionSpec,
    SampleRecord,
    SyntheticSpec,
    batch_sampler,
    fake_base_pixels,
    generate_synthetic_dataset,
    ingest_directory,
    load_dataset,
    make_less_forgery,
    neutralized_test_set,
    partition_regions,
    read_landmarks,
    write_dataset,
)
from rfmlab.errors import (
    ConfigError,
    ContractViolationError,
    DegenerateLandmarksError,
    EmptyDatasetError,
)
from rfmlab.imaging import Image, save_png

from conftest import random_image


SPEC = SyntheticSpec(count_per_class=20, image_size=32, strength=48)


def fakes_of(records):
    return [r for r in records if r.label == Label.FAKE]


# -- synthetic generation -------------------------------------------------

def test_zero_strength_fakes_equal_bases():
    spec = SyntheticSpec(count_per_class=5, strength=0)
    records = generate_synthetic_dataset(spec, seed=3)
    for idx, rec in enumerate(fakes_of(records)):
        base = fake_base_pixels(spec, 3, idx)
        assert np.array_equal(rec.image.pixels, base)
        assert not rec.forgery_mask.any()


def test_boundary_family_masks_stay_in_band():
    spec = SyntheticSpec(count_per_class=10, family="boundary", band_width=5)
    records = generate_synthetic_dataset(spec, seed=8)
    band = np.zeros((32, 32), dtype=bool)
    band[:5] = band[-5:] = True
    band[:, :5] = band[:, -5:] = True
    for rec in fakes_of(records):
        assert not (rec.forgery_mask & ~band).any()
        assert rec.technique == "synthetic-two-stage"


def test_generation_replays_and_mask_recount_oracle():
    spec = SyntheticSpec(count_per_class=50)
    a = generate_synthetic_dataset(spec, seed=123)
    b = generate_synthetic_dataset(spec, seed=123)
    assert len(a) == len(b) == 100
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.image.pixels, rb.image.pixels)
        assert ra.technique == rb.technique
    for idx, rec in enumerate(fakes_of(a)):
        base = fake_base_pixels(spec, 123, idx)
        recount = (rec.image.pixels != base).any(axis=0)
        assert np.array_equal(rec.forgery_mask, recount)


def test_mask_fidelity_and_region_layout():
    records = generate_synthetic_dataset(SPEC, seed=5)
    layout = SPEC.region_masks()
    union = layout["dominant"] | layout["secondary"]
    saw_secondary = saw_no_secondary = False
    for idx, rec in enumerate(fakes_of(records)):
        base = fake_base_pixels(SPEC, 5, idx)
        diff = (rec.image.pixels != base).any(axis=0)
        assert np.array_equal(diff, rec.forgery_mask)
        assert not (rec.forgery_mask & ~union).any()
        # Dominant artifact is always present (prob 1.0 layout).
        assert (rec.forgery_mask & layout["dominant"]).sum() > 0
        has_secondary = (rec.forgery_mask & layout["secondary"]).any()
        saw_secondary |= has_secondary
        saw_no_secondary |= not has_secondary
    assert saw_secondary and saw_no_secondary  # probability 0.5 exercised


def test_real_records_have_no_masks():
    records = generate_synthetic_dataset(SPEC, seed=2)
    for rec in records:
        if rec.label == Label.REAL:
            assert rec.forgery_mask is None and rec.region_masks is None
            assert rec.technique == "real"


def test_empty_dataset_and_bad_spec():
    with pytest.raises(EmptyDatasetError):
        generate_synthetic_dataset(SyntheticSpec(count_per_class=0), seed=1)
    with pytest.raises(ConfigError):
        SyntheticSpec(count_per_class=1, dominant=RegionSpec(0, 0, 8, 8),
                      secondary=RegionSpec(4, 4, 8, 8)).regions()  # overlap
    with pytest.raises(ConfigError):
        RegionSpec(0, 0, 40, 8).mask(32)  # outside image


# -- ingestion -------------------------------------------------------------

def test_ingest_directory_layout(tmp_path, rng):
    for sub, n in (("real", 3), ("fake", 3)):
        (tmp_path / sub).mkdir()
        for k in range(n):
            save_png(random_image(rng, height=8, width=8), tmp_path / sub / f"{k}.png")
    layout = {"real": (Label.REAL, "camera"), "fake": (Label.FAKE, "swap")}
    records, report = ingest_directory(tmp_path, layout)
    assert len(records) == 6 and report.loaded == 6
    assert sum(r.label == Label.REAL for r in records) == 3
    assert [r.source_id for r in records] == sorted(r.source_id for r in records[:3]) + \
        sorted(r.source_id for r in records[3:])


def test_ingest_empty_root(tmp_path):
    with pytest.raises(EmptyDatasetError):
        ingest_directory(tmp_path, {"real": (Label.REAL, "camera")})


def test_ingest_skips_corrupt_files(tmp_path, rng):
    (tmp_path / "real").mkdir()
    save_png(random_image(rng), tmp_path / "real" / "ok.png")
    (tmp_path / "real" / "bad.png").write_bytes(b"not a png at all")
    records, report = ingest_directory(tmp_path, {"real": (Label.REAL, "camera")})
    valid = [p for p in (tmp_path / "real").iterdir()]  # independent scan
    assert len(records) == 1
    assert len(report.skipped) == 1 and "bad.png" in report.skipped[0][0]
    assert len(records) + len(report.skipped) == len(valid)


# -- landmark regions -------------------------------------------------------

def square_points(x0, y0, x1, y1, count):
    """Distinct points whose convex hull is exactly the given square."""
    pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    k = 0
    while len(pts) < count:
        # strictly interior fillers, distinct
        pts.append((x0 + 1 + (k % max(1, x1 - x0 - 1)), y0 + 1 + (k // 3) % max(1, y1 - y0 - 1)))
        k += 1
    return pts[:count]


def build_square_landmarks(offset=(0, 0)):
    dx, dy = offset
    pts = np.zeros((68, 2), dtype=np.float64)
    groups = {
        tuple(LANDMARK_GROUPS["eyes"]): (8, 8, 24, 12),
        tuple(LANDMARK_GROUPS["nose"]): (14, 14, 18, 18),
        tuple(LANDMARK_GROUPS["mouth"]): (10, 22, 22, 26),
    }
    for idx_group, (x0, y0, x1, y1) in groups.items():
        for slot, idx in enumerate(idx_group):
            pts[idx] = square_points(x0, y0, x1, y1, len(idx_group))[slot]
    jaw = list(range(0, 17))
    for slot, idx in enumerate(jaw):
        pts[idx] = square_points(4, 4, 28, 28, len(jaw))[slot]
    pts[:, 0] += dx
    pts[:, 1] += dy
    return pts


def rect_mask(x0, y0, x1, y1, size=34):
    m = np.zeros((size, size), dtype=bool)
    m[y0:y1 + 1, x0:x1 + 1] = True  # boundary-inclusive pixel centers
    return m


def test_partition_regions_square_geometry_oracle():
    masks = partition_regions(build_square_landmarks(), 34, 34)
    eyes = rect_mask(8, 8, 24, 12)
    nose = rect_mask(14, 14, 18, 18)
    mouth = rect_mask(10, 22, 22, 26)
    face = rect_mask(4, 4, 28, 28)
    assert np.array_equal(masks["eyes"], eyes)
    assert np.array_equal(masks["nose"], nose & ~eyes)
    assert np.array_equal(masks["mouth"], mouth & ~eyes & ~nose)
    assert np.array_equal(masks["skin"], face & ~eyes & ~nose & ~mouth)


def test_partition_regions_disjoint():
    masks = partition_regions(build_square_landmarks(), 34, 34)
    names = sorted(masks)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            assert not (masks[names[a]] & masks[names[b]]).any()


def test_partition_regions_translation_equivariance():
    base = partition_regions(build_square_landmarks(), 40, 40)
    moved = partition_regions(build_square_landmarks(offset=(5, 5)), 40, 40)
    for name in base:
        assert np.array_equal(moved[name][5:, 5:], base[name][:35, :35])
        assert not moved[name][:5].any() and not moved[name][:, :5].any()


def test_partition_regions_errors():
    pts = build_square_landmarks()
    pts[LANDMARK_GROUPS["nose"], 0] = 15.0  # collinear vertical nose line
    pts[LANDMARK_GROUPS["nose"], 1] = np.arange(9) + 10.0
    with pytest.raises(DegenerateLandmarksError):
        partition_regions(pts, 34, 34)
    outside = build_square_landmarks()
    outside[0] = (200.0, 5.0)
    with pytest.raises(ContractViolationError):
        partition_regions(outside, 34, 34)


def test_read_landmarks(tmp_path):
    pts = build_square_landmarks()
    path = tmp_path / "landmarks.csv"
    np.savetxt(path, pts, fmt="%.1f", delimiter=",")
    back = read_landmarks(path)
    assert np.allclose(back, pts)
    np.savetxt(path, pts[:10], fmt="%.1f", delimiter=",")
    with pytest.raises(ContractViolationError):
        read_landmarks(path)


# -- less-forgery construction ----------------------------------------------

def make_pair(rng):
    records = generate_synthetic_dataset(SPEC, seed=7)
    fake = fakes_of(records)[0]
    real = records[0]
    return fake, real


def test_less_forgery_empty_region_is_identity(rng):
    fake, real = make_pair(rng)
    fake.region_masks["empty"] = np.zeros((32, 32), dtype=bool)
    out = make_less_forgery(fake, real, "empty")
    assert np.array_equal(out.image.pixels, fake.image.pixels)
    assert out.label == Label.FAKE


def test_less_forgery_full_region_copies_real(rng):
    fake, real = make_pair(rng)
    fake.region_masks = {"all": np.ones((32, 32), dtype=bool)}
    out = make_less_forgery(fake, real, "all")
    assert np.array_equal(out.image.pixels, real.image.pixels)
    assert out.label == Label.FAKE
    assert out.technique.endswith("allReal")


def test_less_forgery_pixel_diff_oracle(rng):
    fake, real = make_pair(rng)
    region = fake.region_masks["dominant"]
    out = make_less_forgery(fake, real, "dominant")
    diff = (out.image.pixels != fake.image.pixels).any(axis=0)
    assert not (diff & ~region).any()  # neutralization confined to the region
    # Every output pixel comes from exactly one source.
    assert np.array_equal(out.image.pixels[:, region], real.image.pixels[:, region])
    assert np.array_equal(out.image.pixels[:, ~region], fake.image.pixels[:, ~region])
    # Remaining mask drops the neutralized pixels.
    assert not (out.forgery_mask & region).any()


def test_less_forgery_requires_region(rng):
    fake, real = make_pair(rng)
    with pytest.raises(ContractViolationError):
        make_less_forgery(fake, real, "nose")
    with pytest.raises(ContractViolationError):
        make_less_forgery(real, fake, "dominant")


def test_neutralized_test_set_is_seeded(rng):
    records = generate_synthetic_dataset(SPEC, seed=9)
    a = neutralized_test_set(records, "dominant", np.random.default_rng(4))
    b = neutralized_test_set(records, "dominant", np.random.default_rng(4))
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.image.pixels, rb.image.pixels)
    reals = [r for r in a if r.label == Label.REAL]
    assert all(np.array_equal(x.image.pixels, y.image.pixels)
               for x, y in zip(reals, records[:len(reals)]))


# -- batch sampling -----------------------------------------------------------

def test_batch_sampler_single_batch_covers_all(rng):
    records = generate_synthetic_dataset(SyntheticSpec(count_per_class=8), seed=1)
    batches = batch_sampler(records, 16, np.random.default_rng(0))
    batch = next(batches)
    assert sorted(batch) == list(range(16))
    labels = [records[i].label for i in batch]
    assert labels[:8] == [Label.REAL] * 8 and labels[8:] == [Label.FAKE] * 8


def test_batch_sampler_always_balanced(rng):
    records = generate_synthetic_dataset(SyntheticSpec(count_per_class=10), seed=2)
    batches = batch_sampler(records, 4, np.random.default_rng(5))
    for _ in range(25):  # crosses several epoch wraps
        batch = next(batches)
        labels = [records[i].label for i in batch]
        assert labels.count(Label.REAL) == 2 and labels.count(Label.FAKE) == 2


def test_batch_sampler_replays_across_epochs(rng):
    records = generate_synthetic_dataset(SyntheticSpec(count_per_class=12), seed=3)

    def collect():
        batches = batch_sampler(records, 8, np.random.default_rng(11))
        return [tuple(next(batches)) for _ in range(6)]  # two epochs of 3 batches

    assert collect() == collect()


def test_batch_sampler_epoch_without_replacement(rng):
    records = generate_synthetic_dataset(SyntheticSpec(count_per_class=12), seed=3)
    batches = batch_sampler(records, 8, np.random.default_rng(11))
    seen_real, seen_fake = [], []
    for _ in range(3):  # one full epoch: 12 per class / 4 per batch
        batch = next(batches)
        seen_real += batch[:4]
        seen_fake += batch[4:]
    assert len(set(seen_real)) == 12 and len(set(seen_fake)) == 12


def test_batch_sampler_validation(rng):
    records = generate_synthetic_dataset(SyntheticSpec(count_per_class=2), seed=1)
    with pytest.raises(ConfigError):
        next(batch_sampler(records, 5, rng))
    with pytest.raises(EmptyDatasetError):
        next(batch_sampler(records, 16, rng))


# -- disk round trip ---------------------------------------------------------

def test_dataset_write_load_round_trip(tmp_path):
    records = generate_synthetic_dataset(SPEC, seed=6)
    write_dataset(records, tmp_path, spec=SPEC, seed=6)
    back, meta = load_dataset(tmp_path)
    assert meta["image_size"] == 32 and meta["seed"] == 6
    assert len(back) == len(records)
    for orig, loaded in zip(records, back):
        assert np.array_equal(orig.image.pixels, loaded.image.pixels)
        assert orig.label == loaded.label and orig.technique == loaded.technique
        if orig.forgery_mask is None:
            assert loaded.forgery_mask is None
        else:
            assert np.array_equal(orig.forgery_mask, loaded.forgery_mask)
        if orig.region_masks:
            for name, mask in orig.region_masks.items():
                assert np.array_equal(mask, loaded.region_masks[name])


def test_load_dataset_missing(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path)


def test_sample_record_invariants(rng):
    with pytest.raises(ContractViolationError):
        SampleRecord(image=random_image(rng), label=Label.REAL, technique="real",
                     forgery_mask=np.ones((8, 8), dtype=bool))
    overlapping = {"a": np.ones((8, 8), dtype=bool), "b": np.ones((8, 8), dtype=bool)}
    with pytest.raises(ContractViolationError):
        SampleRecord(image=random_image(rng), label=Label.FAKE, technique="t",
                     region_masks=overlapping)
