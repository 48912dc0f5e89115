import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpkrylov.bench import (
    BatchSpec,
    compute_aggregates,
    gen_correlated_batch,
    l2_rel_error,
    run_benchmark,
    validate_report,
)
from fpkrylov.exceptions import ValidationError
from fpkrylov.grid import DiffusionParams, make_grid
from fpkrylov.krylov import RecycleConfig
from fpkrylov.io import save_pgm


def test_generator_is_deterministic():
    spec = make_grid(8, 8, 10)
    a = gen_correlated_batch(5, 4, spec, 0.05)
    b = gen_correlated_batch(5, 4, spec, 0.05)
    c = gen_correlated_batch(6, 4, spec, 0.05)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_generator_base_range_and_clamp():
    spec = make_grid(16, 16, 10)
    batch = gen_correlated_batch(1, 5, spec, 0.4)
    assert len(batch) == 5
    assert np.isclose(batch[0].min(), 0.1) and np.isclose(batch[0].max(), 0.9)
    for img in batch:
        assert img.shape == (16, 16)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_generator_small_noise_limit():
    spec = make_grid(16, 16, 10)
    batch = gen_correlated_batch(2, 3, spec, 1e-9)
    for img in batch[1:]:
        assert np.max(np.abs(img - batch[0])) < 1e-7


def test_generator_noise_calibration():
    spec = make_grid(32, 32, 10)
    sigma = 0.03
    batch = gen_correlated_batch(9, 40, spec, sigma)
    diffs = np.stack([img - batch[0] for img in batch[1:]])
    assert abs(diffs.std() / sigma - 1) < 0.2
    assert abs(diffs.mean()) < 3 * sigma / np.sqrt(diffs.size)


@pytest.mark.parametrize("N, sigma", [(1, 0.05), (3, 0.0), (3, 0.5), (3, -0.1)])
def test_generator_rejects(N, sigma):
    with pytest.raises(ValidationError):
        gen_correlated_batch(0, N, make_grid(8, 8, 10), sigma)


def test_l2_error_cases():
    b = np.array([3.0, 4.0])
    assert l2_rel_error(b, b) == 0.0
    assert l2_rel_error(2 * b, b) == 1.0
    assert l2_rel_error(np.zeros(2), b) == 1.0
    with pytest.raises(ValidationError):
        l2_rel_error(b, np.zeros(2))
    with pytest.raises(ValidationError):
        l2_rel_error(b, np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 100))
def test_l2_error_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=5), rng.normal(size=5) + 3
    assert np.isclose(l2_rel_error(scale * a, scale * b), l2_rel_error(a, b))


@pytest.fixture(scope="module")
def small_report():
    spec = make_grid(8, 8, 4)
    batch = BatchSpec(grid=spec, params=DiffusionParams(g=0.5), synthetic_n=4, sigma_p=0.05, seed=3)
    return run_benchmark(batch)


def test_report_schema_and_recompute(small_report):
    doc = json.loads(json.dumps(small_report.to_dict()))
    validate_report(doc)
    agg = doc["aggregates"]
    assert agg["n_images"] == 4 and agg["n_targets"] == 3 and agg["n_failed"] == 0
    assert set(agg["total_time_per_mode"]) == {"direct", "iterative", "recycled"}
    assert doc["environment"]["concurrency"] is False


def test_report_records_per_mode(small_report):
    recs = small_report.records
    assert len(recs) == 12
    direct = [r for r in recs if r["mode"] == "direct"]
    assert all(r["l2_rel_error_vs_direct"] == 0.0 and r["role"] == "baseline" for r in direct)
    assert [r["role"] for r in recs if r["mode"] == "recycled"] == ["seed", "target", "target", "target"]
    for r in recs:
        if r["mode"] != "direct":
            assert r["l2_rel_error_vs_direct"] < 1e-5
            assert r["converged"]


def test_validate_report_detects_tampering(small_report):
    doc = json.loads(json.dumps(small_report.to_dict()))
    doc["aggregates"]["avg_l2_error"] = 0.5
    with pytest.raises(ValidationError):
        validate_report(doc)
    doc = json.loads(json.dumps(small_report.to_dict()))
    doc["records"][0]["mode"] = "psychic"
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)


def test_report_files(tmp_path, small_report):
    small_report.write_json(tmp_path / "r.json")
    small_report.write_csv(tmp_path / "r.csv")
    validate_report(json.loads((tmp_path / "r.json").read_text()))
    lines = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(small_report.records)


def test_reproducible_apart_from_timing():
    spec = make_grid(8, 8, 3)
    make = lambda: run_benchmark(BatchSpec(grid=spec, synthetic_n=3, seed=8))
    a, b = make(), make()
    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in recs]
    assert strip(a.records) == strip(b.records)
    assert a.aggregates["iteration_reduction_pct"] == b.aggregates["iteration_reduction_pct"]


def test_single_image_has_no_reduction():
    spec = make_grid(8, 8, 3)
    rep = run_benchmark(BatchSpec(grid=spec, images=[np.full((8, 8), 0.5)]))
    assert rep.aggregates["time_reduction_pct"] is None
    assert rep.aggregates["iteration_reduction_pct"] is None
    validate_report(json.loads(json.dumps(rep.to_dict())))


def test_input_dir_and_seed_cycles(tmp_path):
    spec = make_grid(8, 8, 3)
    for k, img in enumerate(gen_correlated_batch(4, 5, spec, 0.05)):
        save_pgm(tmp_path / f"im{k}.pgm", img)
    rep = run_benchmark(BatchSpec(grid=spec, input_dir=str(tmp_path), recycle=RecycleConfig(seed_cycle=2)))
    roles = [r["role"] for r in rep.records if r["mode"] == "recycled"]
    assert roles == ["seed", "target", "seed", "target", "seed"]
    assert rep.aggregates["n_targets"] == 2


def test_rgb_images_run_per_channel():
    spec = make_grid(8, 8, 2)
    base = np.stack(gen_correlated_batch(1, 3, spec, 0.05), axis=-1)
    rep = run_benchmark(BatchSpec(grid=spec, images=[base, base[..., ::-1]]))
    assert rep.final_fields["direct"]["img0000"].shape == (3, 8, 8)
    assert all(r["status"] == "ok" for r in rep.records)


def test_failures_are_recorded_and_skipped():
    spec = make_grid(8, 8, 2)
    bad = np.full((8, 8), np.nan)
    rep = run_benchmark(BatchSpec(grid=spec, images=[np.full((8, 8), 0.5), bad, np.full((8, 8), 0.4)]))
    failed = [r for r in rep.records if r["status"] != "ok"]
    assert failed and all(r["image_id"] == "img0001" for r in failed)
    assert rep.aggregates["n_failed"] == len(failed)
    validate_report(json.loads(json.dumps(rep.to_dict())))


def test_batch_spec_validation():
    spec = make_grid(8, 8, 2)
    with pytest.raises(ValidationError):
        BatchSpec(grid=spec).load()
    with pytest.raises(ValidationError):
        BatchSpec(grid=spec, synthetic_n=3).load()
    with pytest.raises(ValidationError):
        BatchSpec(grid=spec, synthetic_n=3, seed=1, modes=("iterative",)).load()
    with pytest.raises(ValidationError):
        BatchSpec(grid=spec, images=[np.ones((8, 8))], image_ids=["a", "b"]).load()


def test_aggregates_skip_failed_and_partial_images():
    rec = lambda i, m, role, w, it, e, status="ok": {
        "image_id": i, "mode": m, "role": role, "status": status, "wall_time_s": w,
        "total_bicgstab_iterations": it, "l2_rel_error_vs_direct": e}
    records = [
        rec("a", "direct", "baseline", 2.0, 0, 0.0), rec("b", "direct", "baseline", 2.0, 0, 0.0),
        rec("a", "iterative", "seed", 1.0, 100, 1e-9), rec("b", "iterative", "target", 1.0, 100, 1e-9),
        rec("a", "recycled", "seed", 1.0, 100, 1e-9), rec("b", "recycled", "target", 0.5, 60, 3e-9),
        rec("c", "direct", "baseline", None, None, None, status="failed: x"),
    ]
    agg = compute_aggregates(records)
    assert agg["iteration_reduction_pct"] == 40.0
    assert agg["time_reduction_pct"] == 100.0 * (4.0 - 1.5) / 4.0
    assert agg["avg_l2_error"] == 2e-9
    assert agg["n_failed"] == 1 and agg["n_targets"] == 1


def test_lower_noise_recycles_better():
    spec = make_grid(16, 16, 10)
    red = {}
    for sigma in (0.01, 0.2):
        rep = run_benchmark(BatchSpec(grid=spec, synthetic_n=4, sigma_p=sigma, seed=21, modes=("direct", "iterative", "recycled")))
        red[sigma] = rep.aggregates["iteration_reduction_pct"]
    assert red[0.01] > red[0.2]
    assert red[0.01] > 10.0
