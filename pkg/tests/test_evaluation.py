import json

import numpy as np
import pytest

from innstab import evaluation as ev
from innstab.errors import ContractError, DegenerateSampleError, ShapeError


def test_pearson_examples():
    a = np.random.default_rng(0).random((8, 8))
    assert ev.pearson(a, a) == pytest.approx(1.0, abs=1e-15)
    assert ev.pearson(a, -a) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DegenerateSampleError):
        ev.pearson(np.full(10, 0.3), np.arange(10))
    with pytest.raises(ShapeError):
        ev.pearson(np.ones(3), np.ones(4))


def test_pearson_affine_invariance_and_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.standard_normal((2, 50))
        alpha, c = rng.uniform(0.1, 10), rng.normal()
        r = ev.pearson(a, b)
        assert abs(ev.pearson(alpha * a + c, b) - r) < 1e-12
        assert ev.pearson(b, a) == r
        assert -1 <= r <= 1


def test_advdetect_examples():
    rng = np.random.default_rng(2)
    rc, ra = rng.random((2, 16, 16))
    uc = rng.random((16, 16))
    assert ev.advdetect_score(uc, uc + (ra - rc), rc, ra) == pytest.approx(1.0)
    assert ev.advdetect_score(uc, uc + 3 * np.abs(ra - rc), rc, ra) == pytest.approx(1.0)


def test_advdetect_null_distribution():
    rng = np.random.default_rng(3)
    rs = np.array([ev.advdetect_score(*rng.random((4, 128, 128))) for _ in range(200)])
    assert np.mean(np.abs(rs) < 0.05) >= 0.99


def test_artdetect_examples():
    mask = np.zeros((8, 8), bool)
    mask[2:5, 1:4] = True
    u = np.zeros((8, 8))
    assert ev.artdetect_score(u, mask.astype(float), mask) == pytest.approx(1.0)
    assert ev.artdetect_score(u, 1.0 - mask, mask) == pytest.approx(-1.0)
    with pytest.raises(DegenerateSampleError):
        ev.artdetect_score(u, np.full((8, 8), 0.2), mask)
    with pytest.raises(DegenerateSampleError):
        ev.artdetect_score(u, mask.astype(float), np.ones((8, 8)))
    with pytest.raises(ContractError):
        ev.artdetect_score(u, u, np.full((8, 8), 0.5))


def test_scores_permutation_invariant():
    rng = np.random.default_rng(4)
    a, b, c, d = rng.random((4, 100))
    perm = rng.permutation(100)
    assert ev.advdetect_score(a, b, c, d) == pytest.approx(ev.advdetect_score(a[perm], b[perm], c[perm], d[perm]),
                                                          abs=1e-12)
    mask = rng.random(100) < 0.3
    assert ev.artdetect_score(a, b, mask) == pytest.approx(ev.artdetect_score(a[perm], b[perm], mask[perm]),
                                                           abs=1e-12)


def records(means, method="inn"):
    out = []
    for run, m in enumerate(means):
        for sid, r in enumerate((m - 0.1, m, m + 0.1)):
            out.append(ev.DetectionRecord(sid, method, "advdetect", "ct", run, r))
    return out


def test_aggregate_examples():
    row, = ev.aggregate(records([0.5, 0.6, 0.7]))
    assert row["mean"] == pytest.approx(0.6)
    assert row["std"] == pytest.approx(0.0816, abs=1e-4)
    row, = ev.aggregate(records([0.4]))
    assert row["std"] == 0.0
    with pytest.raises(ContractError):
        ev.aggregate([])


def test_aggregate_degenerate_and_order():
    recs = records([0.5, 0.6]) + [ev.DetectionRecord(9, "inn", "advdetect", "ct", 0, None)]
    row, = ev.aggregate(recs)
    assert row["degenerate"] == 1 and row["mean"] == pytest.approx(0.55)
    shuffled = [recs[i] for i in np.random.default_rng(0).permutation(len(recs))]
    assert ev.aggregate(shuffled) == ev.aggregate(recs)


def test_record_scoring_marks_degenerate():
    z = np.zeros((4, 4))
    rec = ev.DetectionRecord(0, "mcdrop", "advdetect", u_clean=z, u_perturbed=z, rec_clean=z,
                             rec_perturbed=np.eye(4)).score()
    assert rec.pearson_r is None


def test_csv_and_summary_round_trip(tmp_path):
    recs = records([0.5, 0.6]) + records([0.1, 0.2], "mcdrop")
    ev.write_records_csv(tmp_path / "r.csv", recs)
    back = ev.read_records_csv(tmp_path / "r.csv")
    assert ev.aggregate(back) == ev.aggregate(recs)
    rows = ev.aggregate(recs)
    ev.write_summary_json(tmp_path / "s.json", rows, {"seed": 0})
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["std_convention"] == "population"
    assert doc["results"]["ct"]["advdetect"]["inn"]["mean"] == pytest.approx(0.55)
    text = ev.format_table(rows)
    assert "inn" in text and "0.550" in text and "probout" in text
