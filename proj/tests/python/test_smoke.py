import json
import math

import numpy as np
import pytest

import fracdiag


def test_scales_and_starts():
    assert fracdiag.valid_scales(9, 9) == [2, 3, 4, 5]
    assert fracdiag.segment_starts(5, 2) == [0, 2, 3]
    with pytest.raises(fracdiag.FracdiagError, match="dimension_too_small"):
        fracdiag.valid_scales(2, 5)


def test_segments_of_a_kernel():
    segs = fracdiag.segments(np.arange(9.0).reshape(3, 3), 2)
    assert [s["origin"] for s in segs] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    np.testing.assert_array_equal(segs[3]["values"], [[4, 5], [7, 8]])


def test_metrics():
    assert fracdiag.box_count(np.eye(8, dtype=bool), 2) == 4
    fd, degenerate = fracdiag.fractal_dimension(np.ones((4, 4)), 0.5)
    assert fd == pytest.approx(2.0) and not degenerate
    assert fracdiag.entropy(np.array([[0.0, 1.0], [2.0, 3.0]]), 4) == pytest.approx(math.log(4))
    assert fracdiag.kernel_edge([0, 0], [1, 0], 2.0, "locality") == pytest.approx(2 / math.e)
    assert fracdiag.finite_differences([0, 1, 4, 9]) == ([1, 3, 5], [2, 2])


def test_propagation_similarity():
    adj = np.array([[0, 2.0, 0], [2.0, 0, 0.5], [0, 0.5, 0]])
    m = fracdiag.propagation_operator(adj)
    a_hat = adj + np.eye(3)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(m).real), np.sort(np.linalg.eigvalsh(a_hat)), atol=1e-9)
    np.testing.assert_allclose(fracdiag.propagation_operator(adj, "symmetric"),
                               fracdiag.propagation_operator(adj, "symmetric").T)


def test_train_report_roundtrip(tmp_path):
    path = tmp_path / "s.fsnp"
    result = fracdiag.train_synthetic(seed=3, samples=64, epochs=4, out=path)
    assert len(result["epoch_loss"]) == 4
    run = fracdiag.open_run(path)
    assert run.epochs == [0, 1, 2, 3, 4]
    assert run.tensor(0, "conv1.weight").shape == (8, 1, 3, 3)
    assert run.loss(0) == pytest.approx(result["initial_loss"])

    summary = json.loads(fracdiag.report(path, tmp_path / "rep", threads=2))
    assert summary["run_id"] == run.run_id
    assert (tmp_path / "rep" / "phase_d1_vs_d2.svg").exists()

    code, out, err = fracdiag.main(["scales", "--n", "8", "--m", "8"])
    assert (code, json.loads(out)) == (0, {"scales": [2, 3, 4]})
    code, _, err = fracdiag.main(["fd", "--run", str(tmp_path / "missing.fsnp"), "--tensor", "w", "--scale", "2"])
    assert code == 2 and err.startswith("io_error:")
