"""Builtin problem family and serialization tests.

Construction promises checked here: claimed tags are recomputed evidence,
known solutions really solve the equation (bitwise for the anchored
point), and the JSON round trip preserves every float exactly.
"""

import json

import numpy as np
import pytest

from dsmflow.errors import CertificateMismatch, ParseError
from dsmflow.hilbert import DenseOperator, norm, write_matrix_text
from dsmflow.model import DsmProblem, NonlinearMap, full_residual
from dsmflow.problems import (BUILTINS, TAGS, ProblemBundle, _verify_tags,
                              ill_conditioned, load_problem, make_map,
                              save_problem, sector_blocks, singular_canonical,
                              singular_monotone, wellposed_cubic)


# -- map registry -------------------------------------------------------------


def test_make_map_registry_and_validation():
    z = make_map("zero", 3)
    assert np.array_equal(z(np.ones(3)), np.zeros(3))
    c = make_map("constant", 2, {"offset": [1.0, -1.0]})
    assert np.array_equal(c(np.zeros(2)), [1.0, -1.0])
    with pytest.raises(ParseError):
        make_map("quartic", 2)
    with pytest.raises(ValueError):
        make_map("cubic", 2, {"scale": -0.1, "offset": np.zeros(2)})


def test_linear_map_monotone_claim_follows_symmetric_part():
    M_good = np.array([[1.0, 2.0], [-2.0, 1.0]])  # sym part = I
    assert make_map("linear", 2, {"matrix": M_good}).monotone_claimed
    M_bad = np.array([[-1.0, 0.0], [0.0, 1.0]])
    assert not make_map("linear", 2, {"matrix": M_bad}).monotone_claimed


def test_range_cubic_requires_orthonormal_basis():
    B = np.array([[1.0], [1.0]])  # not unit norm
    with pytest.raises(ValueError, match="orthonormal"):
        make_map("range_cubic", 2, {"scale": 1.0, "basis": B,
                                    "offset": np.zeros(2)})


def test_range_cubic_acts_inside_range_only():
    B = np.array([[1.0], [0.0]])
    g = make_map("range_cubic", 2, {"scale": 2.0, "basis": B,
                                    "offset": np.zeros(2)})
    # nullspace component is invisible to the map
    assert np.array_equal(g(np.array([0.5, 9.0])), [2.0 * 0.125, 0.0])


# -- tag verification ----------------------------------------------------------


def test_verify_tags_rejects_false_claims():
    well = wellposed_cubic(4, scale=0.1, seed=60).problem
    with pytest.raises(CertificateMismatch, match="singular"):
        _verify_tags(well, ("singular",))
    sing = singular_monotone(4, rank=2, seed=60).problem
    with pytest.raises(CertificateMismatch, match="invertible"):
        _verify_tags(sing, ("invertible",))
    with pytest.raises(CertificateMismatch, match="unknown tag"):
        _verify_tags(well, ("banach",))
    rot = DenseOperator([[0.0, 1.0], [-1.0, 0.0]])
    p = DsmProblem(L=rot, g=make_map("zero", 2), u0=np.zeros(2), radius=1.0)
    with pytest.raises(CertificateMismatch, match="self_adjoint_psd"):
        _verify_tags(p, ("self_adjoint_psd",))


# -- generators -----------------------------------------------------------------


@pytest.mark.parametrize("dim", [1, 4, 10])
def test_wellposed_cubic_structure(dim):
    b = wellposed_cubic(dim, scale=0.1, seed=42)
    assert isinstance(b, ProblemBundle)
    assert set(b.spec.tags) == {"invertible", "trust_condition",
                                "self_adjoint_psd", "monotone_g"}
    assert set(b.certificates) >= set(b.spec.tags)
    assert b.certificates["trust_condition"].passed
    w = np.linalg.eigvalsh(b.problem.L.entries)
    assert w[0] >= 1.0 - 1e-9 and w[-1] <= 4.0 + 1e-9
    assert norm(b.problem.u0) == pytest.approx(0.5, rel=1e-12)
    # attached sup bounds really dominate the map on the trust ball
    bounds = b.problem.g.bounds
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = rng.standard_normal(dim)
        u = b.problem.u0 + b.problem.radius * d / max(norm(d), 1e-12)
        assert norm(b.problem.g(u)) <= bounds.value * (1 + 1e-12)
        J = b.problem.g.jacobian(u)
        assert np.linalg.norm(J, 2) <= bounds.jacobian * (1 + 1e-12)


def test_wellposed_cubic_rejects_bad_arguments():
    with pytest.raises(ValueError):
        wellposed_cubic(0)
    with pytest.raises(ValueError):
        wellposed_cubic(3, scale=-1.0)


def test_singular_monotone_exact_solutions():
    for seed in (42, 1, 7):
        b = singular_monotone(6, rank=3, seed=seed)
        # the anchored point solves bitwise, the companion point to rounding
        assert norm(full_residual(b.problem, b.min_norm_solution)) == 0.0
        assert norm(full_residual(b.problem, b.solution)) <= 1e-14
        # minimal-norm point is the range projection of the solution
        proj = b.solution - b.nullspace @ (b.nullspace.T @ b.solution)
        assert norm(b.min_norm_solution - proj) <= 1e-12
        assert b.nullspace.shape == (6, 3)
        assert np.max(np.abs(b.problem.L.entries @ b.nullspace)) <= 1e-14


def test_singular_monotone_cubic_variant():
    b = singular_monotone(6, rank=3, seed=42, cubic_scale=0.2)
    assert b.problem.g.name == "range_cubic"
    assert norm(full_residual(b.problem, b.min_norm_solution)) == 0.0
    assert np.array_equal(b.solution, b.min_norm_solution)
    assert "singular" in b.certificates and "monotone_g" in b.certificates


def test_singular_monotone_diagonal_variant_and_validation():
    b = singular_monotone(4, rank=2, seed=2, diagonal=True)
    off_diag = b.problem.L.entries - np.diag(np.diag(b.problem.L.entries))
    assert np.max(np.abs(off_diag)) == 0.0
    with pytest.raises(ValueError):
        singular_monotone(4, rank=0)
    with pytest.raises(ValueError):
        singular_monotone(4, rank=4)


def test_singular_canonical_closed_form():
    b = singular_canonical()
    assert np.array_equal(b.problem.L.entries, np.diag([1.0, 0.0]))
    assert np.array_equal(b.min_norm_solution, [1.0, 0.0])
    assert np.array_equal(b.nullspace.ravel(), [0.0, 1.0])
    # any point (1, y) solves
    for y in (-3.0, 0.0, 2.5):
        assert norm(full_residual(b.problem, np.array([1.0, y]))) == 0.0


def test_ill_conditioned_hilbert_structure():
    b = ill_conditioned(8, scale=0.1, seed=42)
    # leading entries of the Hilbert matrix
    assert b.problem.L.entries[0, 0] == 1.0
    assert b.problem.L.entries[0, 1] == pytest.approx(0.5)
    assert b.problem.L.condition_estimate() > 1e9
    assert norm(full_residual(b.problem, b.solution)) <= 1e-14
    with pytest.raises(ValueError):
        ill_conditioned(13)


def test_sector_blocks_spectrum_and_shift():
    b = sector_blocks(8, seed=42)
    ev = np.linalg.eigvals(b.problem.L.entries)
    assert float(ev.real.min()) >= -1e-12
    assert b.problem.epsilon == 0.1
    assert b.certificates["sector"].passed
    assert not b.problem.L.self_adjoint
    with pytest.raises(ValueError):
        sector_blocks(5)


def test_builtin_registry_is_complete():
    assert set(BUILTINS) == {"wellposed_cubic", "singular_monotone",
                             "singular_canonical", "ill_conditioned",
                             "sector_blocks"}
    for tag_tuple in (b.spec.tags for b in [singular_canonical()]):
        assert set(tag_tuple) <= set(TAGS)


# -- JSON round trip ----------------------------------------------------------------


def test_save_load_round_trip_is_bitwise(tmp_path):
    b = wellposed_cubic(5, scale=0.1, seed=61)
    path = tmp_path / "prob.json"
    save_problem(b.problem, path, name="well5", tags=b.spec.tags)
    back = load_problem(path)
    assert back.spec.name == "well5"
    assert set(back.spec.tags) == set(b.spec.tags)
    assert np.array_equal(back.problem.L.entries, b.problem.L.entries)
    assert back.problem.L.self_adjoint and back.problem.L.psd_claimed
    assert np.array_equal(back.problem.u0, b.problem.u0)
    assert back.problem.radius == b.problem.radius
    assert back.problem.epsilon == b.problem.epsilon
    assert np.array_equal(back.problem.g.params["offset"],
                          b.problem.g.params["offset"])
    assert back.problem.g.params["scale"] == b.problem.g.params["scale"]
    # saving the loaded problem reproduces the file byte for byte
    path2 = tmp_path / "prob2.json"
    save_problem(back.problem, path2, name="well5", tags=b.spec.tags)
    assert path.read_bytes() == path2.read_bytes()


def test_save_rejects_custom_maps_and_unknown_tags(tmp_path):
    custom = NonlinearMap(lambda u: u, lambda u: np.eye(u.size), name="mine")
    p = DsmProblem(L=DenseOperator.identity(2), g=custom, u0=np.zeros(2),
                   radius=1.0)
    with pytest.raises(ValueError, match="builtin"):
        save_problem(p, tmp_path / "x.json")
    q = singular_canonical().problem
    with pytest.raises(ValueError, match="unknown tags"):
        save_problem(q, tmp_path / "y.json", tags=("bogus",))


def test_load_resolves_matrix_file_reference(tmp_path):
    b = singular_monotone(4, rank=2, seed=62)
    write_matrix_text(b.problem.L, tmp_path / "op.txt")
    doc = {
        "name": "filed", "dim": 4,
        "L": {"file": "op.txt"},
        "g": {"builtin": "constant",
              "params": {"offset": b.problem.g.params["offset"].tolist()}},
        "u0": [0.0, 0.0, 0.0, 0.0],
        "radius": 2.0,
        "tags": ["singular"],
    }
    path = tmp_path / "filed.json"
    path.write_text(json.dumps(doc))
    back = load_problem(path)
    assert np.array_equal(back.problem.L.entries, b.problem.L.entries)
    assert back.problem.epsilon == 0.0  # default when absent


def write_doc(tmp_path, **overrides):
    doc = {
        "name": "t", "dim": 2,
        "L": {"rows": [[1.0, 0.0], [0.0, 1.0]], "flags": []},
        "g": {"builtin": "zero", "params": {}},
        "u0": [0.0, 0.0], "radius": 1.0,
    }
    doc.update(overrides)
    path = tmp_path / "doc.json"
    path.write_text(json.dumps(doc))
    return path


def test_load_parse_error_contexts(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError, match="invalid JSON"):
        load_problem(bad)
    with pytest.raises(ParseError, match="missing field 'radius'"):
        doc = json.loads(write_doc(tmp_path).read_text())
        del doc["radius"]
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        load_problem(p)
    with pytest.raises(ParseError, match="type"):
        load_problem(write_doc(tmp_path, dim="two"))
    with pytest.raises(ParseError, match="header says 3"):
        load_problem(write_doc(tmp_path, dim=3))
    with pytest.raises(ParseError, match="unknown L flags"):
        load_problem(write_doc(
            tmp_path, L={"rows": [[1.0, 0.0], [0.0, 1.0]], "flags": ["hermitian"]}))
    with pytest.raises(ParseError, match="unknown tags"):
        load_problem(write_doc(tmp_path, tags=["bogus"]))
    with pytest.raises(ParseError, match="unknown builtin"):
        load_problem(write_doc(tmp_path, g={"builtin": "quartic", "params": {}}))


def test_load_flag_violation_is_certificate_mismatch(tmp_path):
    path = write_doc(tmp_path, L={"rows": [[0.0, 1.0], [-1.0, 0.0]],
                                  "flags": ["self_adjoint"]})
    with pytest.raises(CertificateMismatch, match="violates its flags"):
        load_problem(path)
