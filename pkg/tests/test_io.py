import json

import numpy as np
import pytest

from dysonlab import io
from dysonlab.ensembles import EnsembleSpec, sample
from dysonlab.errors import InvalidInput, UnsupportedKind
from dysonlab.mde import SelfEnergySpec, solve_mde
from dysonlab.vde import VarianceMatrix, sc_density

from conftest import random_full_kappa


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, -2.5e-300, 12345678.123456789, np.pi):
        assert float(io.fmt(x)) == x
    assert io.fmt(0.1) == "0.10000000000000001"


def test_dumps_is_valid_json_and_stable():
    doc = {"a": [1.5, 2, float("nan")], "b": {"z": 1 + 2j}, "c": np.arange(3), "d": True}
    text = io.dumps(doc)
    assert text == io.dumps(doc)
    back = json.loads(text)
    assert back["a"][2] == "nan" and back["b"]["z"] == {"re": 1.0, "im": 2.0} and back["c"] == [0, 1, 2]


def test_variance_json_forms():
    S = VarianceMatrix.four_block(0.07, 8)
    assert np.array_equal(io.variance_from_json(io.variance_to_json(S)).entries, S.entries)
    vals = np.full((4, 4), 0.07)
    vals[0, 1:] = vals[1:, 0] = 1.0
    prof = {"profile": {"kind": "blocks", "block_rows": 2, "values": vals.tolist()}}
    assert np.array_equal(io.variance_from_json(prof).entries, S.entries)
    with pytest.raises(InvalidInput):
        io.variance_from_json({"n": 3, "entries": [0.0] * 8})


def test_self_energy_json(rng):
    for spec in (SelfEnergySpec.isotropic(4, real_symmetric=True),
                 SelfEnergySpec.diagonal(VarianceMatrix.wigner(5)),
                 SelfEnergySpec.full(random_full_kappa(rng, 3))):
        back = io.self_energy_from_json(json.loads(io.dumps(io.self_energy_to_json(spec))))
        R = rng.standard_normal((spec.n, spec.n))
        assert back.kind == spec.kind
        assert np.array_equal(back(R), spec(R))
    with pytest.raises(UnsupportedKind):
        io.self_energy_from_json({"kind": "band", "n": 2})


def test_density_csv_round_trip(tmp_path):
    d = sc_density(VarianceMatrix.four_block(0.07), np.linspace(-1, 1, 11), 1e-2, components=True)
    p = io.write_density_csv(tmp_path / "d.csv", d)
    assert p.read_text().splitlines()[0] == "tau,rho,nu_0,nu_1,nu_2,nu_3"
    back = io.read_density_csv(p)
    assert np.array_equal(back.rho, d.rho) and np.array_equal(back.components, d.components)


def test_solution_matrix_round_trip():
    sol = solve_mde(SelfEnergySpec.isotropic(3), None, 0.2 + 0.5j)
    back = io.solution_matrix_from_json(json.loads(io.dumps(io.solution_matrix_to_json(sol))))
    assert np.array_equal(back.M, sol.M) and back.z == sol.z


def test_batch_round_trip(tmp_path):
    batch = sample(EnsembleSpec(4, "complex_hermitian"), 3, 2)
    back = io.batch_from_json(json.loads(io.dumps(io.batch_to_json(batch))))
    assert all(np.array_equal(a, b) for a, b in zip(batch, back))
    paths = io.write_batch_csv(tmp_path, batch)
    assert len(paths) == 2 and paths[0].read_text().startswith("re_0,im_0,re_1")


def test_manifest_checksums(tmp_path):
    (tmp_path / "x.csv").write_text("a\n1\n")
    io.write_manifest(tmp_path, {"seed": 1})
    man = io.read_json(tmp_path / "manifest.json")
    assert man["artifacts"]["x.csv"] == io.sha256(tmp_path / "x.csv")
    assert man["status"] == "ok"


def test_svg_deterministic(tmp_path):
    x = np.linspace(0, 1, 20)
    a = io.write_line_svg(tmp_path / "a.svg", {"y": (x, x**2)}, "x", "y")
    b = io.write_line_svg(tmp_path / "b.svg", {"y": (x, x**2)}, "x", "y")
    assert a.read_bytes() == b.read_bytes()
