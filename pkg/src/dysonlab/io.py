"""File formats: JSON for configs and summaries, CSV for bulk data, SVG for plots.

Floats are written with 17 significant digits so that outputs round-trip
exactly and repeated runs can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .ensembles import EnsembleSpec, SampleBatch
from .mde import SelfEnergySpec, SolutionMatrix
from .vde import DensityCurve, HalfPlanePoint, VarianceMatrix

__all__ = [
    "fmt",
    "dumps",
    "write_json",
    "read_json",
    "write_csv",
    "sha256",
    "write_manifest",
    "variance_to_json",
    "variance_from_json",
    "self_energy_to_json",
    "self_energy_from_json",
    "density_csv_rows",
    "write_density_csv",
    "read_density_csv",
    "solution_matrix_to_json",
    "solution_matrix_from_json",
    "write_line_svg",
    "ensemble_to_json",
    "ensemble_from_json",
    "batch_to_json",
    "batch_from_json",
    "write_batch_csv",
]


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        # JSON has no nan/inf; strings keep the file valid and readable
        s = fmt(obj)
        return s if math.isfinite(obj) else json.dumps(s)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(k) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON text with 17-significant-digit floats."""
    return _encode(_to_plain(obj), indent, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                              for v in row) + "\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config: dict, status: str = "ok", error: str | None = None,
                   name: str = "manifest.json") -> Path:
    """Echo the resolved config with a checksum of every other file in ``out_dir``."""
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.iterdir()):
        if p.is_file() and p.name != name:
            files[p.name] = sha256(p)
    doc = {"status": status, "config": config, "artifacts": files}
    if error is not None:
        doc["error"] = error
    return write_json(out_dir / name, doc)


# ----------------------------------------------------------------------------
# Domain objects
# ----------------------------------------------------------------------------


def variance_to_json(S: VarianceMatrix) -> dict:
    return {"n": S.n, "entries": S.entries.ravel().tolist()}


def variance_from_json(doc: dict) -> VarianceMatrix:
    """Accepts ``{"n", "entries"}`` (row-major) or a block profile
    ``{"profile": {"kind": "blocks", "block_rows": r, "values": k x k}}``
    where each block has ``r`` rows, so ``n = k r``."""
    if "profile" in doc:
        prof = doc["profile"]
        if prof.get("kind") != "blocks":
            raise InvalidInput(f"unsupported profile kind {prof.get('kind')!r}")
        values = np.asarray(prof["values"], dtype=float)
        if values.ndim == 1:
            k = int(round(math.sqrt(values.size)))
            if k * k != values.size:
                raise InvalidInput("flat block values must have square length")
            values = values.reshape(k, k)
        n = int(prof["block_rows"]) * values.shape[0]
        if "n" in doc and int(doc["n"]) != n:
            raise InvalidInput("n does not match block_rows times the number of blocks")
        return VarianceMatrix.from_blocks(values, n)
    n = int(doc["n"])
    entries = np.asarray(doc["entries"], dtype=float)
    if entries.size != n * n:
        raise InvalidInput(f"expected {n * n} entries, got {entries.size}")
    return VarianceMatrix(entries.reshape(n, n))


def self_energy_to_json(spec: SelfEnergySpec) -> dict:
    doc = {"kind": spec.kind, "n": spec.n}
    if spec.kind == "diagonal":
        doc["variance_matrix"] = variance_to_json(spec.variance)
    if spec.kind == "full":
        doc["kappa"] = spec.kappa.ravel().tolist()
    else:
        doc["real_symmetric"] = bool(spec.real_symmetric)
    if spec.flatness_bounds is not None:
        doc["flatness_bounds"] = list(spec.flatness_bounds)
    return doc


def self_energy_from_json(doc: dict) -> SelfEnergySpec:
    kind = doc.get("kind")
    n = int(doc["n"])
    rs = bool(doc.get("real_symmetric", False))
    fb = tuple(doc["flatness_bounds"]) if "flatness_bounds" in doc else None
    if kind == "isotropic":
        return SelfEnergySpec.isotropic(n, real_symmetric=rs)
    if kind == "diagonal":
        S = variance_from_json(doc["variance_matrix"])
        return SelfEnergySpec("diagonal", n, variance=S, real_symmetric=rs, flatness_bounds=fb)
    if kind == "full":
        kappa = np.asarray(doc["kappa"], dtype=float)
        if kappa.size != n**4:
            raise InvalidInput(f"kappa must have n^4 = {n**4} entries")
        return SelfEnergySpec("full", n, kappa=kappa.reshape((n,) * 4), flatness_bounds=fb)
    return SelfEnergySpec(str(kind), n)  # raises UnsupportedKind


def density_csv_rows(d: DensityCurve, components: bool = True):
    header = ["tau", "rho"]
    cols = [d.grid, d.rho]
    if components and d.components is not None:
        header += [f"nu_{i}" for i in range(d.components.shape[0])]
        cols += list(d.components)
    return header, zip(*cols)


def write_density_csv(path, d: DensityCurve, components: bool = True) -> Path:
    header, rows = density_csv_rows(d, components)
    return write_csv(path, header, rows)


def read_density_csv(path) -> DensityCurve:
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    comps = [n for n in names if n.startswith("nu_")]
    nu = np.array([data[c] for c in comps]) if comps else None
    return DensityCurve(np.atleast_1d(data["tau"]), np.atleast_1d(data["rho"]), nu)


def solution_matrix_to_json(sol: SolutionMatrix) -> dict:
    M = np.asarray(sol.M, dtype=complex)
    inter = np.empty(2 * M.size)
    inter[0::2] = M.real.ravel()
    inter[1::2] = M.imag.ravel()
    return {"z": {"re": sol.z.re, "im": sol.z.im}, "n": M.shape[0],
            "residual": sol.residual, "M": inter.tolist()}


def solution_matrix_from_json(doc: dict) -> SolutionMatrix:
    n = int(doc["n"])
    inter = np.asarray(doc["M"], dtype=float)
    if inter.size != 2 * n * n:
        raise InvalidInput("interleaved M has the wrong length")
    M = (inter[0::2] + 1j * inter[1::2]).reshape(n, n)
    return SolutionMatrix(HalfPlanePoint(doc["z"]["re"], doc["z"]["im"]), M, float(doc["residual"]))


def ensemble_to_json(spec: EnsembleSpec) -> dict:
    doc = {"n": spec.n, "symmetry": spec.symmetry, "kind": spec.kind, "entry_law": spec.entry_law}
    if spec.variance is not None:
        doc["variance"] = variance_to_json(spec.variance)
    if spec.self_energy is not None:
        doc["self_energy"] = self_energy_to_json(spec.self_energy)
    return doc


def ensemble_from_json(doc: dict) -> EnsembleSpec:
    var = variance_from_json(doc["variance"]) if doc.get("variance") is not None else None
    se = self_energy_from_json(doc["self_energy"]) if doc.get("self_energy") is not None else None
    return EnsembleSpec(int(doc["n"]), doc.get("symmetry", "real_symmetric"), doc.get("kind", "wigner"),
                        var, se, doc.get("entry_law", "gaussian"))


def _matrix_values(H) -> list:
    H = np.asarray(H)
    if np.iscomplexobj(H):
        inter = np.empty(2 * H.size)
        inter[0::2], inter[1::2] = H.real.ravel(), H.imag.ravel()
        return inter.tolist()
    return H.ravel().tolist()


def batch_to_json(batch: SampleBatch) -> dict:
    """Matrices as row-major real arrays (re/im interleaved for the complex class)."""
    return {"spec": ensemble_to_json(batch.spec), "seed": batch.seed,
            "matrices": [_matrix_values(H) for H in batch.matrices]}


def batch_from_json(doc: dict) -> SampleBatch:
    spec = ensemble_from_json(doc["spec"])
    n = spec.n
    mats = []
    for vals in doc["matrices"]:
        v = np.asarray(vals, dtype=float)
        mats.append((v[0::2] + 1j * v[1::2]).reshape(n, n) if v.size == 2 * n * n else v.reshape(n, n))
    return SampleBatch(spec, int(doc["seed"]), mats)


def write_batch_csv(out_dir, batch: SampleBatch, stem: str = "matrix") -> list[Path]:
    """One CSV per matrix; complex entries become ``re_j,im_j`` column pairs."""
    out_dir = Path(out_dir)
    paths = []
    for k, H in enumerate(batch.matrices):
        H = np.asarray(H)
        n = H.shape[0]
        if np.iscomplexobj(H):
            header = [f"{part}_{j}" for j in range(n) for part in ("re", "im")]
            rows = (np.column_stack([H.real[i], H.imag[i]]).ravel() for i in range(n))
        else:
            header = [f"c_{j}" for j in range(n)]
            rows = iter(H)
        paths.append(write_csv(out_dir / f"{stem}_{k:04d}.csv", header, rows))
    return paths


def write_line_svg(path, series: dict, xlabel: str, ylabel: str, *, loglog: bool = False,
                   title: str | None = None) -> Path:
    """Static line chart; ``series`` maps labels to ``(x, y)`` pairs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dysonlab"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o" if loglog else None, ms=3, lw=1.2, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path

