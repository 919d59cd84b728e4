"""Reading and writing matrices and system bundles.

Sparse matrices use Matrix Market files. Dense matrices are stored as raw
column-major binary (``.bin``) with a JSON header (``.json``) giving the
shape and dtype. A system bundle is a directory holding one file per
coefficient and a ``system.json`` manifest.
"""

import json
import pathlib

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ConfigInvalid
from .system import BilinearSystem, LowRankUpdate, ReducedModel

BUNDLE_MANIFEST = "system.json"
DTYPES = {"float64": np.float64, "complex128": np.complex128}


def write_dense(path, M):
    """Write `M` to ``path.bin`` (column-major) with header ``path.json``."""
    path = pathlib.Path(path).with_suffix("")
    M = np.asarray(M)
    M = M.reshape(M.shape[0], -1) if M.ndim else M.reshape(1, 1)
    dtype = "complex128" if np.iscomplexobj(M) else "float64"
    M = M.astype(DTYPES[dtype])
    path.with_suffix(".bin").write_bytes(M.tobytes(order="F"))
    header = {"rows": M.shape[0], "cols": M.shape[1], "dtype": dtype, "order": "F"}
    path.with_suffix(".json").write_text(json.dumps(header))
    return path.with_suffix(".bin")


def read_dense(path):
    path = pathlib.Path(path).with_suffix("")
    header = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype=DTYPES[header["dtype"]])
    return data.reshape((header["rows"], header["cols"]), order="F").copy()


def write_sparse(path, M):
    path = pathlib.Path(path).with_suffix(".mtx")
    scipy.io.mmwrite(str(path), sp.coo_matrix(M))
    return path


def read_sparse(path):
    return sp.csr_matrix(scipy.io.mmread(str(pathlib.Path(path).with_suffix(".mtx"))))


def _write_matrix(directory, name, M):
    """Store a coefficient matrix; returns its manifest entry."""
    if isinstance(M, LowRankUpdate):
        return {"kind": "lowrank", "base": _write_matrix(directory, name + "_base", M.base),
                "U": write_dense(directory / (name + "_U"), M.U).name,
                "V": write_dense(directory / (name + "_V"), M.V).name}
    if sp.issparse(M):
        return {"kind": "sparse", "file": write_sparse(directory / name, M).name}
    return {"kind": "dense", "file": write_dense(directory / name, M).name}


def _read_matrix(directory, entry):
    kind = entry["kind"]
    if kind == "lowrank":
        return LowRankUpdate(_read_matrix(directory, entry["base"]),
                             read_dense(directory / entry["U"]), read_dense(directory / entry["V"]))
    if kind == "sparse":
        return read_sparse(directory / entry["file"])
    return read_dense(directory / entry["file"])


def _to_json(value, directory, stem):
    # arrays go to dense dumps and are referenced by file name
    if isinstance(value, np.ndarray) and value.size > 1:
        return {"array": write_dense(directory / stem, value).name}
    if isinstance(value, (np.generic, np.ndarray)):
        return value.item() if np.isrealobj(value) else [value.real.item(), value.imag.item()]
    if isinstance(value, dict):
        return {k: _to_json(v, directory, f"{stem}_{k}") for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_json(v, directory, f"{stem}_{i}") for i, v in enumerate(value)]
    return value


def _from_json(value, directory):
    if isinstance(value, dict):
        if set(value) == {"array"}:
            arr = read_dense(directory / value["array"])
            return arr.ravel() if 1 in arr.shape else arr
        return {k: _from_json(v, directory) for k, v in value.items()}
    if isinstance(value, list):
        return [_from_json(v, directory) for v in value]
    return value


def save_system(sys, directory, extra=None):
    """Write `sys` as a bundle directory and return the manifest dict.

    The origin of the provenance chain, if any, is stored in the
    ``origin`` subdirectory so that `replay` works on the loaded system.
    """
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {"A": _write_matrix(directory, "A", sys.A),
             "N": [_write_matrix(directory, f"N{k + 1}", Nk) for k, Nk in enumerate(sys.N)],
             "B": write_dense(directory / "B", sys.B).name,
             "C": write_dense(directory / "C", sys.C).name,
             "D": write_dense(directory / "D", sys.D.reshape(-1, 1)).name}
    manifest = {"kind": "reduced" if isinstance(sys, ReducedModel) else "system",
                "name": sys.name, "n": sys.n, "m": sys.m, "l": sys.l, "field": sys.field,
                "eta": sys.eta, "alpha": sys.alpha, "stabilization": sys.stabilization,
                "provenance": [_to_json(p, directory, f"prov{i}")
                               for i, p in enumerate(sys.provenance)],
                "files": files}
    if isinstance(sys, ReducedModel):
        manifest.update(method=sys.method, d=sys.d,
                        parent=[_to_json(p, directory, f"parent{i}")
                                for i, p in enumerate(sys.parent)],
                        info=_to_json(sys.info, directory, "info"))
        if sys.basis is not None:
            files["basis"] = write_dense(directory / "basis", sys.basis).name
    if sys.origin is not None:
        save_system(sys.origin, directory / "origin")
        manifest["origin"] = "origin"
    if extra:
        manifest["extra"] = _to_json(extra, directory, "extra")
    (directory / BUNDLE_MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest


def load_system(directory):
    """Read a bundle written by `save_system`."""
    directory = pathlib.Path(directory)
    try:
        manifest = json.loads((directory / BUNDLE_MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"bundle: no {BUNDLE_MANIFEST} in {directory}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"bundle: {BUNDLE_MANIFEST} is not valid JSON ({exc})") from exc
    files = manifest["files"]
    A = _read_matrix(directory, files["A"])
    N = [_read_matrix(directory, e) for e in files["N"]]
    B = read_dense(directory / files["B"])
    C = read_dense(directory / files["C"])
    D = read_dense(directory / files["D"]).ravel()
    prov = tuple(_from_json(p, directory) for p in manifest["provenance"])
    origin = load_system(directory / manifest["origin"]) if manifest.get("origin") else None
    common = dict(provenance=prov, origin=origin, name=manifest.get("name", ""))
    if manifest["kind"] == "reduced":
        basis = read_dense(directory / files["basis"]) if "basis" in files else None
        return ReducedModel(A, N, B, C, D, method=manifest["method"],
                            parent=tuple(_from_json(p, directory) for p in manifest["parent"]),
                            info=_from_json(manifest["info"], directory), basis=basis, **common)
    return BilinearSystem(A, N, B, C, D, **common)


def load_extra(directory):
    """The ``extra`` entry of a bundle manifest with arrays restored."""
    directory = pathlib.Path(directory)
    return _from_json(load_manifest(directory).get("extra", {}), directory)


def load_manifest(directory):
    path = pathlib.Path(directory) / BUNDLE_MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"bundle: no {BUNDLE_MANIFEST} in {directory}") from exc
