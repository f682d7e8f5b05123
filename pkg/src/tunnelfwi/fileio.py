"""Plain-text file formats: time records, frequency records, model grids.

All numbers are written with repr (shortest round-tripping form), so every
writer/reader pair is bitwise lossless.  Trace and record identifiers use
source index, receiver index and direction letter (x or y).
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from . import material as matmod
from . import signal as sigmod

_DIR_LETTER = {0: "x", 1: "y"}
_DIR_INDEX = {"x": 0, "y": 1}


def fmt(x):
    """Shortest exact decimal form of a number (plain Python float repr)."""
    return repr(float(x))


class FileFormatError(ValueError):
    pass


def _parse_header_line(line, key, path, line_no):
    parts = line.split("=", 1)
    if len(parts) != 2 or parts[0].strip() != key:
        raise FileFormatError(f"{path}:{line_no}: expected '{key} = ...'")
    return parts[1].strip()


# -- time records -------------------------------------------------------------

def write_time_records(path, traces):
    """``traces`` maps (source, receiver, direction letter) to TimeSeries."""
    keys = sorted(traces)
    first = traces[keys[0]]
    nt = len(first.samples)
    with open(path, "w") as f:
        f.write("# time-records\n")
        f.write(f"nt = {nt}\n")
        f.write(f"dt = {fmt(first.dt)}\n")
        f.write(f"t0 = {fmt(first.t0)}\n")
        for (s, r, d) in keys:
            t = traces[(s, r, d)]
            if len(t.samples) != nt or t.dt != first.dt or t.t0 != first.t0:
                raise FileFormatError("all traces must share nt, dt and t0")
            f.write(f"trace = s{s} r{r} {d}\n")
        for n in range(nt):
            f.write(" ".join(fmt(traces[k].samples[n]) for k in keys) + "\n")


def read_time_records(path):
    """Inverse of write_time_records; returns {(s, r, d): TimeSeries}."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "# time-records":
        raise FileFormatError(f"{path}: missing '# time-records' header")
    nt = int(_parse_header_line(lines[1], "nt", path, 2))
    dt = float(_parse_header_line(lines[2], "dt", path, 3))
    t0 = float(_parse_header_line(lines[3], "t0", path, 4))
    if dt <= 0:
        raise FileFormatError(f"{path}: dt must be > 0, got {dt}")
    if nt < 2:
        raise FileFormatError(f"{path}: need nt >= 2, got {nt}")

    keys = []
    row = 4
    while row < len(lines) and lines[row].startswith("trace"):
        toks = _parse_header_line(lines[row], "trace", path, row + 1).split()
        if len(toks) != 3 or toks[0][0] != "s" or toks[1][0] != "r" or toks[2] not in _DIR_INDEX:
            raise FileFormatError(f"{path}:{row + 1}: malformed trace id")
        keys.append((int(toks[0][1:]), int(toks[1][1:]), toks[2]))
        row += 1
    if not keys:
        raise FileFormatError(f"{path}: no traces declared")

    body = [ln for ln in lines[row:] if ln.strip()]
    if len(body) != nt:
        raise FileFormatError(f"{path}: expected {nt} sample rows, found {len(body)}")
    data = np.array([[float(tok) for tok in ln.split()] for ln in body])
    if data.shape[1] != len(keys):
        raise FileFormatError(f"{path}: expected {len(keys)} columns")
    return {k: sigmod.TimeSeries(data[:, i], dt, t0) for i, k in enumerate(keys)}


# -- frequency-domain records ---------------------------------------------------

def write_frequency_records(path, observed, n_sources, n_receivers):
    """``observed`` maps omega to a complex (n_sources, n_receivers, 2) array."""
    with open(path, "w") as f:
        f.write("# frequency-records\n")
        f.write(f"n_sources = {n_sources}\n")
        f.write(f"n_receivers = {n_receivers}\n")
        for omega in sorted(observed):
            vals = np.asarray(observed[omega])
            if vals.shape != (n_sources, n_receivers, 2):
                raise FileFormatError(f"records at omega={omega} have shape {vals.shape}")
            for s in range(n_sources):
                for r in range(n_receivers):
                    for d in range(2):
                        v = vals[s, r, d]
                        f.write(f"{fmt(omega)} s{s} r{r} {_DIR_LETTER[d]} "
                                f"{fmt(v.real)} {fmt(v.imag)}\n")


def read_frequency_records(path):
    """Inverse of write_frequency_records: {omega: (n_s, n_r, 2) array}."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "# frequency-records":
        raise FileFormatError(f"{path}: missing '# frequency-records' header")
    n_sources = int(_parse_header_line(lines[1], "n_sources", path, 2))
    n_receivers = int(_parse_header_line(lines[2], "n_receivers", path, 3))
    out = {}
    for line_no, ln in enumerate(lines[3:], start=4):
        if not ln.strip():
            continue
        toks = ln.split()
        if len(toks) != 6:
            raise FileFormatError(f"{path}:{line_no}: expected 6 columns")
        omega = float(toks[0])
        s, r = int(toks[1][1:]), int(toks[2][1:])
        d = _DIR_INDEX[toks[3]]
        if omega not in out:
            out[omega] = np.zeros((n_sources, n_receivers, 2), dtype=complex)
        out[omega][s, r, d] = complex(float(toks[4]), float(toks[5]))
    if not out:
        raise FileFormatError(f"{path}: no records found")
    return out


def is_frequency_record_file(path):
    with open(path) as f:
        return f.readline().strip() == "# frequency-records"


# -- frequency sweeps -----------------------------------------------------------

def write_greens_sweep(path, omegas, values, n_receivers):
    """``values`` has shape (n_frequencies, n_receivers, 2)."""
    with open(path, "w") as f:
        f.write("# greens-sweep\n")
        f.write(f"n_receivers = {n_receivers}\n")
        for i, w in enumerate(omegas):
            for r in range(n_receivers):
                for d in range(2):
                    v = values[i, r, d]
                    f.write(f"{fmt(w)} r{r} {_DIR_LETTER[d]} "
                            f"{fmt(v.real)} {fmt(v.imag)}\n")


def read_greens_sweep(path):
    """Inverse of write_greens_sweep: (omegas, values (n_f, n_r, 2))."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "# greens-sweep":
        raise FileFormatError(f"{path}: missing '# greens-sweep' header")
    n_receivers = int(_parse_header_line(lines[1], "n_receivers", path, 2))
    rows = {}
    for line_no, ln in enumerate(lines[2:], start=3):
        if not ln.strip():
            continue
        toks = ln.split()
        if len(toks) != 5:
            raise FileFormatError(f"{path}:{line_no}: expected 5 columns")
        w = float(toks[0])
        r, d = int(toks[1][1:]), _DIR_INDEX[toks[2]]
        rows.setdefault(w, np.zeros((n_receivers, 2), dtype=complex))
        rows[w][r, d] = complex(float(toks[3]), float(toks[4]))
    omegas = np.array(sorted(rows))
    values = np.stack([rows[w] for w in omegas])
    return omegas, values


# -- solver-validation tables ------------------------------------------------------

def write_validation_table(path, rows):
    """Rows of (distance, numeric, analytic, normalized error, usable flag)."""
    with open(path, "w") as f:
        f.write("# pml-validation: s num_re num_im ana_re ana_im norm_err usable\n")
        for dist, num, ana, err, usable in rows:
            f.write(f"{fmt(dist)} {fmt(num.real)} {fmt(num.imag)} {fmt(ana.real)} "
                    f"{fmt(ana.imag)} {fmt(err)} {int(usable)}\n")


def read_validation_table(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# pml-validation"):
        raise FileFormatError(f"{path}: missing '# pml-validation' header")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        t = ln.split()
        rows.append((float(t[0]), complex(float(t[1]), float(t[2])),
                     complex(float(t[3]), float(t[4])), float(t[5]),
                     bool(int(t[6]))))
    return rows


# -- model grids -----------------------------------------------------------------

def write_model_grid(path, model: matmod.ModelVector, mesh):
    """Header (node grid dims, spacing, origin) plus one row per node."""
    if model.n_nodes != mesh.n_nodes:
        raise FileFormatError(f"model has {model.n_nodes} nodes, mesh has {mesh.n_nodes}")
    with open(path, "w") as f:
        f.write("# model-grid\n")
        f.write(f"nx = {mesh.nx + 1}\n")
        f.write(f"ny = {mesh.ny + 1}\n")
        f.write(f"h = {fmt(mesh.h)}\n")
        f.write("origin = 0.0 0.0\n")
        for n in range(mesh.n_nodes):
            x, y = mesh.nodes[n]
            f.write(f"{fmt(x)} {fmt(y)} {fmt(model.vp[n])} {fmt(model.vs[n])}\n")


def read_model_grid(path, mesh) -> matmod.ModelVector:
    """Read a model grid, checking it matches the mesh node for node."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "# model-grid":
        raise FileFormatError(f"{path}: missing '# model-grid' header")
    nx = int(_parse_header_line(lines[1], "nx", path, 2))
    ny = int(_parse_header_line(lines[2], "ny", path, 3))
    h = float(_parse_header_line(lines[3], "h", path, 4))
    if nx != mesh.nx + 1 or ny != mesh.ny + 1 or abs(h - mesh.h) > 1e-12:
        raise FileFormatError(
            f"{path}: grid {nx}x{ny} (h={h}) does not match mesh "
            f"{mesh.nx + 1}x{mesh.ny + 1} (h={mesh.h})")
    body = [ln for ln in lines[5:] if ln.strip()]
    if len(body) != mesh.n_nodes:
        raise FileFormatError(f"{path}: expected {mesh.n_nodes} node rows, "
                              f"found {len(body)}")
    vp = np.empty(mesh.n_nodes)
    vs = np.empty(mesh.n_nodes)
    for n, ln in enumerate(body):
        x, y, vpn, vsn = (float(t) for t in ln.split())
        if abs(x - mesh.nodes[n, 0]) > 1e-9 or abs(y - mesh.nodes[n, 1]) > 1e-9:
            raise FileFormatError(f"{path}: node {n} coordinates do not match the mesh")
        if vpn <= 0 or vsn <= 0:
            raise FileFormatError(f"{path}: node {n} has non-positive velocity")
        vp[n], vs[n] = vpn, vsn
    return matmod.ModelVector(np.concatenate([vp, vs]))


# -- DFT cache --------------------------------------------------------------------

def records_to_spectra(traces, omegas, layout):
    """Single-frequency transforms of every trace at the scheduled omegas."""
    omegas = sorted(set(float(w) for w in omegas))
    missing = []
    for s in range(layout.n_sources):
        for r, rec in enumerate(layout.receivers):
            for d in rec.directions:
                if (s, r, _DIR_LETTER[d]) not in traces:
                    missing.append(f"s{s} r{r} {_DIR_LETTER[d]}")
    if missing:
        raise FileFormatError("missing traces: " + ", ".join(missing))
    observed = {w: np.zeros((layout.n_sources, layout.n_receivers, 2), dtype=complex)
                for w in omegas}
    for (s, r, d), series in traces.items():
        spec = sigmod.dft_many(series, omegas)
        for i, w in enumerate(omegas):
            observed[w][s, r, _DIR_INDEX[d]] = spec.values[i]
    return observed


def cached_spectra(records_path, omegas, layout, cache_dir=None):
    """DFT the time records once; reuse on identical (records, schedule)."""
    with open(records_path, "rb") as f:
        digest = hashlib.sha256(f.read())
    digest.update(repr(sorted(set(float(w) for w in omegas))).encode())
    tag = digest.hexdigest()[:16]
    cache_dir = cache_dir or os.path.dirname(os.path.abspath(records_path))
    cache = os.path.join(cache_dir, f".{os.path.basename(records_path)}.dft-{tag}.txt")
    if os.path.exists(cache):
        return read_frequency_records(cache)
    observed = records_to_spectra(read_time_records(records_path), omegas, layout)
    write_frequency_records(cache, observed, layout.n_sources, layout.n_receivers)
    return observed
