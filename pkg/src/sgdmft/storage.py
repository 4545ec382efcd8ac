"""CSV layouts for learning curves and kernel checkpoints.

curves.csv (schema v1)::

    t,m,q,train_loss,train_acc,gen_err[,m_se,q_se,train_loss_se,train_acc_se,gen_err_se]

kernels.csv (schema v1): ``#``-prefixed ``key = value`` header lines
(``schema``, ``dt``, ``n_steps`` and the run parameters), then a long table
``name,i,j,value``. Vectors (``lambda_hat``, ``mu`` of length n_steps and
``m`` of length n_steps + 1) use j = 0; ``M_C`` stores i >= j (symmetric),
``M_R`` stores i > j (zero elsewhere). All numbers carry 17 significant digits.
"""

from __future__ import annotations

import csv

import numpy as np

from .dmft import KernelSet
from .simulator import MetricsSeries

CURVES_SCHEMA = "sgdmft-curves v1"
KERNELS_SCHEMA = "sgdmft-kernels v1"
SE_COLUMNS = ("m_se", "q_se", "train_loss_se", "train_acc_se", "gen_err_se")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_curves(path, series: MetricsSeries, with_stderr: bool = False):
    cols = series.columns()
    names = list(cols)
    data = [np.asarray(v, dtype=float) for v in cols.values()]
    if with_stderr:
        for name in SE_COLUMNS:
            names.append(name)
            data.append(np.asarray(series.stderr[name[:-3]], dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([_fmt(x) for x in row])


def read_curves(path) -> MetricsSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    col = {name: body[:, k] for k, name in enumerate(header)}
    stderr = {name[:-3]: col[name] for name in SE_COLUMNS if name in col}
    return MetricsSeries(
        times=col["t"],
        m=col["m"],
        q=col["q"],
        train_loss=col["train_loss"],
        train_acc=col["train_acc"],
        gen_err=col["gen_err"],
        stderr=stderr,
    )


def write_kernels(path, K: KernelSet, meta: dict | None = None):
    n = K.n_steps
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema = {KERNELS_SCHEMA}\n# dt = {_fmt(K.dt)}\n# n_steps = {n}\n")
        for key, val in (meta or {}).items():
            fh.write(f"# {key} = {val}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "i", "j", "value"])
        for name in ("lambda_hat", "mu", "m"):
            for i, v in enumerate(getattr(K, name)):
                writer.writerow([name, i, 0, _fmt(v)])
        for i in range(n):
            for j in range(i + 1):
                writer.writerow(["M_C", i, j, _fmt(K.M_C[i, j])])
        for i in range(n):
            for j in range(i):
                writer.writerow(["M_R", i, j, _fmt(K.M_R[i, j])])


def read_kernels(path):
    """Return (KernelSet, header dict)."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
            else:
                rows.append(line)
    if meta.get("schema") != KERNELS_SCHEMA:
        raise ValueError(f"{path}: not a {KERNELS_SCHEMA} file")
    dt = float(meta["dt"])
    n = int(meta["n_steps"])
    vec = {"lambda_hat": np.zeros(n), "mu": np.zeros(n), "m": np.zeros(n + 1)}
    mat = {"M_C": np.zeros((n, n)), "M_R": np.zeros((n, n))}
    reader = csv.reader(rows)
    next(reader)
    for name, i, j, value in reader:
        i, j, v = int(i), int(j), float(value)
        if name in vec:
            vec[name][i] = v
        elif name == "M_C":
            mat["M_C"][i, j] = mat["M_C"][j, i] = v
        elif name == "M_R":
            mat["M_R"][i, j] = v
        else:
            raise ValueError(f"{path}: unknown kernel {name!r}")
    return KernelSet(dt=dt, **mat, **vec), meta
