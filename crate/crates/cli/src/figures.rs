use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Result};

use crate::eval::{ERRORS_FILE, SLICES_FILE};

pub const SLICES_SCRIPT: &str = "plot_slices.py";
pub const ERRORS_SCRIPT: &str = "plot_errors.py";

const SLICES_PY: &str = r#"#!/usr/bin/env python3
"""Predicted vs exact u and phi along x at each exported time slice."""
import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
curves = defaultdict(lambda: defaultdict(list))
with open(os.path.join(here, "slices.csv"), newline="") as f:
    for row in csv.DictReader(f):
        c = curves[float(row["t"])]
        for key in ("x", "u_pred", "u_exact", "phi_pred", "phi_exact"):
            c[key].append(float(row[key]))

fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
colors = plt.cm.viridis([i / max(len(curves) - 1, 1) for i in range(len(curves))])
for color, t in zip(colors, sorted(curves)):
    c = curves[t]
    for ax, field in zip(axes, ("u", "phi")):
        ax.plot(c["x"], c[field + "_pred"], color=color, label=f"t = {t:g}")
        ax.plot(c["x"], c[field + "_exact"], color="gray", linestyle="--", linewidth=0.9)
axes[0].set_title("displacement u(x, t)")
axes[1].set_title("electric potential phi(x, t)")
for ax in axes:
    ax.set_xlabel("x")
    ax.grid(alpha=0.3)
axes[0].legend(fontsize=8)
fig.tight_layout()
out = os.path.join(here, "slices.png")
fig.savefig(out, dpi=150)
print(out)
"#;

const ERRORS_PY: &str = r#"#!/usr/bin/env python3
"""Pointwise absolute error fields of u and phi on a log colour scale."""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LogNorm

here = os.path.dirname(os.path.abspath(__file__))
rows = []
with open(os.path.join(here, "errors.csv"), newline="") as f:
    for row in csv.DictReader(f):
        rows.append([float(row[k]) for k in ("x", "t", "abs_err_u", "abs_err_phi")])
data = np.array(rows)
xs = np.unique(data[:, 0])
ts = np.unique(data[:, 1])
# rows are written x-major
shape = (len(xs), len(ts))

fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
for ax, col, name in zip(axes, (2, 3), ("|u - u_exact|", "|phi - phi_exact|")):
    err = data[:, col].reshape(shape).T
    floor = max(err[err > 0].min() if np.any(err > 0) else 1e-16, 1e-16)
    mesh = ax.pcolormesh(xs, ts, np.maximum(err, floor), norm=LogNorm(vmin=floor, vmax=max(err.max(), floor * 10)), shading="auto")
    fig.colorbar(mesh, ax=ax)
    ax.set_title(name)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
fig.tight_layout()
out = os.path.join(here, "errors.png")
fig.savefig(out, dpi=150)
print(out)
"#;

pub fn run(run_dir: &Path) -> Result<ExitCode> {
    for name in [ERRORS_FILE, SLICES_FILE] {
        if !run_dir.join(name).is_file() {
            bail!("{} not found in {}; run `ppinn eval` first", name, run_dir.display());
        }
    }
    for (name, body) in [(SLICES_SCRIPT, SLICES_PY), (ERRORS_SCRIPT, ERRORS_PY)] {
        let path = run_dir.join(name);
        fs::write(&path, body)?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
