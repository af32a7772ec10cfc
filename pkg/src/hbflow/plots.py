"""Static figures written next to the numerical outputs (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

from .fem import MixedField  # noqa: E402


def plot_convergence(path, outer_diffs, inner_residuals, tol_outer=None, tol_inner=None) -> None:
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.semilogy(np.arange(1, len(outer_diffs) + 1), np.maximum(outer_diffs, 1e-300), "o-")
    if tol_outer is not None:
        a.axhline(tol_outer, color="gray", ls="--", lw=0.8)
    a.set_xlabel("outer iteration")
    a.set_ylabel("L6 difference")
    b.semilogy(np.maximum(inner_residuals, 1e-300), ".-")
    if tol_inner is not None:
        b.axhline(tol_inner, color="gray", ls="--", lw=0.8)
    b.set_xlabel("inner iteration (last outer step)")
    b.set_ylabel("relative residual")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_speed(path, field: MixedField) -> None:
    """Speed ``|u|`` on the vertex triangulation with the interface drawn."""
    mesh = field.space.mesh
    space = field.space
    nodal = field.nodal_velocity()
    # vertex values through the P2 vertex dofs of each triangle
    vals = np.zeros(mesh.n_nodes)
    for t, tri in enumerate(mesh.triangles):
        vals[tri] = np.linalg.norm(nodal[space.v_cells[t, :3]], axis=1)
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    pc = ax.tripcolor(tri, vals, shading="gouraud", cmap="viridis")
    fig.colorbar(pc, ax=ax, label="|u|")
    for a, b in mesh.interface_edges:
        ax.plot(mesh.nodes[[a, b], 0], mesh.nodes[[a, b], 1], "w-", lw=1.2)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_profile(path, y_fem, u_fem, y_ref=None, u_ref=None, plugs=()) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if y_ref is not None:
        ax.plot(u_ref, y_ref, "k-", lw=1.2, label="1-D oracle")
    ax.plot(u_fem, y_fem, "o", ms=3, label="finite elements")
    for lo, hi in plugs:
        ax.axhspan(lo, hi, color="orange", alpha=0.25, lw=0)
    ax.set_xlabel("u_x")
    ax.set_ylabel("y")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_refinement(path, h, errors, label="L2 error") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(h, np.maximum(errors, 1e-300), "o-", label=label)
    ax.set_xlabel("h")
    ax.set_ylabel("relative L2 error")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
