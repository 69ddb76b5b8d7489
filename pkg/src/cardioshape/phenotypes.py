"""Shape-derived phenotypes from fitted mesh sequences.

Volumes come from the signed-tetrahedron sum over closed surfaces;
end-diastole and end-systole are the frames of maximal and minimal LV cavity
volume.  LV mass uses the epi-minus-endo shell at ED with the conventional
myocardial density of 1.05 g/mL.
"""

from dataclasses import dataclass

import numpy as np

MYOCARDIAL_DENSITY_G_PER_ML = 1.05

VENTRICLES = {"LV": "LV-endo", "RV": "RV"}
ATRIA = {"LA": "LA", "RA": "RA"}


@dataclass
class PhenotypeTable:
    LVM: float
    LVEDV: float
    LVESV: float
    RVEDV: float
    RVESV: float
    LAMAXV: float
    LAMINV: float
    RAMAXV: float
    RAMINV: float
    LVSV: float
    RVSV: float
    LASV: float
    RASV: float
    LVEF: float
    RVEF: float
    LAEF: float
    RAEF: float
    LVWT_mean: float
    LVWT_max: float

    COLUMNS = (
        "LVM", "LVEDV", "LVESV", "RVEDV", "RVESV",
        "LAMAXV", "LAMINV", "RAMAXV", "RAMINV",
        "LVSV", "RVSV", "LASV", "RASV",
        "LVEF", "RVEF", "LAEF", "RAEF",
        "LVWT_mean", "LVWT_max",
    )

    UNITS = (
        "g", "mL", "mL", "mL", "mL",
        "mL", "mL", "mL", "mL",
        "mL", "mL", "mL", "mL",
        "%", "%", "%", "%",
        "mm", "mm",
    )

    def as_row(self):
        return [getattr(self, c) for c in self.COLUMNS]


def mesh_volume(mesh, vertices=None):
    """Enclosed volume of a closed, consistently oriented mesh in mL."""
    v = mesh.vertices if vertices is None else vertices
    n_boundary = mesh.boundary_edge_count()
    if n_boundary:
        raise ValueError(
            f"mesh {mesh.structure_id} is open ({n_boundary} boundary edges)"
        )
    v0 = v[mesh.faces[:, 0]]
    v1 = v[mesh.faces[:, 1]]
    v2 = v[mesh.faces[:, 2]]
    volume_mm3 = abs(np.einsum("ij,ij->i", np.cross(v0, v1), v2).sum() / 6.0)
    return volume_mm3 * 1e-3


def volume_curve(seq, structure):
    """Per-frame enclosed volume (mL) of one structure."""
    mesh0 = seq.frames[0][structure]
    return np.array(
        [mesh_volume(mesh0, vertices=fr[structure].vertices) for fr in seq.frames]
    )


def wall_thickness(endo, epi):
    """Per-vertex distance between corresponding endo/epi vertices (mm)."""
    if endo.n_vertices != epi.n_vertices:
        raise ValueError("endo and epi must have equal vertex counts")
    d = np.linalg.norm(epi.vertices - endo.vertices, axis=1)
    return d, {"mean": float(d.mean()), "max": float(d.max())}


def displacement_curve(seq, structure):
    """Per-frame mean vertex displacement magnitude relative to frame 1 (mm)."""
    ref = seq.frames[0][structure].vertices
    return np.array(
        [
            float(np.linalg.norm(fr[structure].vertices - ref, axis=1).mean())
            for fr in seq.frames
        ]
    )


def phenotype_table(seq):
    """All scalar phenotypes of one subject's sequence."""
    curves = {s: volume_curve(seq, s) for s in ("LV-endo", "RV", "LA", "RA")}
    ed = int(np.argmax(curves["LV-endo"]))
    values = {}
    for name, structure in VENTRICLES.items():
        c = curves[structure]
        edv = float(c.max())
        esv = float(c.min())
        sv = edv - esv
        values[f"{name}EDV"] = edv
        values[f"{name}ESV"] = esv
        values[f"{name}SV"] = sv
        values[f"{name}EF"] = 100.0 * sv / edv
    for name, structure in ATRIA.items():
        c = curves[structure]
        maxv = float(c.max())
        minv = float(c.min())
        sv = maxv - minv
        values[f"{name}MAXV"] = maxv
        values[f"{name}MINV"] = minv
        values[f"{name}SV"] = sv
        values[f"{name}EF"] = 100.0 * sv / maxv
    ed_frame = seq.frames[ed]
    epi_vol = mesh_volume(ed_frame["LV-epi"])
    endo_vol = mesh_volume(ed_frame["LV-endo"])
    values["LVM"] = (epi_vol - endo_vol) * MYOCARDIAL_DENSITY_G_PER_ML
    _, wt = wall_thickness(ed_frame["LV-endo"], ed_frame["LV-epi"])
    values["LVWT_mean"] = wt["mean"]
    values["LVWT_max"] = wt["max"]
    return PhenotypeTable(**values)
