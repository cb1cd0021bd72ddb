"""Low-rank state, tangent/manifold projections and the error metrics."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .matcore import Factored, dense, fro_norm, pseudo_solve, svd_trunc, tmul

CSV_FIELDS = ("t", "rank", "eps_pr", "eps_l", "eps_N", "eps_D", "eps_tot", "wall_s")


@dataclass(frozen=True)
class LowRankState:
    """Rank-r matrix ``u @ z.T`` with orthonormal ``u`` (m-by-r) and ``z`` n-by-r."""

    u: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        if self.u.ndim != 2 or self.z.ndim != 2 or self.u.shape[1] != self.z.shape[1]:
            raise ValueError(f"incompatible factors {self.u.shape} and {self.z.shape}")

    @property
    def rank(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return (self.u.shape[0], self.z.shape[0])

    def reconstruct(self):
        return self.u @ self.z.T

    def as_factored(self):
        return Factored(self.u, self.z)

    def norm(self):
        # u is orthonormal, so ||u z^T|| = ||z||
        return float(np.linalg.norm(self.z))

    def orthonormality_defect(self):
        r = self.rank
        return float(np.linalg.norm(self.u.T @ self.u - np.eye(r)))


@dataclass(frozen=True)
class AffineTarget:
    """The point ``chi = base + dt * direction`` a retraction aims at."""

    base: LowRankState
    direction: object
    dt: float = 1.0

    def __post_init__(self):
        if tuple(self.direction.shape) != self.base.shape:
            raise ValueError(
                f"direction shape {self.direction.shape} != state shape {self.base.shape}"
            )

    @property
    def displacement(self):
        return self.dt * self.direction

    def displacement_from(self, x):
        """``chi - x`` as a factored pair when the direction is factored."""
        if x is self.base:
            return self.displacement
        if isinstance(self.direction, Factored):
            return Factored(
                np.hstack([self.base.u, x.u, self.dt * self.direction.a]),
                np.hstack([self.base.z, -x.z, self.direction.b]),
            )
        return self.base.reconstruct() - x.reconstruct() + self.dt * self.direction

    def chi(self):
        return self.base.reconstruct() + self.dt * dense(self.direction)

    def chi_factored(self):
        if isinstance(self.direction, Factored):
            return Factored(
                np.hstack([self.base.u, self.dt * self.direction.a]),
                np.hstack([self.base.z, self.direction.b]),
            )
        return self.chi()

    def norm(self):
        return fro_norm(self.chi_factored())


def perp(u, m):
    """Apply ``I - u u^T`` to ``m``."""
    return m - u @ (u.T @ m)


def tangent_project(x, d, rel_cut=1e-12):
    """Project ``d`` onto the tangent space of the rank-r manifold at ``x``.

    Returns ``U dZ^T + dU Z^T`` with ``dZ = d^T U`` and
    ``dU = (I - UU^T) d Z (Z^T Z)^+``. Dense output.
    """
    u, z = x.u, x.z
    dz = tmul(d, u)
    du = perp(u, d @ z)
    du = pseudo_solve(z.T @ z, du.T, rel_cut).T
    return u @ dz.T + du @ z.T


def manifold_project(a, r):
    """Exact projection onto the rank-r manifold (truncated SVD) as a state."""
    t = svd_trunc(a, r)
    return LowRankState(t.u, t.v * t.s)


def error_metrics(x_new, target, full=None, chi=None):
    """Local, projection-retraction and normal-closure errors of one retraction.

    ``chi`` may be passed when the caller already materialized the target.
    Keys without data (``eps_D`` always, ``eps_tot`` without ``full``) are None.
    """
    if chi is None:
        chi = target.chi()
    r = x_new.rank
    xn = x_new.reconstruct()
    best = manifold_project(chi, min(r, *chi.shape)).reconstruct()
    out = {
        "eps_l": float(np.linalg.norm(chi - xn)),
        "eps_pr": float(np.linalg.norm(xn - best)),
        "eps_N": float(np.linalg.norm(chi - best)),
        "eps_D": None,
        "eps_tot": None,
    }
    if full is not None:
        out["eps_tot"] = float(np.linalg.norm(dense(full) - xn))
    return out


@dataclass
class ErrorReport:
    """Per-step error records of a run, serializable to CSV."""

    records: list = field(default_factory=list)
    status: str = "ok"
    diagnostic: str = ""
    meta: dict = field(default_factory=dict)

    def add(self, t, rank, wall_s=None, **metrics):
        rec = {"t": float(t), "rank": int(rank)}
        for key in CSV_FIELDS[2:-1]:
            val = metrics.get(key)
            if val is not None:
                val = float(val)
                if not math.isfinite(val) or val < 0:
                    raise FloatingPointError(f"{key}={val} at t={t}")
            rec[key] = val
        rec["wall_s"] = wall_s
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return np.array(
            [np.nan if rec[key] is None else rec[key] for rec in self.records], dtype=float
        )

    @property
    def final(self):
        return self.records[-1]

    @property
    def converged(self):
        return self.status == "ok"

    def to_csv(self, fh=None, header_comment=None, timing=False):
        """Write the report; returns the text when ``fh`` is None.

        Wall-clock times are emitted only with ``timing`` so that repeated
        runs produce byte-identical files.
        """
        buf = io.StringIO() if fh is None else fh
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        if self.status != "ok":
            buf.write(f"# status: {self.status}: {self.diagnostic}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in self.records:
            row = []
            for key in CSV_FIELDS:
                val = rec[key]
                if key == "wall_s" and not timing:
                    val = None
                if val is None:
                    row.append("")
                elif key == "rank":
                    row.append(str(val))
                else:
                    row.append(repr(float(val)))
            writer.writerow(row)
        if fh is None:
            return buf.getvalue()
        return None

    @classmethod
    def from_csv(cls, text):
        rep = cls()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(lines)
        for row in reader:
            rec = {}
            for key in CSV_FIELDS:
                val = row[key]
                if val == "":
                    rec[key] = None
                elif key == "rank":
                    rec[key] = int(val)
                else:
                    rec[key] = float(val)
            rep.records.append(rec)
        return rep
