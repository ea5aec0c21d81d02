"""Reference (un-nudged) runs that store their trajectory for later nudging."""
from __future__ import annotations

from ..assembly import l2_projection
from ..fem import FeSpace, composite_rule, interpolate_nodal
from .base import AnalyticTruth, RunConfig
from .nse import nse_run
from .problems import blobs, kh_initial
from .scalar import scalar_cda_run
from .snapshot import SnapshotWriter, read_snapshot


def blob_initial(space: FeSpace, levels: int = 3):
    """L2 projection of the two-disc concentration, integrated on subdivided cells."""
    return l2_projection(space, blobs, rule=composite_rule(5, levels))


def kh_initial_velocity(vspace: FeSpace):
    return interpolate_nodal(lambda x, y, t: kh_initial(x, y), vspace)


def dns_run(cfg: RunConfig, path, space: FeSpace, pspace: FeSpace | None = None, velocity=None,
            w0=None, truth=None):
    """Run with nudging off and write every state to a snapshot file.

    ``cfg.problem`` selects the physics: ``heat`` (manufactured ``truth``
    gives forcing, boundary data and errors), ``transport`` (advecting
    ``velocity``, zero inflow, default blob initial state) or ``nse``
    (``pspace`` required, default Kelvin-Helmholtz initial state).

    Returns
    -------
    (Trajectory, ErrorSeries)
        The series holds errors against ``truth`` for heat and the
        solution's own norms otherwise.
    """
    with SnapshotWriter(path, space, cfg.dt) as sink:
        if cfg.problem == "heat":
            markers = [mk for mk in ("bottom", "right", "top", "left") if mk in space.boundary_dofs]
            series = scalar_cda_run(space, None, cfg.dt, cfg.n_steps, cfg.kappa, truth=AnalyticTruth(truth),
                                    forcing=truth.forcing, markers=markers, boundary=truth.value,
                                    w0=w0, sink=sink)
        elif cfg.problem == "transport":
            w0 = blob_initial(space) if w0 is None else w0
            series = scalar_cda_run(space, None, cfg.dt, cfg.n_steps, cfg.kappa, velocity=velocity,
                                    markers=("inflow",), w0=w0, sink=sink)
        elif cfg.problem == "nse":
            if pspace is None:
                raise ValueError("nse reference runs need a pressure space")
            w0 = kh_initial_velocity(space) if w0 is None else w0
            series = nse_run(space, pspace, None, cfg.dt, cfg.n_steps, cfg.nu, w0=w0, sink=sink)
        else:
            raise ValueError(f"no reference run for problem kind {cfg.problem!r}")
    return read_snapshot(path, space), series
