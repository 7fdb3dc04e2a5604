"""Scenario files (TOML), run outputs and the output manifest.

A scenario file has the tables ``[domain]``, ``[physics]``, ``[wall]``,
``[friction]`` with exactly one of ``[friction.tresca]`` or
``[friction.coulomb]``, ``[discretization]`` and ``[verify]``.  Functions are
named built-ins, e.g. ``zeta = {kind = "sine", offset = 1.0, amplitude = 0.5, omega = 3.0}``;
a list of built-ins means their product.  Unknown keys are rejected.
"""
import csv
import hashlib
import os

import numpy as np
import tomli
import tomli_w

from .errors import FrictionStokesError, ScenarioError, UsageError
from .fem import WallData
from .mesh import DomainSpec, dump_mesh
from .scenario import CoulombSpec, Scenario, VerifySettings
from .verification import c1_prime, wall_fields

SECTIONS = {
    "domain": {"dimension", "omega", "height", "periodic"},
    "physics": {"mu", "T", "f", "zeta", "v0", "compatibility", "regularity"},
    "wall": {"kind", "s"},
    "friction": {"eps_schedule", "tresca", "coulomb"},
    "discretization": {"resolution", "dt", "newton_tol", "newton_max_iter", "rho"},
    "verify": {"eps_list", "dt_list", "reference_dts", "steady_tol"},
}
TRESCA_KEYS = {"ell"}
COULOMB_KEYS = {"F0", "Fsigma", "S", "p_exponent", "C_S", "C_prime", "tol", "max_iter", "max_halvings", "window"}


def _reject_unknown(table, allowed, prefix):
    for key in table:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else key
            raise ScenarioError(path, "unknown key")


def scenario_from_dict(data):
    """Validated Scenario from the nested tables of a scenario file."""
    _reject_unknown(data, SECTIONS, "")
    for name in SECTIONS:
        if name in data:
            _reject_unknown(data[name], SECTIONS[name], name)
    dom = data.get("domain", {})
    phys = data.get("physics", {})
    wall = data.get("wall", {})
    fric = data.get("friction", {})
    disc = data.get("discretization", {})
    ver = data.get("verify", {})
    if ("tresca" in fric) == ("coulomb" in fric):
        raise ScenarioError("friction", "exactly one of friction.tresca and friction.coulomb is required")
    try:
        domain = DomainSpec(
            dimension=int(dom.get("dimension", 2)),
            omega_extent=tuple(tuple(p) for p in dom.get("omega", [[0.0, 1.0]])),
            height=dom.get("height", 1.0),
            periodic=tuple(dom.get("periodic", ())),
        )
    except FrictionStokesError as exc:
        raise ScenarioError("domain", str(exc)) from exc
    try:
        wall_data = WallData(kind=wall.get("kind", "couette"), s=float(wall.get("s", 1.0)))
    except UsageError as exc:
        raise ScenarioError("wall.kind", str(exc)) from exc
    coulomb = None
    if "coulomb" in fric:
        c = fric["coulomb"]
        _reject_unknown(c, COULOMB_KEYS, "friction.coulomb")
        coulomb = CoulombSpec(**c)
        threshold = coulomb.F0
    else:
        _reject_unknown(fric["tresca"], TRESCA_KEYS, "friction.tresca")
        threshold = fric["tresca"].get("ell", 1.0)
    res = disc.get("resolution", 8)
    kwargs = dict(
        domain=domain,
        resolution=tuple(res) if isinstance(res, list) else int(res),
        mu=float(phys.get("mu", 1.0)),
        T=float(phys.get("T", 1.0)),
        dt=float(disc.get("dt", 0.1)),
        f=phys.get("f"),
        zeta=phys.get("zeta", 1.0),
        wall=wall_data,
        v0=phys.get("v0", "lifting"),
        threshold=threshold,
        eps_schedule=fric.get("eps_schedule"),
        compatibility=bool(phys.get("compatibility", True)),
        regularity=bool(phys.get("regularity", False)),
        rho=disc.get("rho"),
        newton_tol=float(disc.get("newton_tol", 1e-10)),
        newton_max_iter=int(disc.get("newton_max_iter", 50)),
        coulomb=coulomb,
        verify=VerifySettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in ver.items()}),
    )
    if kwargs["v0"] != "lifting":
        raise ScenarioError("physics.v0", "only 'lifting' can be given in a scenario file")
    try:
        return Scenario(**kwargs)
    except ScenarioError:
        raise
    except FrictionStokesError as exc:
        raise ScenarioError("scenario", str(exc)) from exc


def parse_scenario(path):
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ScenarioError(str(path), f"not valid TOML ({exc})") from exc
    return scenario_from_dict(data)


def scenario_to_toml(scenario):
    return tomli_w.dumps(scenario.to_dict())


def write_scenario(scenario, path):
    with open(path, "w") as fh:
        fh.write(scenario_to_toml(scenario))


# ---------------------------------------------------------------- outputs


def fmt(x):
    return f"{float(x) + 0.0:.17g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_energy(path, trajectory, disc):
    C1, _ = c1_prime(disc, trajectory)
    rows = []
    e0 = 0.5 * disc.ops.norm_mass(trajectory.states[0].v_tilde) ** 2
    rows.append([0, fmt(trajectory.states[0].t), fmt(e0), fmt(0.0), fmt(C1)])
    for n, (st, e) in enumerate(zip(trajectory.states[1:], trajectory.energy), start=1):
        rows.append([n, fmt(st.t), fmt(e.kinetic), fmt(e.dissipation), fmt(C1 * np.exp(2.0 * st.t))])
    _write_rows(path, ["step", "t", "kinetic", "dissipation", "bound"], rows)


def write_boundary(path, trajectory, disc):
    k = disc.spaces.dim - 1
    xp = disc.quadrature.xprime
    eps = disc.scenario.eps
    head = ["step", "t", "quad_point_id"] + [f"x{i}" for i in range(k)]
    head += [f"slip{i}" for i in range(k)] + [f"traction{i}" for i in range(k)] + ["threshold"]
    rows = []
    for n, st in enumerate(trajectory.states):
        ell = trajectory.thresholds.at_step(n)
        slip, sig = wall_fields(disc, st, ell, eps)
        for q in range(xp.shape[0]):
            rows.append(
                [n, fmt(st.t), q]
                + [fmt(c) for c in xp[q]]
                + [fmt(c) for c in slip[q]]
                + [fmt(c) for c in sig[q]]
                + [fmt(ell[q])]
            )
    _write_rows(path, head, rows)


def write_field(path, state, disc, step):
    """Full velocity at the P2 nodes and pressure at the vertices, ASCII."""
    sp = disc.spaces
    zeta = disc.scenario.zeta
    v = sp.as_nodal(state.velocity(disc.lifting, zeta))
    lines = [f"FIELD v1 step={step} t={fmt(state.t)} dim={sp.dim}", f"velocity {sp.n_nodes}"]
    lines += [" ".join(fmt(c) for c in row) for row in v]
    lines.append(f"pressure {sp.n_pressure}")
    lines += [fmt(c) for c in state.p]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, names):
    """sha256 of every listed file, one ``<hash>  <name>`` line each, sorted by name."""
    entries = {name: sha256_file(os.path.join(out_dir, name)) for name in sorted(names)}
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        for name, digest in entries.items():
            fh.write(f"{digest}  {name}\n")
    return entries


def write_outputs(trajectory, disc, out_dir, report=None, trace=None, field_steps=None):
    """Write energy, boundary, field, threshold and report files plus the manifest; returns the manifest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        names = []

        def path(name):
            names.append(name)
            return os.path.join(out_dir, name)

        with open(path("scenario.toml"), "w") as fh:
            try:
                fh.write(scenario_to_toml(disc.scenario))
            except (UsageError, TypeError):
                fh.write(f"# scenario digest {trajectory.scenario_hash}\n")
        write_energy(path("energy.csv"), trajectory, disc)
        write_boundary(path("boundary.csv"), trajectory, disc)
        dump_mesh(disc.mesh, path("mesh.txt"))
        last = len(trajectory.states) - 1
        steps = sorted({0, last}) if field_steps is None else sorted(set(field_steps))
        for n in steps:
            write_field(path(f"field_{n:05d}.txt"), trajectory.states[n], disc, n)
        trajectory.thresholds.to_csv(path("threshold.csv"))
        if trajectory.boundary_history is not None:
            trajectory.boundary_history.to_csv(path("history.csv"))
        if trace is not None:
            trace.to_csv(path("iterations.csv"))
        if report is not None:
            with open(path("report.txt"), "w") as fh:
                fh.write(report.to_text())
        return write_manifest(out_dir, names)
    except OSError as exc:
        raise UsageError(f"cannot write outputs under {out_dir}: {exc}") from exc
