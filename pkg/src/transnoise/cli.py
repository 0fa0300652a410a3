"""Command-line runner writing experiment tables as CSV.

Every command accepts ``--config FILE`` with flat ``key=value`` lines (blank
lines and ``#`` comments ignored, ``# key=value`` metadata lines accepted),
so the header of any output file can be fed back to reproduce it. Flags on
the command line override the file. Exit status is 0 on success, 2 for
configuration errors and 3 when a computation did not converge.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import __version__
from .correlations import (
    discord_bell_diagonal,
    mutual_information,
    negativity,
    optimize_gamma_rtn,
    reference_evolution,
    tetrahedron_coordinates,
    fidelity_complement_curve,
    time_average,
)
from .montecarlo import COMMON, INDEPENDENT, propagate
from .noise import (
    DEFAULT_REALIZATIONS,
    DEFAULT_SEED,
    OU,
    RTN,
    EnsembleConfig,
    TimeGrid,
    default_grid,
    sample_ou,
    sample_rtn,
    write_trajectory_csv,
)
from .nonmarkov import BLPSearchConfig, blp_measure, measure_grid, rhp_measure
from .rtn import ie_from_single, real_region_boundaries, transfer_single_series, transfer_two_ce_series
from .states import (
    EPS_TOL,
    GeneralizedBlochVector,
    ModelParams,
    bell_diagonal_state,
    bloch_from_density,
    correlation_from_density,
    density_from_bloch,
    density_from_generalized_bloch,
    generalized_bloch_from_density,
    werner_state,
)

EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
# keys that name files rather than parameters; kept out of the metadata header
_LOCATION_KEYS = {"config", "output", "dump_noise"}
_META_KEYS = {"command", "version"}


class ConfigError(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------

def parse_sweep(text: str) -> np.ndarray:
    """Parse ``a..b[:n|:logn]`` (11 points by default), a comma list or a single number."""
    text = text.strip()
    try:
        if ".." in text:
            span, _, count = text.partition(":")
            lo, hi = (float(v) for v in span.split("..", 1))
            log = count.startswith("log")
            n = int(count[3:] if log else count) if count else 11
            if n < 1:
                raise ConfigError(f"sweep {text!r} needs at least one point")
            if log:
                if not (lo > 0 and hi > 0):
                    raise ConfigError(f"log sweep {text!r} needs positive bounds")
                return np.geomspace(lo, hi, n)
            return np.linspace(lo, hi, n)
        return np.array([float(v) for v in text.split(",")])
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"cannot parse sweep {text!r}; expected a..b[:n|:logn] or a list") from None


def _floats(text: str, n: int, what: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"{what} {text!r} is not a list of numbers") from None
    if len(vals) != n:
        raise ValueError(f"{what} {text!r} needs {n} components")
    return vals


def initial_state_parser(spec: str, qubits: int | None = None) -> np.ndarray:
    """Density matrix described by a short text specification.

    Accepted forms: ``bell-psi-plus`` ((|00> + |11>)/sqrt2), ``bell-phi-minus``
    ((|01> - |10>)/sqrt2, the singlet), ``mixed``, ``werner:p``,
    ``bloch:x,y,z``, ``tetra:c1,c2,c3`` and a bare triple, read as a Bloch
    vector unless ``qubits == 2``.
    """
    s = spec.strip().lower()
    if s == "bell-psi-plus":
        v = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
        return np.outer(v, v.conj())
    if s == "bell-phi-minus":
        return werner_state(1.0)
    if s == "mixed":
        d = 2 ** (qubits or 2)
        return np.eye(d, dtype=complex) / d
    if s.startswith("werner:"):
        try:
            p = float(s.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"Werner weight in {spec!r} is not a number") from None
        if not 0 <= p <= 1:
            raise ValueError(f"Werner weight p={p} violates 0 <= p <= 1")
        return werner_state(p)
    kind = "tetra" if qubits == 2 else "bloch"
    if ":" in s:
        kind, s = s.split(":", 1)
    if kind == "bloch":
        n = np.array(_floats(s, 3, "Bloch vector"))
        r = np.linalg.norm(n)
        if r > 1 + EPS_TOL:
            raise ValueError(f"Bloch vector length |n| = {r:.6g} violates |n| <= 1")
        return density_from_bloch(n)
    if kind == "tetra":
        c = np.array(_floats(s, 3, "tetrahedron coordinates"))
        rho = bell_diagonal_state(c)
        lmin = np.linalg.eigvalsh(rho).min()
        if lmin < -EPS_TOL:
            raise ValueError(
                f"coordinates {tuple(c)} lie outside the Bell tetrahedron (state eigenvalue {lmin:.6g} < 0)"
            )
        return rho
    raise ValueError(f"unknown state specification {spec!r}")


def _state(spec: str, qubits: int | None = None) -> np.ndarray:
    try:
        return initial_state_parser(spec, qubits)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _params(omega, gamma) -> ModelParams:
    try:
        return ModelParams(float(omega), float(gamma))
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _grid(p: ModelParams, args) -> TimeGrid:
    if not args.t_max > 0:
        raise ConfigError("t-max must be positive")
    if args.dt is None:
        return default_grid(p, args.t_max)
    if not args.dt > 0:
        raise ConfigError("dt must be positive")
    return TimeGrid.covering(args.t_max, args.dt)


def _ensemble(args) -> EnsembleConfig:
    try:
        return EnsembleConfig(args.realizations, args.seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _seed(text: str) -> int:
    return int(text, 0)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _emit(fh, columns, rows, metadata: dict) -> None:
    for key, value in metadata.items():
        fh.write(f"# {key}={value}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def write_table(path, columns, rows, metadata: dict) -> None:
    """Write ``# key=value`` metadata lines, a header and the rows; ``-`` means stdout."""
    if path == "-":
        _emit(sys.stdout, columns, rows, metadata)
        return
    try:
        fh = open(path, "w", newline="")
    except OSError as err:
        raise ConfigError(f"cannot write {path}: {err.strerror}") from None
    with fh:
        _emit(fh, columns, rows, metadata)


def _metadata(args) -> dict:
    meta = {"command": args.command, "version": __version__}
    for key in sorted(vars(args)):
        if key in _LOCATION_KEYS or key in meta or key == "func":
            continue
        value = getattr(args, key)
        if value is None:
            continue
        meta[key] = repr(value) if isinstance(value, float) else value
    return meta


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _two_qubit_analytic(p, topology, rho0, grid):
    if topology == COMMON:
        T = transfer_two_ce_series(p, grid.dt, grid.n_steps)
    else:
        T = ie_from_single(transfer_single_series(p, grid.dt, grid.n_steps))
    return T @ generalized_bloch_from_density(rho0).to_array()


def _bloch_rows(states):
    """15-component Pauli coordinates of stacked two-qubit states."""
    return np.array([generalized_bloch_from_density(r).to_array() for r in states])


def cmd_simulate(args):
    p = _params(args.omega, args.gamma)
    rho0 = _state(args.state)
    grid = _grid(p, args)
    qubits = 1 if rho0.shape == (2, 2) else 2
    if args.solver == "analytic":
        if args.noise != RTN:
            raise ConfigError("the analytic solver covers RTN only; use --solver mc")
        if qubits == 1:
            comps = transfer_single_series(p, grid.dt, grid.n_steps) @ bloch_from_density(rho0)
        else:
            comps = _two_qubit_analytic(p, args.env, rho0, grid)
        err = np.zeros(len(grid.times))
    else:
        res = propagate(p, args.noise, rho0, grid, _ensemble(args), qubits=qubits, topology=args.env)
        comps = bloch_from_density(res.states) if qubits == 1 else _bloch_rows(res.states)
        # each Pauli coordinate sums 2 (one qubit) or 4 (two qubits) elements
        err = 2 * qubits * res.stderr.reshape(len(grid.times), -1).max(axis=1)
    if qubits == 1:
        cols = ["t", "nx", "ny", "nz", "stderr"]
    else:
        cols = ["t"] + [f"a{i}" for i in (1, 2, 3)] + [f"b{i}" for i in (1, 2, 3)]
        cols += [f"c{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)] + ["stderr"]
    rows = np.column_stack([grid.times, comps, err])
    if args.dump_noise:
        traj = (sample_rtn if args.noise == RTN else sample_ou)(p, grid, args.seed)
        write_trajectory_csv(traj, args.dump_noise)
    return cols, rows


def cmd_correlations(args):
    p = _params(args.omega, args.gamma)
    rho0 = _state(args.state, qubits=2)
    if rho0.shape != (4, 4):
        raise ConfigError("correlations need a two-qubit state")
    grid = _grid(p, args)
    solver = args.solver or ("analytic" if args.noise == RTN else "mc")
    if solver == "analytic":
        if args.noise != RTN:
            raise ConfigError("the analytic solver covers RTN only; use --solver mc")
        vecs = _two_qubit_analytic(p, args.env, rho0, grid)
        states = np.array([density_from_generalized_bloch(GeneralizedBlochVector.from_array(v)) for v in vecs])
        tol = 1e-9
    else:
        res = propagate(p, args.noise, rho0, grid, _ensemble(args), qubits=2, topology=args.env)
        states = res.states
        tol = max(1e-9, 12 * res.stderr_max)
    coords = tetrahedron_coordinates(correlation_from_density(states))
    neg = negativity(states)
    disc = np.array([discord_bell_diagonal(c, tol=tol) for c in coords])
    mi = np.array([mutual_information(r) for r in states])
    cols = ["t", "negativity", "discord", "mutual_information", "c1", "c2", "c3"]
    return cols, np.column_stack([grid.times, neg, disc, mi, coords])


def cmd_nonmark(args):
    gammas = parse_sweep(args.gamma_list)
    rows, failed = [], []
    for g in gammas:
        p = _params(args.omega, g)
        row = [g]
        ok = True
        if args.measure in ("blp", "both"):
            b = blp_measure(p, BLPSearchConfig(max_steps=args.max_steps))
            row += [b.value, *b.optimal_pair[0]]
            ok &= b.converged
        if args.measure in ("rhp", "both"):
            grid, grid_ok = measure_grid(p, max_steps=args.max_steps)
            r = rhp_measure(p, grid)
            row += [r.value, r.abs_integral]
            ok &= grid_ok
        rows.append(row + [ok])
        if not ok:
            failed.append(float(g))
    cols = ["gamma"]
    if args.measure in ("blp", "both"):
        cols += ["blp", "blp_nx", "blp_ny", "blp_nz"]
    if args.measure in ("rhp", "both"):
        cols += ["rhp", "rhp_abs_variation"]
    cols.append("converged")
    return cols, rows, (f"grid truncated for gamma = {failed}" if failed else None)


def cmd_compare(args):
    p_ou = _params(args.omega, args.gamma_ou)
    rho0 = _state(args.state, qubits=1)
    if rho0.shape != (2, 2):
        raise ConfigError("the comparison needs a single-qubit state")
    grid = _grid(p_ou, args)
    ens = _ensemble(args)
    rows = []
    if args.gamma_rtn_list:
        arm = reference_evolution(p_ou, rho0, grid, ens, split=False)
        for g in parse_sweep(args.gamma_rtn_list):
            curve = fidelity_complement_curve(p_ou, _params(args.omega, g), rho0, grid, ens, arm)
            rows.append([g, time_average(curve), False])
    problem = None
    if args.optimize:
        lo, hi = (float(v) for v in parse_sweep(args.search)[[0, -1]])
        fit = optimize_gamma_rtn(p_ou, rho0, grid.horizon, (lo, hi), grid=grid, ens=ens)
        rows.append([fit.gamma_star, fit.raw_value, True])
        if not fit.resolved:
            problem = "objective too flat to resolve an optimum"
    if not rows:
        raise ConfigError("compare needs --gamma-rtn-list and/or --optimize")
    return ["gamma_rtn", "avg_fidelity_complement", "optimum"], rows, problem


def cmd_region(args):
    rows = []
    for w in parse_sweep(args.omega_range):
        if w < 0:
            raise ConfigError("omega must be >= 0")
        b = real_region_boundaries(float(w))
        rows.append([w, *(b if b is not None else (np.nan, np.nan))])
    return ["omega", "gamma1", "gamma2"], rows


def cmd_trajectory(args):
    p = _params(0.0, args.gamma)
    grid = _grid(p, args)
    if args.noise == OU and not p.gamma > 0:
        raise ConfigError("OU noise requires gamma > 0")
    traj = (sample_rtn if args.noise == RTN else sample_ou)(p, grid, args.seed)
    return ["t", "B"], np.column_stack([traj.times, traj.values])


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(sp, t_max=10.0, grid=True, ensemble=False):
    sp.add_argument("--config", help="flat key=value configuration file")
    sp.add_argument("-o", "--output", default="-", help="CSV output path ('-' for stdout)")
    if grid:
        sp.add_argument("--t-max", type=float, default=t_max, help="final time")
        sp.add_argument("--dt", type=float, default=None, help="time step (default from parameters)")
    if ensemble:
        sp.add_argument("--realizations", type=int, default=DEFAULT_REALIZATIONS)
        sp.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="master seed (decimal or 0x...)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transnoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="state evolution (Bloch coordinates)")
    sp.add_argument("--omega", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--noise", choices=[RTN, OU], default=RTN)
    sp.add_argument("--env", choices=[COMMON, INDEPENDENT], default=COMMON)
    sp.add_argument("--state", default="1,0,0")
    sp.add_argument("--solver", choices=["analytic", "mc"], default="analytic")
    sp.add_argument("--dump-noise", default=None, help="write the first noise trajectory (t,B) here")
    _common(sp, ensemble=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("correlations", help="negativity, discord and mutual information in time")
    sp.add_argument("--omega", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--noise", choices=[RTN, OU], default=RTN)
    sp.add_argument("--env", choices=[COMMON, INDEPENDENT], default=COMMON)
    sp.add_argument("--state", default="bell-psi-plus")
    sp.add_argument("--solver", choices=["analytic", "mc"], default=None)
    _common(sp, t_max=50.0, ensemble=True)
    sp.set_defaults(func=cmd_correlations)

    sp = sub.add_parser("nonmark", help="BLP and RHP measures over a gamma sweep")
    sp.add_argument("--omega", type=float, default=1.0)
    sp.add_argument("--gamma-list", required=True, help="a..b[:n|:logn] or comma list")
    sp.add_argument("--measure", choices=["blp", "rhp", "both"], default="both")
    sp.add_argument("--max-steps", type=int, default=BLPSearchConfig.max_steps, help="time-step budget per measure")
    _common(sp, grid=False)
    sp.set_defaults(func=cmd_nonmark)

    sp = sub.add_parser("compare", help="OU versus RTN averaged fidelity complement")
    sp.add_argument("--omega", type=float, default=1.0)
    sp.add_argument("--gamma-ou", type=float, default=1.0)
    sp.add_argument("--gamma-rtn-list", default=None, help="a..b[:n|:logn] or comma list")
    sp.add_argument("--optimize", action="store_true", help="also search the best RTN rate")
    sp.add_argument("--search", default="0.1..10", help="optimizer search interval a..b")
    sp.add_argument("--state", default="1,0,0")
    _common(sp, ensemble=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("region", help="bounds of the real-eigenvalue region")
    sp.add_argument("--omega-range", required=True, help="a..b[:n|:logn] or comma list")
    _common(sp, grid=False)
    sp.set_defaults(func=cmd_region)

    sp = sub.add_parser("trajectory", help="one sampled noise trajectory")
    sp.add_argument("--noise", choices=[RTN, OU], default=RTN)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    _common(sp)
    sp.set_defaults(func=cmd_trajectory)
    return parser


def read_config(path) -> dict:
    """Read ``key=value`` lines; ``# key=value`` lines count, other comments do not.

    Reading stops at the first non-comment line that is not an assignment,
    so the CSV body of an output file is skipped.
    """
    out = {}
    try:
        fh = open(path)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            body = line[1:].strip() if line.startswith("#") else line
            if "=" not in body:
                if line.startswith("#"):
                    continue
                break
            key, value = body.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _config_argv(sp: argparse.ArgumentParser, command: str, cfg: dict) -> list[str]:
    options = {}
    for action in sp._actions:
        longs = [o for o in action.option_strings if o.startswith("--")]
        if longs:
            options[action.dest] = (longs[0], action)
    argv = []
    for key, value in cfg.items():
        if key in _META_KEYS:
            if key == "command" and value != command:
                raise ConfigError(f"config is for command {value!r}, not {command!r}")
            continue
        if key not in options or key in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r}")
        flag, action = options[key]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes"):
                argv.append(flag)
            elif value.lower() not in ("0", "false", "no"):
                raise ConfigError(f"{key} expects a boolean, got {value!r}")
        else:
            argv.append(f"{flag}={value}")
    return argv


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # the config is read before full parsing so it can supply required flags
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if known.config and command is not None:
        cfg = read_config(known.config)
        i = argv.index(command)
        argv = argv[: i + 1] + _config_argv(choices[command], command, cfg) + argv[i + 1:]
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        out = args.func(args)
        cols, rows = out[0], out[1]
        problem = out[2] if len(out) > 2 else None
        write_table(args.output, cols, rows, _metadata(args))
        if problem:
            raise NotConverged(problem)
    except ConfigError as err:
        print(f"transnoise: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as err:
        print(f"transnoise: not converged: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return 0
