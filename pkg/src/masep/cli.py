"""Batch command line: compute spectra, run verification suites, scan gaps.

Exit codes: 0 pass, 1 usage, 2 capacity, 3 missing input, 4 check failure.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import bethe, scaling
from .operators import BASIS_CAPACITY, CapacityError, build_basis, build_hamiltonian, ybe_residual
from .sectors import (Sector, SectorError, enumerate_basic_sectors, genuine_dimension,
                      hasse_cover_edges, is_subsector, sector_dimension)
from .spectra import (check_gap_conjecture, check_spectral_duality, genuine_spectrum,
                      multiset_contains, next_leading, sector_spectrum, stationary_vector)

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_MISSING, EXIT_FAIL = 0, 1, 2, 3, 4
DEFAULT_CAPACITY = 6000


class CheckFailed(Exception):
    pass


class RateType(click.ParamType):
    """A rate given as a decimal or an exact fraction, kept as a Fraction."""

    name = "rate"

    def convert(self, value, param, ctx):
        if isinstance(value, Fraction):
            return value
        try:
            r = Fraction(str(value).strip())
        except (ValueError, ZeroDivisionError):
            self.fail(f"{value!r} is not a decimal or a fraction", param, ctx)
        if r < 0:
            self.fail(f"rate {value} is negative", param, ctx)
        return r


RATE = RateType()


def _rates(p: Fraction, q: Fraction) -> tuple[float, float]:
    if p + q <= 0:
        raise click.UsageError("need p + q > 0")
    return float(p), float(q)


def _sector(text: str, L: int | None) -> Sector:
    try:
        return Sector.parse(text, L)
    except (SectorError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


def _num(x: float) -> float:
    x = round(float(x), 12)
    return 0.0 if x == 0 else x


def _cplx(z) -> list[float]:
    z = complex(z)
    return [_num(z.real), _num(z.imag)]


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=not text.endswith("\n"))


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def capacity_options(f):
    f = click.option("--allow-large", is_flag=True,
                     help="Acknowledge a capacity above the default.")(f)
    f = click.option("--capacity", type=int, default=None,
                     help=f"Largest dense dimension (default {DEFAULT_CAPACITY}, env MASEP_CAPACITY).")(f)
    return f


def _apply_capacity(capacity: int | None, allow_large: bool) -> None:
    if capacity is None:
        return
    if capacity < 1 or capacity > BASIS_CAPACITY:
        raise click.UsageError(f"capacity must lie in 1..{BASIS_CAPACITY}")
    if capacity > DEFAULT_CAPACITY and not allow_large:
        raise click.UsageError("capacities above the default need --allow-large")
    os.environ["MASEP_CAPACITY"] = str(capacity)


def _report(suite: str, checks: list[dict], fmt: str) -> tuple[str, bool]:
    ok = all(c["ok"] for c in checks)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "ok", "residual"])
        for c in checks:
            w.writerow([c["check"], int(c["ok"]), c["residual"]])
        return buf.getvalue(), ok
    return _dump({"suite": suite, "ok": ok, "n_checks": len(checks), "checks": checks}), ok


@click.group()
def cli():
    """Spectra, genuine spectra and Bethe ansatz checks for the multi-species ASEP."""


FORMAT = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
OUTPUT = click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)


@cli.command()
@click.option("--L", "L", type=int, default=None)
@click.option("--sector", required=True, help="Parts like 2,1,3,1 or subset like s:2,3,6.")
@click.option("--p", type=RATE, default=None, help="Required unless the sector has a single state.")
@click.option("--q", type=RATE, default=None)
@click.option("--genuine", is_flag=True, help="Only eigenvalues born in this sector.")
@click.option("--next-leading", "with_next", is_flag=True, help="Append the E+-_j list.")
@FORMAT
@OUTPUT
@capacity_options
def spectrum(L, sector, p, q, genuine, with_next, fmt, output, capacity, allow_large):
    """Eigenvalues of the generator on one sector."""
    _apply_capacity(capacity, allow_large)
    s = _sector(sector, L)
    given = p is not None and q is not None
    if not given:
        if sector_dimension(s) > 1:
            raise click.UsageError("--p and --q are required")
        # H vanishes on a single state, whatever the rates
        p, q = p if p is not None else Fraction(1), q if q is not None else Fraction(0)
    pf, qf = _rates(p, q)
    spec = genuine_spectrum(s, pf, qf) if genuine else sector_spectrum(s, pf, qf)
    pairs = next_leading(s, pf, qf) if with_next and s.n > 1 else []
    if fmt == "csv":
        text = spec.to_csv()
        if pairs:
            text += "split,re_plus,im_plus,re_minus,im_minus\n"
            for j, (a, b) in enumerate(pairs, 1):
                text += f"{j},{_num(a.real)!r},{_num(a.imag)!r},{_num(b.real)!r},{_num(b.imag)!r}\n"
    else:
        obj = json.loads(spec.to_json())
        obj["dimension"] = int(len(spec))
        if not given:
            obj["p"] = obj["q"] = None
        if with_next:
            obj["next_leading"] = [{"split": j, "plus": _cplx(a), "minus": _cplx(b)}
                                   for j, (a, b) in enumerate(pairs, 1)]
        text = _dump(obj)
    _emit(text, output)


@cli.command()
@click.option("--L", "L", type=int, default=None)
@click.option("--sector", required=True)
@click.option("--p", type=RATE, default=None)
@click.option("--q", type=RATE, default=None)
@click.option("--method", type=click.Choice(["kernel", "mobius"]), default="kernel")
@FORMAT
@OUTPUT
@capacity_options
def genuine(L, sector, p, q, method, fmt, output, capacity, allow_large):
    """Genuine dimension, and the genuine spectrum when rates are given."""
    _apply_capacity(capacity, allow_large)
    s = _sector(sector, L)
    obj = {"sector": s.label(), "dimension": sector_dimension(s), "genuine_dimension": genuine_dimension(s)}
    if (p is None) != (q is None):
        raise click.UsageError("give both --p and --q or neither")
    if p is not None:
        pf, qf = _rates(p, q)
        spec = genuine_spectrum(s, pf, qf, method)
        if fmt == "csv":
            _emit(spec.to_csv(), output)
            return
        obj.update(json.loads(spec.to_json()))
    if fmt == "csv":
        _emit(f"sector,dimension,genuine_dimension\n{s.label()},{obj['dimension']},{obj['genuine_dimension']}\n",
              output)
        return
    _emit(_dump(obj), output)


def _duality_row(args) -> dict:
    s, p, q = args
    rep = check_spectral_duality(s, p, q)
    return {"check": f"duality {s.label()}", "ok": bool(rep.ok), "residual": _num(rep.spectral_match.worst),
            "methods_agree": bool(rep.methods_agree), "image_rank": rep.image_rank,
            "genuine_dimension": rep.expected_rank}


@cli.command()
@click.option("--L", "L", type=int, default=None)
@click.option("--sector", required=True)
@click.option("--p", type=RATE, required=True)
@click.option("--q", type=RATE, required=True)
@FORMAT
@OUTPUT
@capacity_options
def duality(L, sector, p, q, fmt, output, capacity, allow_large):
    """Genuine spectra of a sector and its complement are mirror images."""
    _apply_capacity(capacity, allow_large)
    s = _sector(sector, L)
    pf, qf = _rates(p, q)
    text, ok = _report("duality", [_duality_row((s, pf, qf))], fmt)
    _emit(text, output)
    if not ok:
        raise CheckFailed("duality check failed")


# verification suites --------------------------------------------------------

def _inclusion_row(args) -> dict:
    s, t, p, q = args
    cert = multiset_contains(sector_spectrum(t, p, q), sector_spectrum(s, p, q))
    return {"check": f"Spec({s.label()}) in Spec({t.label()})", "ok": bool(cert.ok), "residual": _num(cert.worst)}


def _gap_row(args) -> dict:
    s, p, q = args
    g = check_gap_conjecture(s, p, q)
    return {"check": f"gap {s.label()}", "ok": bool(g.ok), "residual": _num(g.margin)}


def _stationary_rows(s: Sector, p: float, q: float) -> list[dict]:
    rows = []
    v = stationary_vector(s, p, q)
    H = build_hamiltonian(s, p, q).to_dense(float)
    res = float(np.abs(H @ v).max())
    rows.append({"check": f"kernel {s.label()}", "ok": bool(res < 1e-10 and v.min() >= -1e-12),
                 "residual": _num(res)})
    if s.n <= 2 or p == q:
        dev = float(np.abs(v - 1 / len(v)).max())
        rows.append({"check": f"uniform {s.label()}", "ok": bool(dev < 1e-10), "residual": _num(dev)})
    eps = bethe.extract_eigen_polynomials(s, p, q)
    top = min(eps, key=lambda e: abs(e.energy))
    counts = tuple(s.parts) + (0,) * (s.L - s.n)
    err = float(np.abs(top.coefficients - bethe.stationary_polynomial(s.L, p, q, counts)).max())
    rows.append({"check": f"stationary polynomial {s.label()}", "ok": bool(err < 1e-9), "residual": _num(err)})
    return rows


def _fixture_rows(path: str | None) -> list[dict]:
    src = Path(path) if path else bethe.reference_fixture_path()
    if not src.exists():
        raise FileNotFoundError(f"fixture file {src} not found")
    checks, shared = bethe.verify_fixture_rows(bethe.load_root_sets(src))
    rows = [{"check": f"row {c.index} {','.join(map(str, c.counts))}", "ok": c.ok,
             "residual": _num(max(c.backward_error, c.eigenvalue_error, c.energy_error,
                                  c.polished_polynomial_error))}
            for c in checks]
    rows += [{"check": f"shared polynomial rows {g['rows']}", "ok": g["ok"], "residual": _num(g["spread"])}
             for g in shared]
    return rows


@cli.command()
@click.option("--suite", required=True,
              type=click.Choice(["duality", "inclusion", "gap-conjecture", "ybe", "bethe-fixtures", "stationary"]))
@click.option("--L", "L", type=int, default=4, show_default=True)
@click.option("--p", type=RATE, default=Fraction(4, 5), show_default=True)
@click.option("--q", type=RATE, default=Fraction(1, 5), show_default=True)
@click.option("--fixtures", type=str, default=None, help="Root-set JSON file (bethe-fixtures).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-dim", type=int, default=5000, show_default=True, help="gap-conjecture sector size bound.")
@click.option("--workers", type=int, default=1, show_default=True)
@FORMAT
@OUTPUT
@capacity_options
def verify(suite, L, p, q, fixtures, seed, max_dim, workers, fmt, output, capacity, allow_large):
    """Run a verification suite; exit 4 if any assertion fails."""
    _apply_capacity(capacity, allow_large)
    if L < 1:
        raise click.UsageError("L must be positive")
    pf, qf = _rates(p, q)
    sectors = enumerate_basic_sectors(L)
    if suite == "duality":
        checks = _pool_map(_duality_row, [(s, pf, qf) for s in sectors], workers)
    elif suite == "inclusion":
        pairs = [(s, t, pf, qf) for s in sectors for t in sectors
                 if s != t and is_subsector(s, t)]
        checks = _pool_map(_inclusion_row, pairs, workers)
    elif suite == "gap-conjecture":
        todo = [(s, pf, qf) for s in sectors if s.n >= 2 and sector_dimension(s) < max_dim]
        checks = _pool_map(_gap_row, todo, workers)
    elif suite == "ybe":
        rng = np.random.default_rng(seed)
        checks = []
        for N in range(2, max(2, min(L, 4)) + 1):
            for k in range(3):
                l1, l2 = rng.normal(size=2) + 1j * rng.normal(size=2)
                res = ybe_residual(l1, l2, pf, qf, N)
                checks.append({"check": f"ybe N={N} sample {k}", "ok": bool(res < 1e-12), "residual": _num(res)})
    elif suite == "bethe-fixtures":
        checks = _fixture_rows(fixtures)
    else:
        checks = [row for s in sectors for row in _stationary_rows(s, pf, qf)]
    text, ok = _report(suite, checks, fmt)
    _emit(text, output)
    if not ok:
        raise CheckFailed(f"suite {suite} failed")


@cli.command()
@click.option("--Lmin", "Lmin", type=int, required=True)
@click.option("--Lmax", "Lmax", type=int, required=True)
@click.option("--rho", type=RATE, required=True)
@click.option("--p", type=RATE, required=True)
@click.option("--q", type=RATE, required=True)
@click.option("--method", type=click.Choice(["bethe", "diagonalization"]), default="bethe")
@click.option("--step", type=int, default=None, help="Linear step in L (default: doubling).")
@click.option("--fit-output", type=click.Path(dir_okay=False), default=None)
@OUTPUT
@capacity_options
def scan(Lmin, Lmax, rho, p, q, method, step, fit_output, output, capacity, allow_large):
    """Gap versus L, with a fit of the dynamical exponent."""
    _apply_capacity(capacity, allow_large)
    pf, qf = _rates(p, q)
    if Lmin < 2 or Lmax < Lmin:
        raise click.UsageError("empty L range")
    Ls, L = [], Lmin
    while L <= Lmax:
        Ls.append(L)
        L = L + step if step else 2 * L
    keep = []
    for L in Ls:
        n = rho * L
        if n.denominator != 1 or not 0 < n < L:
            click.echo(f"warning: rho*L = {float(n):g} not admissible at L={L}, skipped", err=True)
            continue
        keep.append(L)
    if not keep:
        raise click.UsageError("no admissible L in range")
    samples = scaling.gap_scan(keep, rho, pf, qf, method)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "rho", "p", "q", "reE", "imE", "method"])
    for smp in samples:
        r = smp.row()
        w.writerow([r["L"], repr(_num(r["rho"])), repr(_num(r["p"])), repr(_num(r["q"])),
                    repr(float(r["reE"])), repr(_num(r["imE"])), r["method"]])
    _emit(buf.getvalue(), output)
    report = {"samples": len(samples), "converged": sum(s.converged for s in samples)}
    try:
        fit = scaling.fit_exponent(samples)
        report["fit"] = {"z": fit.z, "c": fit.c, "residuals": fit.residuals, "used_L": fit.used_L,
                         "local_z": fit.diagnostics["local_z"]}
    except scaling.FitError as exc:
        report["fit"] = {"refused": str(exc)}
    L_top = max(s.L for s in samples)
    pred = scaling.asymptotic_prediction(L_top, float(rho), pf, qf)[0]
    report["prediction_at_Lmax"] = _cplx(pred)
    if pf != qf:
        try:
            amp = scaling.extrapolate_amplitude(samples)
            report["amplitude"] = {"extrapolated": amp.amplitude, "predicted": amp.predicted,
                                   "relative_error": amp.relative_error}
        except scaling.FitError as exc:
            report["amplitude"] = {"refused": str(exc)}
    text = _dump(report)
    if fit_output:
        Path(fit_output).write_text(text)
    else:
        click.echo(text, err=True, nl=False)


@cli.group("bethe")
def bethe_group():
    """Bethe ansatz tools."""


@bethe_group.command("verify")
@click.option("--fixtures", type=str, default=None, help="Root-set JSON (default: packaged L=4 table).")
@FORMAT
@OUTPUT
def bethe_verify(fixtures, fmt, output):
    """Check stored root sets against Bethe equations, Lambda and E."""
    text, ok = _report("bethe-fixtures", _fixture_rows(fixtures), fmt)
    _emit(text, output)
    if not ok:
        raise CheckFailed("fixture verification failed")


@bethe_group.command("solve1")
@click.option("--L", "L", type=int, required=True)
@click.option("--n1", type=int, required=True)
@click.option("--p", type=RATE, required=True)
@click.option("--q", type=RATE, required=True)
@click.option("--I", "qnums", type=str, default=None, help="Comma-separated quantum numbers (default: gap state).")
@OUTPUT
def bethe_solve1(L, n1, p, q, qnums, output):
    """Solve the one-species Bethe equations in logarithmic form."""
    pf, qf = _rates(p, q)
    I = None
    if qnums:
        try:
            I = [float(Fraction(x)) for x in qnums.split(",")]
        except ValueError as exc:
            raise click.UsageError(f"cannot parse quantum numbers {qnums!r}") from exc
    try:
        sol = bethe.solve_one_species(L, n1, pf, qf, I)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    except bethe.ConvergenceError as exc:
        raise CheckFailed(str(exc)) from exc
    obj = {"L": L, "n1": n1, "p": pf, "q": qf, "quantum_numbers": [float(v) for v in sol.quantum_numbers],
           "energy": _cplx(sol.energy), "log_residual": float(sol.residual),
           "roots": [_cplx(z) for z in sol.roots.levels[0]]}
    _emit(_dump(obj), output)


@cli.command()
@click.option("--L", "L", type=int, required=True)
@FORMAT
@OUTPUT
def hasse(L, fmt, output):
    """Sectors of the boolean lattice with dimensions, and its cover edges."""
    if L < 1:
        raise click.UsageError("L must be positive")
    sectors = enumerate_basic_sectors(L)
    edges = hasse_cover_edges(L)
    if fmt == "csv":
        text = "lower,upper\n" + "".join(f"\"{e.lower.label()}\",\"{e.upper.label()}\"\n" for e in edges)
    else:
        text = _dump({"L": L,
                      "nodes": [{"sector": s.label(), "subset": list(s.subset), "dimension": sector_dimension(s),
                                 "genuine_dimension": genuine_dimension(s)} for s in sectors],
                      "edges": [[e.lower.label(), e.upper.label()] for e in edges]})
    _emit(text, output)


@cli.command()
@click.option("--L", "L", type=int, default=None)
@click.option("--sector", required=True)
@click.option("--p", type=RATE, required=True)
@click.option("--q", type=RATE, required=True)
@FORMAT
@OUTPUT
@capacity_options
def stationary(L, sector, p, q, fmt, output, capacity, allow_large):
    """Stationary probability vector in lexicographic basis order."""
    _apply_capacity(capacity, allow_large)
    s = _sector(sector, L)
    pf, qf = _rates(p, q)
    v = stationary_vector(s, pf, qf)
    states = ["".join(map(str, st)) for st in build_basis(s).states]
    if fmt == "csv":
        text = "state,probability\n" + "".join(f"{k},{_num(x)!r}\n" for k, x in zip(states, v))
    else:
        text = _dump({"sector": s.label(), "p": pf, "q": qf,
                      "probabilities": [[k, _num(x)] for k, x in zip(states, v)]})
    _emit(text, output)


def main(argv=None) -> int:
    saved = os.environ.get("MASEP_CAPACITY")
    try:
        cli.main(args=argv, prog_name="masep", standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except CapacityError as exc:
        click.echo(f"capacity exceeded: {exc}", err=True)
        return EXIT_CAPACITY
    except FileNotFoundError as exc:
        click.echo(f"missing input: {exc}", err=True)
        return EXIT_MISSING
    except CheckFailed as exc:
        click.echo(f"check failed: {exc}", err=True)
        return EXIT_FAIL
    finally:
        # --capacity is scoped to one invocation
        if saved is None:
            os.environ.pop("MASEP_CAPACITY", None)
        else:
            os.environ["MASEP_CAPACITY"] = saved
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
