"""Command-line front end: ``hybridsc pf|sc|validate``.

Every command reads a grid file (``--grid PATH``, or ``--grid bundled`` for the
shipped test case) and writes its tables into ``--out DIR``. Files are written
to temporary names and renamed only after everything succeeded, so a failed
run leaves no partial output. Failures print one line
``error: <category>: <message>`` on stderr and exit with a category code.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .errors import HybridSCError
from .grid import GridModel
from .io import load_grid
from .powerflow import DEFAULT_MAX_ITER, DEFAULT_TOL, OperatingPoint, solve_pf
from .sensitivity import all_sensitivities, branch_currents
from .validation import DELTA_P, DELTA_V, CLASS_INFO, compare

EXIT_CODES = {
    "file": 3,
    "invalid-grid": 4,
    "non-convergence": 5,
    "singular": 6,
    "zero-voltage": 7,
    "contract": 8,
    "structure": 8,
}
EXIT_USAGE = 2
EXIT_OTHER = 1

TOL_RANGE = (1e-12, 1e-4)


def fmt(value: float) -> str:
    """Scientific notation with 12 significant digits."""
    return "%.11e" % (float(value) + 0.0)  # + 0.0 folds -0.0 into 0.0


# -- argument parsing ------------------------------------------------------------


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not np.isfinite(value) or value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive number: {text!r}")
    return value


def _tolerance(text: str) -> float:
    value = _positive_float(text)
    lo, hi = TOL_RANGE
    if not lo <= value <= hi:
        raise argparse.ArgumentTypeError(f"tolerance must lie in [{lo:g}, {hi:g}], got {value:g}")
    return value


def _max_iter(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 1 <= value <= 1000:
        raise argparse.ArgumentTypeError("max-iter must lie in [1, 1000]")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridsc",
        description="Unbalanced hybrid AC/DC power flow and voltage/current sensitivity coefficients.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="{pf,sc,validate}")

    def common(p):
        p.add_argument("--grid", required=True, help="grid YAML file, or 'bundled' for the shipped test case")
        p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--tol", type=_tolerance, default=DEFAULT_TOL, help="power-flow tolerance (inf-norm)")
        p.add_argument("--max-iter", type=_max_iter, default=DEFAULT_MAX_ITER)

    p_pf = sub.add_parser("pf", help="solve the power flow")
    common(p_pf)

    p_sc = sub.add_parser("sc", help="closed-form sensitivity coefficients for every control")
    common(p_sc)
    p_sc.add_argument("--op", type=Path, help="operating point JSON written by 'pf --format json'")
    p_sc.add_argument("--parallel", action="store_true", help="solve the controls on a thread pool")

    p_val = sub.add_parser("validate", help="compare closed-form coefficients with finite differences")
    common(p_val)
    p_val.add_argument("--delta-p", type=_positive_float, default=DELTA_P, help="power step, p.u.")
    p_val.add_argument("--delta-v", type=_positive_float, default=DELTA_V, help="voltage step, p.u.")
    p_val.add_argument("--central", action="store_true", help="central instead of forward differences")
    p_val.add_argument("--parallel", action="store_true", help="run the perturbed solves on a thread pool")
    return parser


# -- output handling ------------------------------------------------------------


class Outputs:
    """Collects output files and publishes them atomically at the end."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.files: dict[str, str] = {}

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([fmt(v) if isinstance(v, float) else v for v in row] for row in rows)
        self.files[name] = buf.getvalue()

    def json(self, name: str, doc) -> None:
        self.files[name] = json.dumps(doc, indent=2, sort_keys=False) + "\n"

    def publish(self) -> list[Path]:
        self.directory.mkdir(parents=True, exist_ok=True)
        umask = os.umask(0)
        os.umask(umask)
        staged = []
        try:
            for name, text in self.files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.directory)
                staged.append((tmp, self.directory / name))
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(text)
                os.chmod(tmp, 0o666 & ~umask)
        except BaseException:
            for tmp, _ in staged:
                Path(tmp).unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        return [final for _, final in staged]


def _load(args) -> GridModel:
    if args.grid == "bundled":
        from .cases import load_bundled

        return load_bundled()
    return load_grid(args.grid)


def _json_row(row):
    """Numbers rounded through the CSV format, so both outputs carry the same digits."""
    out = []
    for v in row:
        if isinstance(v, float):
            v = float(fmt(v))
            out.append(v if np.isfinite(v) else None)
        else:
            out.append(v)
    return out


# -- commands ------------------------------------------------------------------------


def _voltage_rows(grid: GridModel, op: OperatingPoint):
    for i, node in enumerate(grid.ac_nodes):
        for p, ph in enumerate("abc"):
            e, s = op.e_ac[i, p], op.s_ac[i, p]
            yield [node.name, ph, float(e.real), float(e.imag), float(abs(e)),
                   float(np.degrees(np.angle(e))), float(s.real), float(s.imag)]
    for j, node in enumerate(grid.dc_nodes):
        e = float(op.e_dc[j])
        yield [node.name, "dc", e, 0.0, abs(e), 0.0, float(op.p_dc[j]), 0.0]


def cmd_pf(args, out: Outputs) -> str:
    grid = _load(args)
    op = solve_pf(grid, tol=args.tol, max_iter=args.max_iter)
    if args.format == "json":
        doc = {"grid": grid.name, **op.to_dict(grid)}  # full precision: reloadable via sc --op
        out.json("operating_point.json", doc)
    else:
        out.csv("voltages.csv", ["node", "phase", "re", "im", "magnitude", "angle_deg", "p", "q"],
                _voltage_rows(grid, op))
    return f"converged in {op.iterations} iterations, residual {op.residual_norm:.3e}"


def _sc_rows(grid, results):
    for r in results:
        label = r.x.label(grid)
        for i, node in enumerate(grid.ac_nodes):
            for p, ph in enumerate("abc"):
                d = r.du_ac[i, p]
                yield [label, node.name, ph, float(r.dmag_ac[i, p]), float(r.dang_ac[i, p]),
                       float(d.real), float(d.imag)]
        for j, node in enumerate(grid.dc_nodes):
            d = float(r.du_dc[j])
            yield [label, node.name, "dc", d, 0.0, d, 0.0]


def _current_rows(grid, op, results):
    i_ac, i_dc = branch_currents(grid, op.e_ac, op.e_dc)
    for r in results:
        label = r.x.label(grid)
        for b, br in enumerate(grid.ac_branches):
            for p, ph in enumerate("abc"):
                d, i0 = r.di_ac[b, p], i_ac[b, p]
                dmag = float((np.conj(i0) * d).real / abs(i0)) if abs(i0) > 0 else float("nan")
                yield [label, br.name, ph, dmag, float(d.real), float(d.imag)]
        for b, br in enumerate(grid.dc_branches):
            d = float(r.di_dc[b])
            dmag = float(np.sign(i_dc[b]) * d) if i_dc[b] != 0 else float("nan")
            yield [label, br.name, "dc", dmag, d, 0.0]


def cmd_sc(args, out: Outputs) -> str:
    grid = _load(args)
    if args.op is not None:
        try:
            data = json.loads(Path(args.op).read_text())
            op = OperatingPoint.from_dict(grid, data)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            from .errors import GridFileError

            raise GridFileError(f"cannot use operating point {args.op}: {exc}") from None
    else:
        op = solve_pf(grid, tol=args.tol, max_iter=args.max_iter)
    results = all_sensitivities(grid, op, parallel=args.parallel)
    v_header = ["control", "node", "phase", "d|E|/dx", "dangle/dx", "dE'/dx", "dE''/dx"]
    i_header = ["control", "branch", "phase", "d|I|/dx", "dI'/dx", "dI''/dx"]
    if args.format == "json":
        doc = {
            "grid": grid.name,
            "angle_unit": "rad",
            "voltage": {"columns": v_header, "rows": [_json_row(row) for row in _sc_rows(grid, results)]},
            "current": {"columns": i_header, "rows": [_json_row(row) for row in _current_rows(grid, op, results)]},
        }
        out.json("sensitivities.json", doc)
    else:
        out.csv("voltage_sc.csv", v_header, _sc_rows(grid, results))
        out.csv("current_sc.csv", i_header, _current_rows(grid, op, results))
    worst = max((r.relative_residual() for r in results), default=0.0)
    return f"{len(results)} controls, max relative residual {worst:.3e}"


def summary_table(report) -> str:
    header = ["Class", "Network", "Bus type", "Controls", "Mean error", "Max error", "Mean |error|", "Max |error|"]
    lines = [header]
    for c in report.classes:
        lines.append([CLASS_INFO[c.kind][2], c.network, c.bus_type, str(len(c.controls)),
                      "%.2e" % c.mean, "%.2e" % c.max, "%.2e" % c.mean_abs, "%.2e" % c.max_abs])
    widths = [max(len(row[k]) for row in lines) for k in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines)


def cmd_validate(args, out: Outputs) -> str:
    grid = _load(args)
    tol = min(args.tol, 1e-11)
    op = solve_pf(grid, tol=tol, max_iter=args.max_iter)
    results = all_sensitivities(grid, op)
    report = compare(results, grid, op, central=args.central, parallel=args.parallel,
                     delta_p=args.delta_p, delta_v=args.delta_v)
    row_header = ["control", "class", "node", "phase", "quantity", "numeric", "analytic", "error"]
    rows = [[r.control, r.kind.value, r.node, r.phase, r.quantity, r.numeric, r.analytic, r.error]
            for r in report.rows]
    sum_header = ["class", "network", "bus_type", "controls", "count", "mean", "max", "mean_abs", "max_abs"]
    sums = [[c.kind.value, c.network, c.bus_type, len(c.controls), c.count, c.mean, c.max, c.mean_abs, c.max_abs]
            for c in report.classes]
    if args.format == "json":
        out.json("validation.json", {
            "grid": grid.name,
            "mode": "central" if args.central else "forward",
            "delta_p": args.delta_p,
            "delta_v": args.delta_v,
            "summary": [dict(zip(sum_header, _json_row(row))) for row in sums],
            "rows": [dict(zip(row_header, _json_row(row))) for row in rows],
        })
    else:
        out.csv("validation_errors.csv", row_header, rows)
        out.csv("validation_summary.csv", sum_header, sums)
    return summary_table(report)


COMMANDS = {"pf": cmd_pf, "sc": cmd_sc, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    out = Outputs(args.out)
    try:
        message = COMMANDS[args.command](args, out)
        out.publish()
    except HybridSCError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, EXIT_OTHER)
    except OSError as exc:
        print(f"error: file: {exc}", file=sys.stderr)
        return EXIT_CODES["file"]
    print(message)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
