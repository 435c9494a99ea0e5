"""Command-line entry point.

    phaseless simulate|reconstruct|evaluate|table|crosssection
              --config FILE --out DIR [--method M] [--seed S]

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .forward import ForwardSolverError
from .geometry import save_geometry
from .inversion import InversionError, SingularSystemError
from .measurement import PhaselessDataset
from .potentials import GridFunction

log = logging.getLogger("phaseless")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

TRUTH = "truth.csv"
EXACT = "exact.dataset"
NOISY = "noisy.dataset"
RECON = "reconstruction.csv"
DIAG = "diagnostics.json"


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ex.ConfigError(f"missing {what}: {path}")
    return path


def cmd_simulate(cfg, out: Path, args) -> None:
    problem = ex.build_problem(cfg)
    exact, noisy = ex.simulate(problem, cfg["Np"], cfg["seed"])
    exact.seed = cfg["seed"]
    problem.truth.write_csv(out / TRUTH, E=problem.geometry.E)
    save_geometry(problem.geometry, out / "geometry.json")
    exact.write(out / EXACT)
    if noisy is not None:
        noisy.write(out / NOISY)
    for i, w in enumerate(problem.backgrounds.members, start=1):
        w.write_csv(out / f"background_{i}.csv", E=problem.geometry.E)
    _write_json(out / "provenance.json", {**ex.provenance(cfg), "seed": cfg["seed"],
                                          "config": cfg})


def _dataset(cfg, out: Path) -> PhaselessDataset:
    for name in (NOISY, EXACT):
        if (out / name).exists():
            return PhaselessDataset.read(out / name)
    raise ex.ConfigError(f"no dataset in {out}; run simulate first")


def cmd_reconstruct(cfg, out: Path, args) -> None:
    problem = ex.build_problem(cfg)
    data = _dataset(cfg, out)
    if abs(data.geometry.E - problem.geometry.E) > 1e-12 * problem.geometry.E:
        raise ex.ConfigError("dataset energy does not match the configuration")
    v_star, diag = ex.reconstruct(problem, data, args.method or cfg["method"])
    v_star.label = "reconstruction"
    v_star.write_csv(out / RECON, E=problem.geometry.E)
    _write_json(out / DIAG, diag)
    if "newtoncg" in diag:
        with open(out / "newtoncg.jsonl", "w") as fh:
            for rec in diag["newtoncg"]["log"]:
                fh.write(json.dumps(rec) + "\n")


def cmd_evaluate(cfg, out: Path, args) -> None:
    v_star = GridFunction.read_csv(_require(out / RECON, "reconstruction"))
    truth = GridFunction.read_csv(_require(out / TRUTH, "truth potential"))
    diag = json.loads((out / DIAG).read_text()) if (out / DIAG).exists() else None
    _write_json(out / "metrics.json", ex.evaluate(v_star, truth, diag))


def cmd_table(cfg, out: Path, args) -> None:
    if args.method:
        cfg["table"]["methods"] = [args.method]

    def progress(E, Np, method, seed, err):
        log.info("E=%g Np=%s %s seed=%d: %.2f%%", E, Np, method, seed, 100 * err)

    rows = ex.run_table(cfg, progress)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["E", "Np", "method", "mean_linf_percent", "errors_percent", "seeds"])
        for r in rows:
            w.writerow([r["E"], r["Np"], r["method"], f"{r['mean_linf_percent']:.4g}",
                        " ".join(f"{e:.4g}" for e in r["errors_percent"]),
                        " ".join(str(s) for s in r["seeds"])])


def cmd_crosssection(cfg, out: Path, args) -> None:
    truth = GridFunction.read_csv(out / TRUTH) if (out / TRUTH).exists() else None
    v_star = GridFunction.read_csv(out / RECON) if (out / RECON).exists() else None
    if truth is None and v_star is None:
        raise ex.ConfigError(f"neither {TRUTH} nor {RECON} found in {out}")
    cs = cfg["crosssection"]
    arr = ex.cross_section(truth, v_star, cs["axis"], cs["offset"])
    with open(out / f"crosssection_{cs['axis']}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([cs["axis"], "truth", "re", "im"])
        for row in arr:
            w.writerow([repr(float(x)) for x in row])


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "table": cmd_table,
    "crosssection": cmd_crosssection,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phaseless", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=ex.METHODS, help="reconstruction pipeline")
    p.add_argument("--seed", type=int, help="overrides the seed of the configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ex.ConfigError("seed must be nonnegative")
            cfg["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except ex.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ForwardSolverError, InversionError, SingularSystemError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
