"""Command-line entry point: ``slidewatch <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .datastore import DisplacementStore, StoreError, make_server
from .experiment import DataError, process_rows, read_displacement_csv, replay, report, simulate
from .lowpass import (
    FilterDesignSpec,
    analog_magnitude,
    design_butterworth,
    design_from_spec,
    required_order,
    settling_samples,
)
from .scenario import ExperimentScenario, ScenarioError, load_scenario
from .transport import FrameError, LinkSimConfig

logger = logging.getLogger("slidewatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scenario(args) -> ExperimentScenario:
    scenario = load_scenario(args.scenario) if getattr(args, "scenario", None) else ExperimentScenario()
    if getattr(args, "seed", None) is not None:
        seed = args.seed
        scenario = dataclasses.replace(
            scenario,
            seed=seed,
            station_link=dataclasses.replace(scenario.station_link, seed=seed + 101),
            uplink=dataclasses.replace(scenario.uplink, seed=seed + 202),
        )
    return scenario


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    summary = simulate(scenario, args.out)
    for mode, s in summary["modes"].items():
        for axis, e in s["errors"].items():
            raw, filt = e["raw"], e["filtered"]
            print(
                f"{mode:5s} {axis:5s} raw rms {raw['rms']:.3f} max {raw['max']:.3f} | "
                f"filtered rms {filt['rms']:.3f} max {filt['max']:.3f} mm"
                if raw["n"] and filt["n"]
                else f"{mode:5s} {axis:5s} no samples"
            )
        print(f"{mode:5s} alerts: {len(s['alerts'])}, confirmations: {len(s['confirmations'])}")
    print(f"summary written to {Path(args.out) / 'summary.json'}")
    return EXIT_OK


def cmd_design_filter(args) -> int:
    base = _scenario(args).design_spec if args.scenario else FilterDesignSpec(0.4, 0.8, 1.0, 20.0, 5.0, 0.5)
    values = {f.name: getattr(base, f.name) for f in dataclasses.fields(FilterDesignSpec)}
    for name in values:
        override = getattr(args, name)
        if override is not None:
            values[name] = override
    spec = FilterDesignSpec(**values)
    order = args.order if args.order is not None else required_order(spec)
    filt = design_butterworth(order, spec.cutoff, spec.sample_rate)
    doc = {
        "spec": values,
        "required_order": required_order(spec),
        "order": order,
        "sections": filt.sections.tolist(),
        "dc_gain": filt.dc_gain,
        "gain_at_cutoff_db": 20 * math.log10(filt.magnitude(spec.cutoff)),
        "analog_gain_at_2wc": analog_magnitude(order, spec.cutoff, 2 * spec.cutoff),
        "digital_gain_at_2wc": filt.magnitude(min(2 * spec.cutoff, spec.sample_rate / 2)),
        "settling_samples": settling_samples(filt),
    }
    if args.table:
        if args.table_points < 1:
            raise ValueError("--table-points must be >= 1")
        freqs = [spec.sample_rate / 2 * i / args.table_points for i in range(args.table_points + 1)]
        with open(args.table, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("freq_hz", "digital_gain", "digital_gain_db", "analog_gain"))
            for f in freqs:
                g = filt.magnitude(f)
                db = 20 * math.log10(g) if g > 0 else float("-inf")
                writer.writerow((repr(f), repr(g), repr(db), repr(analog_magnitude(order, spec.cutoff, f))))
        doc["table"] = args.table
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_process(args) -> int:
    scenario = _scenario(args)
    rows = read_displacement_csv(Path(args.input))
    out = process_rows(rows, scenario.classifier, design_from_spec(scenario.design_spec))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch_ms", "axis", "raw_mm", "verdict", "filtered_mm"))
        for epoch, axis, raw, verdict, filtered in out:
            writer.writerow((epoch, axis, repr(raw), verdict, "" if filtered is None else repr(filtered)))
    print(f"processed {len(rows)} epochs into {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    scenario = _scenario(args) if args.scenario else None
    base = scenario.station_link if scenario else LinkSimConfig()
    link = dataclasses.replace(
        base,
        **{
            k: v
            for k, v in {
                "loss_prob": args.loss_prob,
                "duplicate_prob": args.duplicate_prob,
                "reorder_window": args.reorder_window,
                "corrupt_prob": args.corrupt_prob,
                "seed": args.seed,
            }.items()
            if v is not None
        },
    )
    summary = replay(Path(args.frames), Path(args.out), link, scenario)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    root = Path(args.store)
    if not root.is_dir():
        raise DataError(f"no such store directory: {root}")
    store = DisplacementStore(root)
    try:
        server = make_server(store, args.bind)
    except OSError as exc:
        raise DataError(f"cannot bind {args.bind}: {exc.strerror}") from None
    host, port = server.server_address[:2]
    print(f"serving {root} on http://{host}:{port}/api/stations", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        store.close()
    return EXIT_OK


def cmd_report(args) -> int:
    doc = report(args.store, args.out, args.truth)
    if doc["notice"]:
        print(f"notice: {doc['notice']}")
    print(f"{len(doc['rows'])} summary rows, {len(doc['series_files'])} series files in {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slidewatch", description="GNSS deformation monitoring toolkit")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario through the full chain")
    p.add_argument("--scenario", help="scenario YAML file (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design-filter", help="design the Butterworth low-pass filter")
    p.add_argument("--scenario", help="take the filter spec from a scenario file")
    for name in ("passband-edge", "stopband-edge", "passband-atten", "stopband-atten", "sample-rate", "cutoff"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    p.add_argument("--order", type=int, help="force an order instead of the required one")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--table", help="also write a CSV gain table (0 to Nyquist) here")
    p.add_argument("--table-points", type=int, default=100, help="gain table intervals")
    p.set_defaults(func=cmd_design_filter, seed=None)

    p = sub.add_parser("process", help="offline gross-error elimination and low-pass of a CSV file")
    p.add_argument("--input", required=True, help="CSV with epoch_ms,east_mm,north_mm,up_mm")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--scenario", help="take classifier and filter settings from a scenario file")
    p.set_defaults(func=cmd_process, seed=None)

    p = sub.add_parser("replay", help="replay recorded frames through the link simulator")
    p.add_argument("--frames", required=True, help="frames.bin written by simulate")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenario", help="scenario file for link, classifier and filter settings")
    p.add_argument("--seed", type=int, help="link seed")
    p.add_argument("--loss-prob", type=float)
    p.add_argument("--duplicate-prob", type=float)
    p.add_argument("--reorder-window", type=int)
    p.add_argument("--corrupt-prob", type=float)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="serve read-only query endpoints over a store")
    p.add_argument("--store", required=True, help="store directory")
    p.add_argument("--bind", default="127.0.0.1:8080", help="host:port")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="error tables and plot-ready series from a simulation")
    p.add_argument("--store", required=True, help="simulation output directory or a single store")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--truth", help="truth CSV (default: truth.csv next to the stores)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, DataError, FrameError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid parameter values that passed argument parsing
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
