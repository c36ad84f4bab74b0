"""Command-line harness: compile, run, sweep, check, synth.

Exit codes: 0 success, 1 usage, 2 capacity/validation, 3 equivalence failure,
4 runtime fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .compiler import CapacityError, MemCfgError, map_graph, read_memcfg, write_memcfg
from .coresim import CycleParams
from .events import EventFileError, SampleStream, bin_timesteps, drop_events, load_sample, write_sample
from .netgraph import (
    DEFAULT_N_MAX,
    CapacityLimits,
    GraphFileError,
    parse_graph,
    prune_magnitude,
    quantize_graph,
    validate_capacity,
    write_graph,
)
from .numerics import LUT_FRAC, MEMBRANE_FMT, WEIGHT_FMT, FxFormat
from .refsim import DrainCapExceeded, SimulationFault, first_divergence, run_reference
from .socsim import REPORT_COLUMNS, run_sample, write_report_rows
from .synth import SynthSpec, random_case, synth_graph, synth_sample

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_MISMATCH, EXIT_FAULT = 0, 1, 2, 3, 4

SWEEP_COLUMNS = ["prune_fraction", "drop_rate", "seed", "nnz", "status"] + REPORT_COLUMNS


def default_seed() -> int:
    return int(os.environ.get("YANA_SEED", "0"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cycle_params(overrides: Sequence[str]) -> CycleParams:
    names = {f.name for f in dataclasses.fields(CycleParams)}
    kw = {}
    for item in overrides or ():
        key, sep, val = item.partition("=")
        if not sep or key not in names:
            raise argparse.ArgumentTypeError(
                f"bad --cycle override {item!r}; keys: {', '.join(sorted(names))}"
            )
        kw[key] = int(val)
    return CycleParams(**kw)


def _add_format_args(p):
    p.add_argument("--weight-fmt", type=FxFormat.parse, default=WEIGHT_FMT)
    p.add_argument("--membrane-fmt", type=FxFormat.parse, default=MEMBRANE_FMT)
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    p.add_argument("--lut-frac", type=int, default=LUT_FRAC)
    p.add_argument("--dedup", action="store_true", help="share synapse words between equal weights")


def _compile(graph, prune, args):
    if prune:
        graph = prune_magnitude(graph, prune)
    q = quantize_graph(graph, args.weight_fmt, args.membrane_fmt, args.n_max, args.lut_frac)
    return q, map_graph(q, dedup=args.dedup)


def _capacity_message(err: CapacityError) -> str:
    limits = CapacityLimits()
    lines = [f"capacity check failed ({len(err.violations)} violation(s)):"]
    lines += [f"  {v}" for v in err.violations]
    lines.append(
        f"  limits per core: {limits.syn_per_core} synapses (2^17), "
        f"{limits.neur_per_core} neurons (2^10)"
    )
    return "\n".join(lines)


# -- commands --------------------------------------------------------------------


def cmd_compile(args) -> int:
    graph = parse_graph(args.graph)
    nnz0 = graph.nnz
    try:
        q, m = _compile(graph, args.prune, args)
    except CapacityError as e:
        print(_capacity_message(e), file=sys.stderr)
        return EXIT_VALIDATION
    write_memcfg(m, args.output)
    usage = validate_capacity(q).usage
    print(f"nnz {nnz0} -> {q.nnz} after prune={args.prune:g} and quantization")
    for core, counts in usage.items():
        print(f"  {core:<6} synapses {counts['synapses']:>7} / {CapacityLimits().syn_per_core}"
              f"  neurons {counts['neurons']:>5} / {CapacityLimits().neur_per_core}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_run(args) -> int:
    m = read_memcfg(args.memcfg)
    sample = load_sample(args.events)
    if args.drop:
        sample = drop_events(sample, args.drop, args.seed)
    params = _cycle_params(args.cycle)
    report = run_sample(m, bin_timesteps(sample, args.dt_us), params)
    print(f"cycles {report.total_cycles}  wall {report.wall_time_us:.3f} us @ "
          f"{params.clock_hz / 1e6:g} MHz  timesteps {report.timesteps_visited}  "
          f"synaptic events {report.synaptic_events_processed}  predicted {report.predicted}")
    if args.report:
        write_report_rows([report.row(Path(args.events).stem)], args.report)
    return EXIT_OK


def _sweep_samples(args) -> list[tuple[str, SampleStream]]:
    samples = [(Path(p).stem, load_sample(p)) for p in args.samples or ()]
    if args.shd_dir:
        samples += [(p.stem, load_sample(p)) for p in sorted(Path(args.shd_dir).glob("*.events"))]
    if not samples:
        for k in range(args.synth_count):
            spec = SynthSpec(event_count=args.synth_events, seed=args.seed + k,
                             distribution=args.distribution)
            samples.append((f"synth{k}", synth_sample(spec)))
    return samples


def cmd_sweep(args) -> int:
    graph = parse_graph(args.graph)
    params = _cycle_params(args.cycle)
    samples = _sweep_samples(args)
    seeds = args.seeds if args.seeds is not None else [args.seed]
    rows = []
    failures = 0
    for p in args.prune:
        try:
            q, m = _compile(graph, p, args)
        except CapacityError as e:
            failures += 1
            print(_capacity_message(e), file=sys.stderr)
            for d in args.drop:
                rows.append(_failed_row(p, d, "", "", f"capacity: {e}"))
            continue
        for d in args.drop:
            cell = []
            for seed in seeds:
                for name, s in samples:
                    b = bin_timesteps(drop_events(s, d, seed), args.dt_us)
                    try:
                        r = run_sample(m, b, params)
                    except (SimulationFault, DrainCapExceeded) as e:
                        failures += 1
                        rows.append(_failed_row(p, d, seed, q.nnz, f"fault: {e}", name))
                        continue
                    cell.append(r)
                    rows.append({"prune_fraction": p, "drop_rate": d, "seed": seed, "nnz": q.nnz,
                                 "status": "ok", **r.row(name)})
            rows.append(_aggregate_row(p, d, q.nnz, cell))
            if cell:
                print(f"prune {p:g} drop {d:g}: mean cycles {rows[-1]['cycles']} "
                      f"({rows[-1]['wall_us']} us)")
    if args.report:
        write_report_rows(rows, args.report, SWEEP_COLUMNS)
    if args.figures:
        from .plotting import plot_sweep

        str_rows = [{k: str(v) for k, v in r.items()} for r in rows]
        for path in plot_sweep(str_rows, args.figures):
            print(f"wrote {path}")
    if failures:
        print(f"{failures} sweep cell(s) failed", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _failed_row(p, d, seed, nnz, status, sample_id="aggregate"):
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(prune_fraction=p, drop_rate=d, seed=seed, nnz=nnz, status=status, sample_id=sample_id)
    return row


def _aggregate_row(p, d, nnz, reports):
    if not reports:
        return _failed_row(p, d, "", nnz, "no successful runs")
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    n = len(reports)
    row.update(
        prune_fraction=p, drop_rate=d, seed="", nnz=nnz, status="ok", sample_id="aggregate",
        cycles=f"{sum(r.total_cycles for r in reports) / n:.1f}",
        wall_us=f"{sum(r.wall_time_us for r in reports) / n:.3f}",
        timesteps_visited=f"{sum(r.timesteps_visited for r in reports) / n:.1f}",
        input_events=f"{sum(r.injected_input_events for r in reports) / n:.1f}",
        synaptic_events=f"{sum(r.synaptic_events_processed for r in reports) / n:.1f}",
        hidden_spikes=f"{sum(r.hidden_spikes for r in reports) / n:.1f}",
    )
    return row


def _mismatch(m, b, lut_offset):
    """Return a divergence description, or None when refsim and socsim agree.

    Both simulators hitting the drain cap on runaway recurrence counts as agreement.
    """
    try:
        trace, readout = run_reference(m, b)
    except DrainCapExceeded:
        trace = readout = None
    try:
        report = run_sample(m, b, record_trace=True, lut_offset=lut_offset)
    except DrainCapExceeded as e:
        if trace is None:
            return None
        return (b.num_timesteps, -1, -1, f"only socsim hit the drain cap: {e}")
    if trace is None:
        return (b.num_timesteps, -1, -1, "only refsim hit the drain cap")
    div = first_divergence(trace, report.trace)
    if div is not None:
        return div
    if readout.membranes != report.readout.membranes or readout.predicted != report.predicted:
        return (readout.final_timestep, 2, -1,
                f"readout expected {readout.membranes} got {report.readout.membranes}")
    return None


def _minimize(m, sample: SampleStream, dt_us: int, lut_offset: int) -> SampleStream:
    """Greedily drop events while the mismatch persists."""
    events = list(sample.events)
    k = 0
    while k < len(events):
        trial = events[:k] + events[k + 1:]
        s = SampleStream(trial, sample.input_size, sample.duration_us, sample.label)
        if _mismatch(m, bin_timesteps(s, dt_us), lut_offset) is not None:
            events = trial
        else:
            k += 1
    return SampleStream(events, sample.input_size, sample.duration_us, sample.label)


def cmd_check(args) -> int:
    lut_offset = 1 if args.mutate == "lut-index" else 0
    template = parse_graph(args.graph) if args.graph else None
    for k in range(args.cases):
        rng = np.random.default_rng([args.seed, k])
        case = random_case(rng, recurrent=args.recurrent and k % 2 == 1)
        graph = case.graph
        sample = case.sample
        if template is not None:
            graph = template
            n = len(sample.events)
            ch = rng.integers(0, graph.input_size, size=n)
            sample = SampleStream(
                [e._replace(channel=int(c)) for e, c in zip(sample.events, ch)],
                graph.input_size, sample.duration_us,
            )
        q = quantize_graph(graph, n_max=case.n_max)
        try:
            m = map_graph(q)
        except CapacityError as e:
            print(_capacity_message(e), file=sys.stderr)
            return EXIT_VALIDATION
        div = _mismatch(m, bin_timesteps(sample, case.dt_us), lut_offset)
        if div is None:
            continue
        small = _minimize(m, sample, case.dt_us, lut_offset)
        div = _mismatch(m, bin_timesteps(small, case.dt_us), lut_offset)
        t, core, neuron, what = div
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        write_memcfg(m, dump / "case.memcfg")
        write_sample(small, dump / "case.events")
        msg = (f"case {k}: mismatch at timestep {t}, core {core}, neuron {neuron}: {what}\n"
               f"repro ({len(small.events)} events, dt_us={case.dt_us}): "
               f"{dump / 'case.memcfg'} {dump / 'case.events'}")
        (dump / "mismatch.txt").write_text(msg + "\n", encoding="utf-8")
        print(msg, file=sys.stderr)
        return EXIT_MISMATCH
    print(f"{args.cases} case(s): refsim and socsim agree bit-exactly")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(args.input_size, args.duration_us, args.events, args.distribution,
                     args.seed, args.label)
    write_sample(synth_sample(spec), args.output)
    print(f"wrote {args.output} ({spec.event_count} events)")
    return EXIT_OK


def cmd_synth_net(args) -> int:
    g = synth_graph(args.inputs, args.hidden, args.outputs, seed=args.seed,
                    recurrent=args.recurrent, threshold=args.threshold, scale=args.scale)
    write_graph(g, args.output)
    print(f"wrote {args.output} ({g.input_size}-{g.hidden.size}-{g.output.size}, nnz {g.nnz})")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="yana", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", help="graph -> memory configuration")
    p.add_argument("graph")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--prune", type=float, default=0.0)
    _add_format_args(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="execute one sample on the cycle model")
    p.add_argument("memcfg")
    p.add_argument("events")
    p.add_argument("--dt-us", type=int, default=2000)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--report", help="append one CSV row to this file")
    p.add_argument("--cycle", action="append", metavar="KEY=VALUE", help="override a cycle cost")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="latency vs spatial/temporal sparsity")
    p.add_argument("graph")
    p.add_argument("--prune", type=_floats, default=[0.0])
    p.add_argument("--drop", type=_floats, default=[0.0])
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--seeds", type=_ints, default=None, help="drop seeds (default: --seed)")
    p.add_argument("--samples", nargs="*", help=".events files")
    p.add_argument("--shd-dir", help="directory of pre-converted .events files")
    p.add_argument("--synth-count", type=int, default=1)
    p.add_argument("--synth-events", type=int, default=8000)
    p.add_argument("--distribution", default="uniform", choices=["uniform", "gaussian-bump"])
    p.add_argument("--dt-us", type=int, default=2000)
    p.add_argument("--cycle", action="append", metavar="KEY=VALUE")
    p.add_argument("--report")
    p.add_argument("--figures", help="directory for rendered figures")
    _add_format_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="randomized refsim vs socsim equivalence")
    p.add_argument("--graph", help="use this graph for every case (random streams)")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--recurrent", action="store_true")
    p.add_argument("--mutate", choices=["lut-index"], help=argparse.SUPPRESS)
    p.add_argument("--dump-dir", default="check_failure")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth", help="write a synthetic SHD-shaped sample")
    p.add_argument("output")
    p.add_argument("--input-size", type=int, default=700)
    p.add_argument("--duration-us", type=int, default=800_000)
    p.add_argument("--events", type=int, default=8000)
    p.add_argument("--distribution", default="uniform", choices=["uniform", "gaussian-bump"])
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--label", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-net", help="write a synthetic dense graph")
    p.add_argument("output")
    p.add_argument("--inputs", type=int, default=700)
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--outputs", type=int, default=20)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--recurrent", action="store_true")
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_synth_net)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help or a usage error
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as e:
        print(f"yana: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphFileError, EventFileError, MemCfgError, ValueError) as e:
        print(f"yana: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationFault, DrainCapExceeded) as e:
        print(f"yana: runtime fault: {e}", file=sys.stderr)
        return EXIT_FAULT
    except OSError as e:
        print(f"yana: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
