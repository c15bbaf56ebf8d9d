"""Command-line entry point: ``jitter-transfer <command> ...``.

Commands
--------
simulate         bit streams for every configured pair (``--seed`` is required)
measure          differential jitter records from simulated streams
expected         noise-free records implied by the configured oscillators
recover          individual volatilities from records (method 1 or 2)
diagnose         normal-approximation discrepancy curves as CSV
hardware-report  rerun both recovery methods on the bundled FPGA measurements

Exit codes: 0 success (flagged results included), 2 usage or configuration
error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics
from .errors import EstimationFailedError
from .measurement import (MeasurementRecord, measure_stream, read_records_csv, write_records_csv)
from .oscillator import AccumulatedVolatility, OscillatorParams
from .recovery import (FrequencyRatios, VolatilitySolution, recover_method1_all, recover_method2_3osc,
                       recover_method2_general)
from .simulator import MODES, BitStream, SimulationConfig, derive_seed, simulate_topology, unpack_bits
from .transfer import transfer_accumulated

__all__ = ["ConfigError", "RunConfig", "main", "build_parser", "HARDWARE_EXPERIMENTS"]

VOLATILITY_UNITS = ("accumulated", "s^-1/2")
BIT_ORDER = "packed, 8 bits per byte, first bit in the least significant position"
EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION = 0, 2, 3

# Measured total jitter (accumulated over the sampler period) from two FPGA
# implementations, with the per-ring values each recovery method produced.
HARDWARE_FREQUENCIES_HZ = (65.5e6, 58.0e6, 70.6e6)
HARDWARE_EXPERIMENTS = {
    "experiment_1": {
        "sigma_prime": (1.503e-3, 2.532e-3, 2.695e-3),
        "reported_method1": (1.305e-3, 1.368e-3, 1.875e-3),
        "reported_method2": (0.507e-3, 1.801e-3, 2.246e-3),
    },
    "experiment_2": {
        "sigma_prime": (1.857e-3, 2.313e-3, 3.307e-3),
        "reported_method1": (1.018e-3, 1.193e-3, 2.278e-3),
        "reported_method2": (1.164e-3, 1.080e-3, 2.195e-3),
    },
}


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# -- configuration -----------------------------------------------------------

def _number(d: dict, key: str, where: str, positive: bool = False) -> float:
    if key not in d:
        raise ConfigError(f"{where}.{key}", "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}", f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}", f"must be positive, got {v!r}")
    return float(v)


def _parse_oscillator(d, idx: int) -> OscillatorParams:
    where = f"oscillators[{idx}]"
    if not isinstance(d, dict):
        raise ConfigError(where, "expected an object")
    has_f, has_t = "frequency_hz" in d, "period_s" in d
    if has_f == has_t:
        raise ConfigError(where, "give exactly one of frequency_hz and period_s")
    freq = _number(d, "frequency_hz", where, True) if has_f else 1.0 / _number(d, "period_s", where, True)

    vw = f"{where}.volatility"
    vol = d.get("volatility")
    if not isinstance(vol, dict):
        raise ConfigError(vw, "expected an object with 'value' and 'units'")
    if "units" not in vol:
        raise ConfigError(f"{vw}.units", f"missing units tag (one of {list(VOLATILITY_UNITS)})")
    units = vol["units"]
    value = _number(vol, "value", vw)
    if value < 0:
        raise ConfigError(f"{vw}.value", "must be non-negative")
    if units == "accumulated":
        ref = _number(vol, "reference_period_s", vw, True)
        sigma = math.sqrt(value**2 / ref)
    elif units == "s^-1/2":
        sigma = value
    else:
        raise ConfigError(f"{vw}.units", f"unknown units {units!r}; expected one of {list(VOLATILITY_UNITS)}")

    kw = {}
    for key in ("duty_cycle", "initial_phase"):
        if key in d:
            kw[key] = _number(d, key, where)
    try:
        return OscillatorParams(frequency=freq, volatility=sigma, **kw)
    except ValueError as e:
        raise ConfigError(where, str(e)) from None


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a simulation run.

    JSON layout::

        {"oscillators": [{"period_s": 1e-3,
                          "volatility": {"value": 1e-3, "units": "accumulated",
                                         "reference_period_s": 1e-3},
                          "duty_cycle": 0.5}, ...],
         "pairs": [[0, 1], [0, 2], [1, 2]],
         "n_bits": 1000000, "mode": "exact_ig", "seed": 1,
         "output_dir": "run1"}

    Every oscillator gives exactly one of ``frequency_hz`` / ``period_s``, and
    every volatility carries ``units``: ``"s^-1/2"`` for the phase-noise
    volatility itself or ``"accumulated"`` for ``sqrt(T_ref sigma^2)`` with
    ``reference_period_s`` = ``T_ref``.
    """

    oscillators: tuple
    pairs: tuple
    n_bits: int
    mode: str = "exact_ig"
    seed: Optional[int] = None
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, d) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("config", "expected a JSON object")
        oscs = d.get("oscillators")
        if not isinstance(oscs, list) or len(oscs) < 2:
            raise ConfigError("oscillators", "expected a list of at least two oscillators")
        oscillators = tuple(_parse_oscillator(o, k) for k, o in enumerate(oscs))

        pairs = d.get("pairs")
        if not isinstance(pairs, list) or not pairs:
            raise ConfigError("pairs", "expected a non-empty list of [sampler, sampled] pairs")
        parsed = []
        for k, p in enumerate(pairs):
            if (not isinstance(p, (list, tuple)) or len(p) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in p)):
                raise ConfigError(f"pairs[{k}]", f"expected [i, j] integers, got {p!r}")
            parsed.append((p[0], p[1]))

        n_bits = d.get("n_bits")
        if isinstance(n_bits, bool) or not isinstance(n_bits, int) or n_bits < 1:
            raise ConfigError("n_bits", f"expected a positive integer, got {n_bits!r}")
        mode = d.get("mode", "exact_ig")
        if mode not in MODES:
            raise ConfigError("mode", f"expected one of {list(MODES)}, got {mode!r}")
        seed = d.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64):
            raise ConfigError("seed", f"expected an integer in [0, 2**64), got {seed!r}")
        out = d.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_dir", "expected a string")
        cfg = cls(oscillators, tuple(parsed), n_bits, mode, seed, out)
        try:
            cfg.simulation(0)
        except ValueError as e:
            raise ConfigError("pairs", str(e)) from None
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON in {path}: {e}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = {
            "oscillators": [
                {"frequency_hz": o.frequency,
                 "volatility": {"value": o.volatility, "units": "s^-1/2"},
                 "duty_cycle": o.duty_cycle,
                 "initial_phase": o.initial_phase}
                for o in self.oscillators
            ],
            "pairs": [list(p) for p in self.pairs],
            "n_bits": self.n_bits,
            "mode": self.mode,
        }
        if self.seed is not None:
            d["seed"] = self.seed
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def simulation(self, seed: int, record_phases: bool = False) -> SimulationConfig:
        return SimulationConfig(self.oscillators, self.pairs, self.n_bits, self.mode, seed, record_phases)


# -- helpers -----------------------------------------------------------------

def _stream_name(pair) -> str:
    return f"pair_{pair[0]}_{pair[1]}"


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_run(run_dir: Path, want_phases: bool) -> tuple:
    meta_path = run_dir / "metadata.json"
    try:
        meta = json.loads(meta_path.read_text())
    except OSError:
        raise ConfigError("run", f"no metadata.json in {run_dir}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("run", f"invalid metadata.json: {e}") from None
    cfg = RunConfig.from_dict(meta.get("config"))
    streams = []
    for entry in meta.get("streams", []):
        pair = tuple(entry["pair"])
        path = run_dir / entry["file"]
        try:
            data = path.read_bytes()
        except OSError:
            raise ConfigError("run", f"missing bit file {path}") from None
        if not data:
            raise ConfigError("run", f"bit file {path} is empty")
        try:
            bits = unpack_bits(data, int(entry["n_bits"]))
        except ValueError as e:
            raise ConfigError("run", f"{path}: {e}") from None
        phases = None
        if want_phases:
            if not entry.get("phases"):
                raise ConfigError("run", f"{path} was simulated without --record-phases")
            phases = np.load(run_dir / entry["phases"])
        streams.append(BitStream(bits, pair, cfg.oscillators[pair[0]], cfg.oscillators[pair[1]],
                                 cfg.mode, int(entry.get("sub_seed", 0)), phases))
    if not streams:
        raise ConfigError("run", "metadata lists no streams")
    return cfg, streams


def _load_records(path) -> list:
    path = Path(path)
    try:
        if path.suffix.lower() == ".csv":
            records = read_records_csv(path)
        else:
            data = json.loads(path.read_text())
            items = data["records"] if isinstance(data, dict) else data
            records = [MeasurementRecord.from_dict(d) for d in items]
    except OSError as e:
        raise ConfigError("records", f"cannot read {path}: {e.strerror}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError("records", f"malformed records in {path}: {e}") from None
    if not records:
        raise ConfigError("records", f"{path} holds no records")
    return records


def _print_records(records, out) -> None:
    print("i,j,ratio,sigma_prime,T_ref,n_bits,method,std_error,flags", file=out)
    for r in records:
        se = "" if r.std_error is None else f"{r.std_error:.4g}"
        print(",".join(str(v) for v in r.csv_row()) + f",{se},{'|'.join(r.flags)}", file=out)


def _print_solution(sol: VolatilitySolution, out, label: str = "") -> None:
    head = f"{label} " if label else ""
    print(f"{head}method={sol.method}", file=out)
    print(f"{'i':>3} {'sigma_i^2(T0)':>15} {'sigma_i(T0)':>13}", file=out)
    for i, (v, s) in enumerate(zip(sol.sigma_sq_accumulated, sol.sigma_accumulated)):
        print(f"{i:>3} {v:>15.6e} {s:>13.6e}", file=out)
    if sol.condition_number_inf is not None:
        print(f"kappa_inf={sol.condition_number_inf:.6g} bound={sol.condition_bound:.6g}", file=out)
    print(f"residual_inf={sol.residual_inf:.3e} flags={sol.flags}", file=out)


def _solve(records, ratios, method: str) -> VolatilitySolution:
    if method == "1":
        return recover_method1_all(records, ratios)
    if len(ratios) == 3:
        return recover_method2_3osc(records, ratios)
    return recover_method2_general(records, ratios)


# -- commands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    out_dir = Path(args.out or cfg.output_dir or "run")
    if args.n_bits is not None:
        cfg = RunConfig(cfg.oscillators, cfg.pairs, args.n_bits, cfg.mode, cfg.seed, cfg.output_dir)
    try:
        sim = cfg.simulation(args.seed, record_phases=args.record_phases)
    except ValueError as e:
        raise ConfigError("seed", str(e)) from None
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, stream in enumerate(simulate_topology(sim)):
        name = _stream_name(stream.pair)
        entry = {"pair": list(stream.pair), "file": f"{name}.bin", "n_bits": stream.n_bits,
                 "sub_seed": derive_seed(args.seed, idx)}
        (out_dir / entry["file"]).write_bytes(stream.to_bytes())
        if args.csv:
            entry["csv"] = f"{name}.csv"
            stream.write_csv(out_dir / entry["csv"])
        if args.record_phases:
            entry["phases"] = f"{name}.phases.npy"
            np.save(out_dir / entry["phases"], stream.ground_truth_phases)
        entries.append(entry)
    meta = {"config": RunConfig(cfg.oscillators, cfg.pairs, cfg.n_bits, cfg.mode, args.seed).to_dict(),
            "seed": args.seed, "bit_order": BIT_ORDER, "streams": entries}
    _dump_json(meta, out_dir / "metadata.json")
    print(f"wrote {len(entries)} streams of {cfg.n_bits} bits to {out_dir}")
    return EXIT_OK


def cmd_measure(args) -> int:
    method = args.method.replace("-", "_")
    if args.run:
        _, streams = _load_run(Path(args.run), method == "phase_oracle")
    else:
        cfg = RunConfig.load(args.config)
        seed = args.seed if args.seed is not None else cfg.seed
        if seed is None:
            raise ConfigError("seed", "give --seed or a seed in the config")
        streams = simulate_topology(cfg.simulation(seed, record_phases=method == "phase_oracle"))
    records = [measure_stream(s, method) for s in streams]
    if args.out:
        _dump_json({"records": [r.to_dict() for r in records]}, args.out)
    if args.csv:
        write_records_csv(records, args.csv)
    _print_records(records, sys.stdout)
    return EXIT_OK


def cmd_expected(args) -> int:
    cfg = RunConfig.load(args.config)
    records = []
    for i, j in cfg.pairs:
        a, b = cfg.oscillators[i], cfg.oscillators[j]
        records.append(MeasurementRecord(pair=(i, j), ratio_estimate=b.frequency / a.frequency,
                                         accumulated_sigma_prime=transfer_accumulated(a, b, pair=(i, j)),
                                         n_bits_used=0, method="expected"))
    if args.out:
        _dump_json({"records": [r.to_dict() for r in records]}, args.out)
    if args.csv:
        write_records_csv(records, args.csv)
    _print_records(records, sys.stdout)
    return EXIT_OK


def _ratios_from_args(args, records) -> FrequencyRatios:
    try:
        if args.periods:
            return FrequencyRatios.from_periods(args.periods)
        if args.frequencies:
            return FrequencyRatios.from_frequencies(args.frequencies)
        return FrequencyRatios.from_records(records)
    except ValueError as e:
        raise ConfigError("ratios", str(e)) from None


def cmd_recover(args) -> int:
    records = _load_records(args.records)
    ratios = _ratios_from_args(args, records)
    try:
        sol = _solve(records, ratios, args.method)
        other = _solve(records, ratios, "2" if args.method == "1" else "1") if args.compare else None
    except ValueError as e:
        raise ConfigError("records", str(e)) from None
    if args.out:
        _dump_json(sol.to_dict(), args.out)
    _print_solution(sol, sys.stdout)
    if other is not None:
        print(file=sys.stdout)
        _print_solution(other, sys.stdout)
        print("\nrelative difference of sigma_i(T0), method 1 vs method 2:")
        m1, m2 = (sol, other) if args.method == "1" else (other, sol)
        for i, (a, b) in enumerate(zip(m1.sigma_accumulated, m2.sigma_accumulated)):
            print(f"{i:>3} {(a - b) / b:+.3%}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        points = diagnostics.discrepancy_sweep(args.levels, args.f_ratio)
        x, pe, pa = diagnostics.density_comparison(args.density_level, args.f_ratio)
    except ValueError as e:
        raise ConfigError("levels", str(e)) from None
    diagnostics.write_discrepancy_csv(points, out_dir / "discrepancy.csv")
    diagnostics.write_density_csv(x, pe, pa, out_dir / "density.csv")
    print("jitter,discrepancy")
    for p in points:
        print(f"{p.jitter_level:g},{p.tv_distance:.6e}")
    if len(points) >= 2:
        print(f"log-log slope: {diagnostics.loglog_slope(points):.4f}")
    return EXIT_OK


def hardware_report(out=None) -> dict:
    """Rerun both methods on the bundled hardware measurements and print them next to the reported values."""
    out = sys.stdout if out is None else out
    f = HARDWARE_FREQUENCIES_HZ
    ratios = FrequencyRatios.from_frequencies(f)
    t0 = 1.0 / f[0]
    result = {}
    for name, exp in HARDWARE_EXPERIMENTS.items():
        recs = [MeasurementRecord(pair=p, ratio_estimate=f[p[1]] / f[p[0]],
                                  accumulated_sigma_prime=AccumulatedVolatility(v, 1.0 / f[p[0]]),
                                  n_bits_used=0, method="expected")
                for p, v in zip(((0, 1), (0, 2), (1, 2)), exp["sigma_prime"])]
        m1 = recover_method1_all(recs, ratios)
        m2 = recover_method2_3osc(recs, ratios)
        result[name] = {"method1": m1.sigma_accumulated, "method2": m2.sigma_accumulated,
                        "method2_flags": m2.flags}
        print(f"{name} (T0 = {t0:.4e} s)", file=out)
        print(f"{'':>3} {'method1':>10} {'reported':>10} {'method2':>10} {'reported':>10}", file=out)
        for i in range(3):
            print(f"{i:>3} {m1.sigma_accumulated[i]:>10.4e} {exp['reported_method1'][i]:>10.4e} "
                  f"{m2.sigma_accumulated[i]:>10.4e} {exp['reported_method2'][i]:>10.4e}", file=out)
        if m2.flags:
            print(f"    method2 flags: {m2.flags}", file=out)
    print("reported values are shown for comparison only; they are not expected to match", file=out)
    return result


def cmd_hardware_report(args) -> int:
    hardware_report(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jitter-transfer", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate bit streams for each configured pair")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", help="output directory (default: config output_dir, else ./run)")
    s.add_argument("--n-bits", type=int)
    s.add_argument("--csv", action="store_true", help="also write index,bit CSV files")
    s.add_argument("--record-phases", action="store_true", help="keep unwrapped phases for the oracle")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("measure", help="estimate composite jitter per pair")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="directory written by 'simulate'")
    src.add_argument("--config", help="simulate in memory from this config")
    m.add_argument("--seed", type=int)
    m.add_argument("--method", choices=("bit-mle", "phase-oracle"), default="bit-mle")
    m.add_argument("--out", help="records JSON")
    m.add_argument("--csv", help="records CSV")
    m.set_defaults(func=cmd_measure)

    e = sub.add_parser("expected", help="noise-free records from the configured oscillators")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_expected)

    r = sub.add_parser("recover", help="individual volatilities from records")
    r.add_argument("--records", required=True, help="records JSON or CSV")
    r.add_argument("--method", choices=("1", "2"), default="2")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--periods", type=float, nargs="+", help="T_0 .. T_n in seconds")
    g.add_argument("--frequencies", type=float, nargs="+", help="f_0 .. f_n in Hz")
    r.add_argument("--compare", action="store_true", help="also run the other method and report differences")
    r.add_argument("--out", help="solution JSON")
    r.set_defaults(func=cmd_recover)

    d = sub.add_parser("diagnose", help="exact vs normal increment law")
    d.add_argument("--levels", type=float, nargs="+", default=[0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1])
    d.add_argument("--f-ratio", type=float, default=1.0)
    d.add_argument("--density-level", type=float, default=0.001)
    d.add_argument("--out-dir", default=".")
    d.set_defaults(func=cmd_diagnose)

    h = sub.add_parser("hardware-report", help="recovery on the bundled FPGA measurements")
    h.set_defaults(func=cmd_hardware_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationFailedError as e:
        print(f"estimation failed: {e}", file=sys.stderr)
        return EXIT_ESTIMATION
