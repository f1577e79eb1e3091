"""Stage commands and their composition into a full run.

Every stage reads its inputs from files, writes its artifacts into the output
directory and returns a flat summary dict.  ``cmd_run_all`` calls the same
stage functions in order, so staged and composed runs produce identical
artifacts.  Wall-clock figures live only under ``timing.*`` in the run report.
"""

from __future__ import annotations

import logging
import platform
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, crosstalk, decoder, entropy, semidi, simulator, stattests, toeplitz
from .config import RunConfig, expected_click_probability, from_flat_text, to_flat_text

logger = logging.getLogger(__name__)

EVENTS = "events.oamq"
TRUTH = "truth.bin"
SYMBOLS = "symbols.oams"
ENTROPY = "entropy.kv"
BITS = "bits.bin"
EXTRACT = "extract.kv"
BATTERY_TXT = "battery.txt"
BATTERY_KV = "battery.kv"
SEMIDI_KV = "semidi.kv"
SEMIDI_TXT = "semidi.txt"
FIGURES = "figures"


class StageError(RuntimeError):
    """A stage failed; ``stage`` names it for the exit code."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_kv(path, values: dict) -> None:
    Path(path).write_text(to_flat_text({k: _fmt(v) for k, v in values.items()}))


def read_kv(path) -> dict:
    return from_flat_text(Path(path).read_text())


def _figdir(cfg: RunConfig, out: Path) -> Path | None:
    if not cfg["figures.enabled"]:
        return None
    d = out / FIGURES
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- stages ------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    prof = cfg.profile()
    dist = crosstalk.superpose(prof.input_mode, prof)
    try:
        res = simulator.simulate_events(dist, cfg.pulse_train(), cfg.fiber(), cfg.detector(), cfg["run.seed"])
    except ValueError as exc:
        raise StageError("simulate", str(exc)) from exc
    simulator.write_event_log(out / EVENTS, res.events, res.metadata["resolution_ps"])
    simulator.write_ground_truth(out / TRUTH, res.ground_truth)
    summary = {
        "simulate.rng_algorithm": res.metadata["rng_algorithm"],
        "simulate.rng_seed": res.metadata["rng_seed"],
        "simulate.n_pulses": res.metadata["n_pulses"],
        "simulate.n_events": int(len(res.events)),
        "simulate.n_signal": res.metadata["n_signal"],
        "simulate.n_dark": res.metadata["n_dark"],
        "simulate.input_ell": prof.input_mode.ell,
        "simulate.output_ells": list(prof.ells),
        "simulate.probabilities": [float(p) for p in prof.probabilities],
    }
    write_kv(out / "simulate.kv", summary)
    return summary


def cmd_decode(cfg: RunConfig, out, events_path=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    events_path = Path(events_path) if events_path else out / EVENTS
    try:
        events, res_ps = simulator.read_event_log(events_path)
    except (OSError, ValueError) as exc:
        raise StageError("decode", str(exc)) from exc
    d = len(cfg.profile().outputs)
    try:
        if cfg["decoder.calibrate"]:
            scheme = decoder.calibrate_bins(events, cfg.period_ps, d, cfg.bin_width_ps, resolution=res_ps)
        else:
            scheme = cfg.nominal_scheme(d)
        codes = decoder.decode(events, scheme, cfg["pulse.n_pulses"])
    except (decoder.CalibrationError, ValueError) as exc:
        raise StageError("decode", str(exc)) from exc
    decoder.write_symbols(out / SYMBOLS, codes, d)

    counts = decoder.symbol_counts(codes, d)
    n = len(codes)
    summary = {
        "decode.d": d,
        "decode.n_pulses": n,
        "decode.bin_centers_ps": [float(c) for c in scheme.bin_centers],
        "decode.bin_width_ps": float(scheme.bin_width),
        "decode.symbol_counts": [int(c) for c in counts],
        "decode.click_frequency": [float(c / n) for c in counts],
        "decode.expected_click_probability": [float(p) for p in expected_click_probability(cfg)],
    }
    summary.update({f"decode.{k}": v for k, v in decoder.discard_counts(codes).items()})
    write_kv(out / "decode.kv", summary)
    figs = _figdir(cfg, out)
    if figs is not None:
        from . import plotting

        plotting.arrival_histogram(events, scheme, figs / "arrival_histogram.png")
    return summary


def cmd_estimate(cfg: RunConfig, out, symbols_path=None) -> entropy.EntropyReport:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    symbols_path = Path(symbols_path) if symbols_path else out / SYMBOLS
    try:
        codes, d = decoder.read_symbols(symbols_path)
        labels, branches = entropy.power_partition(
            codes, d, cfg["entropy.block_pulses"], cfg["entropy.branches"]
        )
        report = entropy.conditional_hmin_bound(branches, cfg["entropy.delta"])
    except (OSError, ValueError) as exc:
        raise StageError("estimate", str(exc)) from exc
    counts = decoder.symbol_counts(codes, d)
    marginal = entropy.EmpiricalDistribution(tuple(int(c) for c in counts))
    values = {f"entropy.{k}": v for k, v in report.as_dict().items()}
    values["entropy.hmin_marginal"] = entropy.min_entropy(marginal.probs)
    values["entropy.side_info"] = "power-quantile"
    values["entropy.branch_labels"] = labels
    values["entropy.branch_sizes"] = [b.total for b in branches]
    write_kv(out / ENTROPY, values)
    figs = _figdir(cfg, out)
    if figs is not None:
        from . import plotting

        prof = cfg.profile()
        expected = expected_click_probability(cfg)
        plotting.symbol_distribution(
            counts, figs / "symbol_distribution.png", expected / expected.sum(), labels=prof.ells
        )
    return report


def read_entropy_report(path) -> entropy.EntropyReport:
    kv = read_kv(path)
    return entropy.EntropyReport.from_dict({k.split(".", 1)[1]: v for k, v in kv.items() if k.startswith("entropy.")})


def cmd_extract(cfg: RunConfig, out, symbols_path=None, entropy_path=None) -> tuple[dict, dict]:
    """Returns ``(metadata, timing)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    symbols_path = Path(symbols_path) if symbols_path else out / SYMBOLS
    entropy_path = Path(entropy_path) if entropy_path else out / ENTROPY
    try:
        codes, d = decoder.read_symbols(symbols_path)
        report = read_entropy_report(entropy_path)
        res = toeplitz.extract_stream(
            codes, report, cfg["extract.seed"], cfg["extract.eps_sec"], cfg["extract.block_bits"]
        )
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("extract", str(exc)) from exc
    toeplitz.write_bits(out / BITS, res.bits)
    meta = dict(res.metadata)
    seconds = meta.pop("hash_seconds")
    values = {f"extract.{k}": v for k, v in meta.items()}
    write_kv(out / EXTRACT, values)
    timing = {"timing.extract_hash_seconds": seconds}
    if seconds > 0:
        timing["timing.extract_output_mbit_per_s"] = meta["output_bits"] / seconds / 1e6
    return values, timing


def cmd_test(cfg: RunConfig, out, bits_path=None, n_bits=None) -> stattests.TestReport:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    bits_path = Path(bits_path) if bits_path else out / BITS
    if n_bits is None:
        sidecar = bits_path.with_name(EXTRACT)
        if sidecar.is_file():
            n_bits = int(read_kv(sidecar).get("extract.output_bits", 0)) or None
    try:
        bits = toeplitz.read_bits(bits_path, n_bits)
        report = stattests.run_battery(bits, cfg["battery.workers"])
    except (OSError, ValueError) as exc:
        raise StageError("test", str(exc)) from exc
    (out / BATTERY_TXT).write_text(stattests.format_table(report))
    (out / BATTERY_KV).write_text(
        stattests.format_records(report) + f"battery.passed = {int(report.passed)}\n"
    )
    figs = _figdir(cfg, out)
    if figs is not None:
        from . import plotting

        plotting.pvalues(report, figs / "battery_pvalues.png")
    return report


def cmd_semidi(cfg: RunConfig, out, model_path=None, observed_paths=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = model_path or cfg["semidi.model"]
    observed_paths = cfg.semidi_observed() if observed_paths is None else list(observed_paths)
    try:
        model = semidi.load_model(model_path) if model_path else semidi.two_input_toy_model()
        amb = semidi.ambiguity_set(model, cfg["semidi.tau"])
        bound = semidi.adversary_guess_bound(model, cfg["semidi.tolerance"])
        values = {
            "semidi.model": str(model_path) if model_path else "builtin:two-input-toy",
            "semidi.inputs": list(model.inputs),
            "semidi.outcomes": list(model.outcomes),
            "semidi.tau": cfg["semidi.tau"],
            "semidi.ambiguity_set": [o for o in model.outcomes if o in amb.outcomes] or "none",
            "semidi.tolerance": bound.tolerance,
            "semidi.p_guess": bound.p_guess,
            "semidi.certified_bits": bound.certified_bits,
            "semidi.no_click": [float(x) for x in model.no_click],
        }
        if observed_paths:
            observed = None
            for p in observed_paths:
                obs = semidi.parse_observed(Path(p).read_text(), model)
                observed = obs if observed is None else [
                    entropy.EmpiricalDistribution(tuple(a + b for a, b in zip(x.counts, y.counts)))
                    for x, y in zip(observed, obs)
                ]
            tamper = semidi.tamper_test(model, observed, cfg["semidi.alarm_level"])
            values.update(
                {
                    "semidi.tamper_statistics": list(tamper.statistics),
                    "semidi.tamper_dof": list(tamper.dofs),
                    "semidi.tamper_p_value": tamper.p_value,
                    "semidi.alarm_level": tamper.alarm_level,
                    "semidi.verdict": tamper.verdict,
                }
            )
    except (OSError, ValueError) as exc:
        raise StageError("semidi", str(exc)) from exc
    write_kv(out / SEMIDI_KV, values)
    lines = [
        "Seeded multi-input analysis",
        f"  inputs            {' '.join(map(str, model.inputs))}",
        f"  ambiguity set     {_fmt(values['semidi.ambiguity_set'])}   (tau = {cfg['semidi.tau']:g})",
        f"  guess probability {bound.p_guess:.6f}   (TV tolerance {bound.tolerance:g})",
        f"  certified bits    {bound.certified_bits:.6f} per click",
    ]
    if "semidi.verdict" in values:
        lines.append(f"  tamper test       p = {values['semidi.tamper_p_value']:.4g} -> {values['semidi.verdict']}")
    lines.append("The guessing bound is a linear-programming formalization, not a device-independent proof.")
    (out / SEMIDI_TXT).write_text("\n".join(lines) + "\n")
    figs = _figdir(cfg, out)
    if figs is not None:
        from . import plotting

        plotting.semidi_rows(model, amb.outcomes, figs / "semidi_rows.png")
    return values


# -- composition -------------------------------------------------------------


def versions() -> dict:
    return {
        "versions.oamqrng": __version__,
        "versions.python": platform.python_version(),
        "versions.numpy": np.__version__,
        "versions.scipy": scipy.__version__,
        "versions.fft_backend": "pyfftw" if toeplitz.pyfftw is not None else "scipy.fft",
    }


def cmd_run_all(cfg: RunConfig, out) -> dict:
    """Run every stage in order and write ``report.kv`` and ``report.txt``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.echo())
    report = {"run.preset": cfg.preset}
    report.update({f"config.{k}": v for k, v in from_flat_text(cfg.echo()).items()})
    report.update(versions())
    timing = {}

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        result = fn(*args)
        timing[f"timing.{name}_seconds"] = time.perf_counter() - t0
        return result

    report.update(timed("simulate", cmd_simulate, cfg, out))
    report.update(timed("decode", cmd_decode, cfg, out))
    ent = timed("estimate", cmd_estimate, cfg, out)
    report.update(read_kv(out / ENTROPY))
    meta, t_extract = timed("extract", cmd_extract, cfg, out)
    report.update(meta)
    timing.update(t_extract)
    battery = None
    if cfg["battery.enabled"]:
        if meta["extract.output_bits"] < stattests.BATTERY_MIN_BITS:
            report["battery.status"] = (
                f"skipped: {meta['extract.output_bits']} extracted bits, battery needs {stattests.BATTERY_MIN_BITS}"
            )
        else:
            battery = timed("test", cmd_test, cfg, out)
            report["battery.status"] = "passed" if battery.passed else "failed: " + " ".join(battery.failures())
            for e in battery.entries:
                report[f"battery.{e.name}.p_value"] = e.p_value
    else:
        report["battery.status"] = "disabled"
    if cfg["semidi.model"]:
        report.update(timed("semidi", cmd_semidi, cfg, out))
    report.update(timing)
    write_kv(out / "report.kv", report)
    (out / "report.txt").write_text(format_report(report, ent, battery))
    return report


def format_report(report: dict, ent: entropy.EntropyReport, battery) -> str:
    g = report.get
    lines = [
        "OAM crosstalk QRNG run report",
        "=" * 40,
        f"preset               {g('run.preset')}",
        f"pulses               {g('simulate.n_pulses')}",
        f"events               {g('simulate.n_events')} ({g('simulate.n_dark')} dark)",
        f"valid symbols        {sum(g('decode.symbol_counts', []))}",
        f"discards             no_click={g('decode.no_click')} multi_click={g('decode.multi_click')} "
        f"out_of_bin={g('decode.out_of_bin')}",
        f"click frequency      {' '.join(f'{x:.5f}' for x in g('decode.click_frequency', []))}",
        f"model prediction     {' '.join(f'{x:.5f}' for x in g('decode.expected_click_probability', []))}",
        "",
        f"H_min point          {ent.hmin_point:.6f} bits/symbol ({ent.n_branches} side-info branches)",
        f"H_min lower bound    {ent.hmin_lower_bound:.6f} bits/symbol at delta={ent.delta:g}",
        f"entropy per raw bit  {ent.rate_per_bit:.6f}",
        "",
        f"extractor            n={g('extract.n')} m={g('extract.m')} eps={g('extract.eps_sec')!r} "
        f"seed={g('extract.seed_id')}",
        f"extracted bits       {g('extract.output_bits')} from {g('extract.blocks')} blocks",
        f"battery              {g('battery.status')}",
    ]
    if "semidi.p_guess" in report:
        lines += [
            "",
            f"semi-DI ambiguity    {_fmt(g('semidi.ambiguity_set'))}",
            f"semi-DI P_guess      {g('semidi.p_guess'):.6f} ({g('semidi.certified_bits'):.6f} bits)",
        ]
        if "semidi.verdict" in report:
            lines.append(f"tamper verdict       {g('semidi.verdict')}")
    if battery is not None:
        lines += ["", stattests.format_table(battery).rstrip()]
    lines += ["", "timing"]
    lines += [f"  {k[len('timing.'):]:<28}{v:.3f}" for k, v in report.items() if k.startswith("timing.")]
    return "\n".join(lines) + "\n"
