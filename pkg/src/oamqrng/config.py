"""Run configuration: flat ``section.key = value`` text with documented defaults.

Every key, its type and default is listed in :data:`FIELDS`.  Times are in
seconds, rates in Hz.  Lists are whitespace separated.  A file may start
from a preset (``run.preset = paper-2022``) and override individual keys.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import crosstalk
from .decoder import BinningScheme
from .simulator import DetectorConfig, FiberConfig, PulseTrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s.strip()


def _int(s: str) -> int:
    return int(float(s)) if "e" in s.lower() else int(s)


# key -> (parser, default as text, description)
FIELDS = {
    "run.seed": (_int, "2022", "RNG seed for the event simulator"),
    "profile.path": (_str, "", "crosstalk profile file; overrides the inline profile"),
    "profile.input_ell": (int, "-5", "input OAM charge of the inline profile"),
    "profile.ells": (_ints, "-6 -5 -4 -3", "inline output modes in arrival order"),
    "profile.probabilities": (_floats, "0.25 0.25 0.25 0.25", "inline weights, normalized on load"),
    "pulse.repetition_rate": (float, "12.5e6", "pulse repetition rate, Hz"),
    "pulse.pulse_width": (float, "2e-9", "optical pulse width, s"),
    "pulse.n_pulses": (_int, "1500000", "number of pulses simulated"),
    "fiber.length": (float, "800", "ring-core fiber length, m"),
    "fiber.adjacent_mode_delay": (float, "10e-9", "arrival separation of adjacent modes, s"),
    "fiber.base_delay": (float, "0", "common fiber transit delay, s"),
    "detector.eta_det": (float, "0.83", "detection efficiency"),
    "detector.dark_rate": (float, "50", "dark count rate, 1/s"),
    "detector.jitter_sigma": (float, "50e-12", "Gaussian timing jitter, s"),
    "detector.timestamp_resolution": (float, "1e-12", "TDC resolution, s"),
    "decoder.bin_width": (float, "4e-9", "time-bin width, s"),
    "decoder.calibrate": (_bool, "true", "calibrate bin centers from the data (else nominal offsets)"),
    "entropy.delta": (float, "1e-10", "confidence parameter of the entropy lower bound"),
    "entropy.block_pulses": (_int, "65536", "pulses per laser-power side-information block"),
    "entropy.branches": (_int, "4", "side-information branches (power quantiles)"),
    "extract.block_bits": (_int, "1048576", "Toeplitz input block length n, bits"),
    "extract.eps_sec": (float, "1e-200", "extractor security parameter"),
    "extract.seed": (_int, "0", "seed value for the public Toeplitz seed"),
    "battery.enabled": (_bool, "true", "run the statistical battery"),
    "battery.workers": (_int, "1", "threads for the battery"),
    "semidi.model": (_str, "", "semi-DI model file (empty: skip semi-DI analysis)"),
    "semidi.observed": (_str, "", "observed count files, whitespace separated"),
    "semidi.tau": (float, "0.01", "ambiguity threshold"),
    "semidi.tolerance": (float, "0.01", "total-variation tolerance of the guessing bound"),
    "semidi.alarm_level": (float, "0.01", "tamper-test alarm level"),
    "figures.enabled": (_bool, "true", "render PNG figures next to the reports"),
}

PRESETS = {
    "default": {},
    # Parameter set of the 800 m ring-core fiber experiment.
    "paper-2022": {
        "pulse.repetition_rate": "12.5e6",
        "pulse.pulse_width": "2e-9",
        "fiber.length": "800",
        "fiber.adjacent_mode_delay": "10e-9",
        "detector.eta_det": "0.83",
        "detector.dark_rate": "50",
        "detector.timestamp_resolution": "1e-12",
        "profile.input_ell": "-5",
        "profile.probabilities": "0.25 0.25 0.25 0.25",
        "extract.eps_sec": "1e-200",
    },
}


@dataclass
class RunConfig:
    values: dict  # key -> parsed value
    raw: dict  # key -> text, for echoing
    preset: str = "default"

    def __getitem__(self, key):
        return self.values[key]

    # -- module configs ------------------------------------------------------

    def profile(self) -> crosstalk.CrosstalkProfile:
        path = self["profile.path"]
        if path:
            return crosstalk.load_profile(path)
        ells, probs = self["profile.ells"], self["profile.probabilities"]
        if len(ells) != len(probs):
            raise ConfigError("profile.probabilities", f"{len(probs)} values for {len(ells)} modes")
        try:
            return crosstalk.CrosstalkProfile.from_weights(self["profile.input_ell"], ells, probs)
        except ValueError as exc:
            raise ConfigError("profile.probabilities", str(exc)) from exc

    def pulse_train(self) -> PulseTrainConfig:
        return PulseTrainConfig(self["pulse.repetition_rate"], self["pulse.pulse_width"], self["pulse.n_pulses"])

    def fiber(self) -> FiberConfig:
        return FiberConfig(self["fiber.length"], self["fiber.adjacent_mode_delay"], self["fiber.base_delay"])

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            self["detector.eta_det"],
            self["detector.dark_rate"],
            self["detector.jitter_sigma"],
            self["detector.timestamp_resolution"],
        )

    @property
    def period_ps(self) -> int:
        return int(round(1e12 / self["pulse.repetition_rate"]))

    @property
    def bin_width_ps(self) -> float:
        return self["decoder.bin_width"] * 1e12

    def nominal_scheme(self, d: int) -> BinningScheme:
        base = self["fiber.base_delay"] * 1e12
        step = self["fiber.adjacent_mode_delay"] * 1e12
        centers = [base + k * step for k in range(d)]
        return BinningScheme(self.period_ps, tuple(centers), self.bin_width_ps)

    def semidi_observed(self) -> list:
        return self["semidi.observed"].split()

    def echo(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in FIELDS)

    # -- validation ----------------------------------------------------------

    def validate(self) -> "RunConfig":
        rate = self["pulse.repetition_rate"]
        field_checks = [
            ("pulse.repetition_rate", rate > 0, "must be positive"),
            ("pulse.pulse_width", rate > 0 and 0 <= self["pulse.pulse_width"] < 1 / rate, "must lie in [0, period)"),
            ("pulse.n_pulses", self["pulse.n_pulses"] >= 1, "must be >= 1"),
            ("detector.eta_det", 0 <= self["detector.eta_det"] <= 1, "must lie in [0, 1]"),
            ("detector.dark_rate", self["detector.dark_rate"] >= 0, "must be >= 0"),
            ("detector.jitter_sigma", self["detector.jitter_sigma"] >= 0, "must be >= 0"),
            ("detector.timestamp_resolution", self["detector.timestamp_resolution"] > 0, "must be positive"),
        ]
        for key, ok, message in field_checks:
            if not ok:
                raise ConfigError(key, message)
        try:
            self.detector().resolution_ps
        except ValueError as exc:
            raise ConfigError("detector.timestamp_resolution", str(exc)) from exc
        if self["profile.path"] and not Path(self["profile.path"]).is_file():
            raise ConfigError("profile.path", f"no such file: {self['profile.path']}")
        try:
            d = len(self.profile().outputs)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("profile.path" if self["profile.path"] else "profile.probabilities", str(exc)) from exc
        try:
            self.fiber().check(self.pulse_train(), d)
        except ValueError as exc:
            raise ConfigError("fiber.adjacent_mode_delay", str(exc)) from exc
        if not 0 < self.bin_width_ps <= self.period_ps:
            raise ConfigError("decoder.bin_width", "must lie in (0, pulse period]")
        if not 0 < self["entropy.delta"] < 1:
            raise ConfigError("entropy.delta", "must lie in (0, 1)")
        if self["entropy.block_pulses"] < 1:
            raise ConfigError("entropy.block_pulses", "must be >= 1")
        if self["entropy.branches"] < 1:
            raise ConfigError("entropy.branches", "must be >= 1")
        if self["extract.block_bits"] < 2:
            raise ConfigError("extract.block_bits", "must be >= 2")
        if not 0 < self["extract.eps_sec"] < 1:
            raise ConfigError("extract.eps_sec", "must lie in (0, 1)")
        if not 0 < self["semidi.tau"] <= 1:
            raise ConfigError("semidi.tau", "must lie in (0, 1]")
        if self["semidi.tolerance"] < 0:
            raise ConfigError("semidi.tolerance", "must be >= 0")
        if not 0 < self["semidi.alarm_level"] < 1:
            raise ConfigError("semidi.alarm_level", "must lie in (0, 1)")
        for key in ("profile.path", "semidi.model"):
            if self[key] and not Path(self[key]).is_file():
                raise ConfigError(key, f"no such file: {self[key]}")
        for p in self.semidi_observed():
            if not Path(p).is_file():
                raise ConfigError("semidi.observed", f"no such file: {p}")
        return self


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` and ``;`` start comments."""
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    cp.read_string("[config]\n" + text)
    return dict(cp["config"])


def build_config(
    text: str | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Layer defaults, preset, config text and overrides, then parse every field."""
    file_values = parse_config_text(text) if text else {}
    preset = preset or file_values.pop("run.preset", None) or "default"
    file_values.pop("run.preset", None)
    if preset not in PRESETS:
        raise ConfigError("run.preset", f"unknown preset {preset!r} (known: {', '.join(PRESETS)})")
    raw = {k: default for k, (_, default, _) in FIELDS.items()}
    raw.update(PRESETS[preset])
    for layer in (file_values, overrides or {}):
        for k, v in layer.items():
            if k not in FIELDS:
                raise ConfigError(k, "unknown configuration key")
            raw[k] = str(v)
    values = {}
    for k, (parse, _, _) in FIELDS.items():
        try:
            values[k] = parse(raw[k])
        except ValueError as exc:
            raise ConfigError(k, f"cannot parse {raw[k]!r}: {exc}") from exc
    return RunConfig(values, raw, preset)


def load_config(path=None, preset=None, overrides=None) -> RunConfig:
    text = Path(path).read_text() if path else None
    return build_config(text, preset, overrides)


def to_flat_text(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def from_flat_text(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def nominal_distribution(cfg: RunConfig) -> crosstalk.OutcomeDistribution:
    prof = cfg.profile()
    return crosstalk.superpose(prof.input_mode, prof)


def expected_click_probability(cfg: RunConfig) -> np.ndarray:
    """Per-bin click probability of the configured source with dark counts as spurious clicks."""
    dist = nominal_distribution(cfg)
    eps = cfg["detector.dark_rate"] * cfg["decoder.bin_width"]
    ch = crosstalk.ChannelParams(cfg["detector.eta_det"], eps, dist.d)
    return np.array([crosstalk.click_probability(j, dist, ch) for j in range(1, dist.d + 1)])
