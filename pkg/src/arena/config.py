"""Experiment configuration files.

An INI file (stdlib ``configparser``)::

    [experiment]
    kind = completeness          # see harness.EXPERIMENTS
    trials = 200
    seed = 1

    [instance]                   # instance text inline, or file = path.xz
    text =
        2 -2.5 -0.5
        -1 0 Z 1 X
        -1 0 Z
        -1 1 X

    [session]
    m = 8
    t = 1
    lwe = demo                   # demo | micro
    commit = standard            # standard | micro
    reps = 40
    backend = mpc                # mpc | debug
    round = random               # random | test | hadamard

    [witness]
    mode = product_labels        # ground_state | product_labels | rho_r_oracle
    labels = 0 +

    [arms]
    list = honest, prover:RandomOutcomes, verifier:TamperOutcomes:4

    [params]                     # free-form numbers for a suite
    eps = 0.01

Unknown keys produce warnings, not errors. Errors carry the config line number.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import commitment as cm
from . import etcff
from . import xz_hamiltonian as xz
from .emulation import WitnessError, WitnessSpec
from .protocol import SessionConfig

KNOWN_KEYS = {
    "experiment": {"kind", "trials", "seed", "workers"},
    "instance": {"file", "text"},
    "session": {"m", "t", "lwe", "commit", "reps", "backend", "round"},
    "witness": {"mode", "labels"},
    "arms": {"list"},
    "params": None,  # anything goes
}
COMMIT_PRESETS = {"standard": cm.STANDARD, "micro": cm.MICRO}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line, self.path = line, path
        where = ":".join(str(x) for x in (path, line) if x is not None)
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Arm:
    """One strategy pairing; 'honest' on both sides is the baseline."""

    prover: str = "honest"
    verifier: str = "honest"
    param: float | None = None

    @property
    def name(self) -> str:
        if self.prover == "honest" and self.verifier == "honest":
            return "honest"
        side, strat = ("prover", self.prover) if self.prover != "honest" else ("verifier", self.verifier)
        suffix = "" if self.param is None else f":{self.param:g}"
        return f"{side}:{strat}{suffix}"


PROVER_STRATEGIES = {"GuessR", "RandomOutcomes", "WrongPreimage"}
VERIFIER_STRATEGIES = {"BadTrapdoor", "MalformedKey", "TamperOutcomes", "BiasCoins"}


def parse_arm(spec: str) -> Arm:
    parts = [p.strip() for p in spec.split(":")]
    if parts == ["honest"]:
        return Arm()
    if len(parts) not in (2, 3) or parts[0] not in ("prover", "verifier"):
        raise ValueError(f"arm {spec!r} must be 'honest' or 'prover|verifier:Strategy[:param]'")
    known = PROVER_STRATEGIES if parts[0] == "prover" else VERIFIER_STRATEGIES
    if parts[1] not in known:
        raise ValueError(f"unknown {parts[0]} strategy {parts[1]!r}")
    param = float(parts[2]) if len(parts) == 3 else None
    if parts[1] == "TamperOutcomes" and (param is None or param != int(param) or param < 0):
        raise ValueError("TamperOutcomes needs a non-negative integer weight")
    if parts[1] == "GuessR" and (param is None or not 0 <= param <= 1):
        raise ValueError("GuessR needs a hit probability in [0, 1]")
    return Arm(parts[1], "honest", param) if parts[0] == "prover" else Arm("honest", parts[1], param)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    trials: int
    seed: int
    session: SessionConfig | None
    witness: WitnessSpec | None
    arms: tuple[Arm, ...] = (Arm(),)
    params: dict = field(default_factory=dict)
    workers: int = 1
    source: str = ""
    warnings: tuple[str, ...] = ()

    def digest(self) -> str:
        """Hash of the canonical config text, ignoring comments and whitespace."""
        return hashlib.sha256(self.source.encode()).hexdigest()[:16]


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    out: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, "")] = lineno
            continue
        m = re.match(r"([A-Za-z_][\w.-]*)\s*[=:]", line)
        if m and section:
            out.setdefault((section, m.group(1).lower()), lineno)
    return out


def _canonical(cp: configparser.ConfigParser) -> str:
    parts = []
    for sec in sorted(cp.sections()):
        for k in sorted(cp[sec]):
            v = "\n".join(x.strip() for x in cp[sec][k].strip().splitlines())
            parts.append(f"{sec}.{k}={v}")
    return "\n".join(parts)


def config_parse(text: str, base_dir: Path | str = ".", path: str | None = None) -> ExperimentConfig:
    lines = _key_lines(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), path) from exc

    warnings = []
    for sec in cp.sections():
        known = KNOWN_KEYS.get(sec, set())
        if sec not in KNOWN_KEYS:
            warnings.append(f"line {lines.get((sec, ''))}: unknown section [{sec}] ignored")
            continue
        for k in cp[sec]:
            if known is not None and k not in known:
                warnings.append(f"line {lines.get((sec, k))}: unknown key {sec}.{k} ignored")

    def get(sec: str, key: str, conv=str, default=None, required=False):
        if not cp.has_option(sec, key):
            if required:
                raise ConfigError(f"missing {sec}.{key}", lines.get((sec, "")), path)
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{sec}.{key}: {exc}", lines.get((sec, key)), path) from exc

    from .harness import EXPERIMENTS, NEEDS_SESSION

    kind = get("experiment", "kind", required=True)
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment kind {kind!r}", lines.get(("experiment", "kind")), path)
    trials = get("experiment", "trials", int, 1)
    seed = get("experiment", "seed", int, 0)
    workers = get("experiment", "workers", int, 1)
    if trials < 0 or workers < 1:
        raise ConfigError("trials must be >= 0 and workers >= 1", lines.get(("experiment", "")), path)

    instance = None
    if cp.has_section("instance"):
        instance = _load_instance(cp, lines, Path(base_dir), path)

    session = None
    if kind in NEEDS_SESSION:
        if instance is None:
            raise ConfigError(f"{kind} needs an [instance] section", None, path)
        rnd = get("session", "round", str, "random")
        if rnd not in ("random", "test", "hadamard"):
            raise ConfigError("round must be random, test or hadamard", lines.get(("session", "round")), path)
        try:
            session = SessionConfig(
                instance,
                m=get("session", "m", int, required=True),
                t=get("session", "t", int, 1),
                lwe=get("session", "lwe", lambda s: etcff.PRESETS[s.strip()], etcff.DEMO),
                commit=get("session", "commit", lambda s: COMMIT_PRESETS[s.strip()], cm.STANDARD),
                reps=get("session", "reps", int, 40),
                backend=get("session", "backend", str, "mpc"),
                force_round=None if rnd == "random" else rnd,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), lines.get(("session", "")), path) from exc
    witness = None
    if cp.has_section("witness"):
        labels = get("witness", "labels", lambda s: tuple(s.split()), None)
        witness = WitnessSpec(get("witness", "mode", str, "ground_state"), labels)
        if session is not None:
            try:
                witness.check(session.instance, session.m)
            except WitnessError as exc:
                raise ConfigError(str(exc), lines.get(("witness", "")), path) from exc

    arms: tuple[Arm, ...] = (Arm(),)
    if cp.has_option("arms", "list"):
        try:
            arms = tuple(parse_arm(s) for s in cp.get("arms", "list").replace("\n", ",").split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(str(exc), lines.get(("arms", "list")), path) from exc

    params: dict = {}
    if cp.has_section("params"):
        for k, v in cp["params"].items():
            try:
                params[k] = float(v) if any(ch in v for ch in ".eE") else int(v)
            except ValueError:
                params[k] = v.strip()
    if instance is not None and session is None:
        params["instance"] = instance

    return ExperimentConfig(kind, trials, seed, session, witness, arms, params, workers,
                            _canonical(cp), tuple(warnings))


def _load_instance(cp, lines, base_dir: Path, path: str | None) -> xz.XZHamiltonianInstance:
    sec = cp["instance"]
    if "file" in sec:
        f = base_dir / sec["file"].strip()
        try:
            body = f.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read instance file {f}: {exc.strerror}", lines.get(("instance", "file")), path)
        offset, where = 0, str(f)
    elif "text" in sec:
        body = sec["text"]
        offset, where = None, path
    else:
        raise ConfigError("[instance] needs file or text", lines.get(("instance", "")), path)
    try:
        return xz.validate_instance(body)
    except xz.InstanceError as exc:
        line = exc.line
        if offset is None:
            # map a line of the inline value back to the config file
            value_lines = body.splitlines()
            base = lines.get(("instance", "text"), 0)
            if line is None:
                line = next((i + 1 for i, s in enumerate(value_lines) if s.split("#")[0].strip()), 1)
            line = base + line - (1 if value_lines and not value_lines[0].strip() else 0)
        elif line is None:
            line = next((i + 1 for i, s in enumerate(body.splitlines()) if s.split("#")[0].strip()), 1)
        msg = str(exc).split(": ", 1)[-1] if exc.line is not None else str(exc)
        raise ConfigError(f"{type(exc).__name__}: {msg}", line, where) from exc


def config_load(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from exc
    return config_parse(text, p.parent, str(p))
