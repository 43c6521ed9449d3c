"""Experiment suites, statistics and reports.

Every trial gets its own seed ``trial_seed(seed, index)``, so a trial's
transcript does not depend on how many trials run or on which worker runs it.
Reports are data: per-trial records, aggregate rates with Wilson intervals,
and named pass/fail checks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np
from scipy import stats

from . import commitment as cm
from . import etcff, npzk, predicates, qsim, steane
from . import rng as arena_rng
from . import xz_hamiltonian as xz
from .config import Arm, ExperimentConfig
from .emulation import (
    GuessR, HonestProver, RandomOutcomes, TrapdoorOracle, WrongPreimage, make_verifier,
)
from .protocol import SessionResult, run_session, session_public
from .wire import CommitStrings, HadamardReveal, ProverCoins, TestReveal, frame_decode
from .zksim import Simulator

SCHEMA_VERSION = 1
log = logging.getLogger("arena")
if os.environ.get("ARENA_LOG"):
    logging.basicConfig(level=os.environ["ARENA_LOG"].upper())


# ---- statistics ----------------------------------------------------------------


def rate(k: int, n: int) -> dict:
    """Proportion with a 95% Wilson score interval."""
    if n == 0:
        return {"k": 0, "n": 0, "rate": None, "ci_low": None, "ci_high": None}
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return {"k": int(k), "n": int(n), "rate": k / n, "ci_low": float(ci.low), "ci_high": float(ci.high)}


def two_sample_chi2(a: list, b: list) -> float:
    """p-value that two categorical samples share a distribution (1.0 if degenerate)."""
    cats = sorted(set(a) | set(b))
    if len(cats) < 2 or not a or not b:
        return 1.0
    index = {c: i for i, c in enumerate(cats)}
    table = np.zeros((2, len(cats)))
    for row, sample in enumerate((a, b)):
        np.add.at(table[row], [index[c] for c in sample], 1)
    return float(stats.chi2_contingency(table)[1])


def battery(fields: dict[str, tuple[list, list]]) -> dict:
    """Per-field chi-square p-values and their Fisher combination."""
    ps = {name: two_sample_chi2(a, b) for name, (a, b) in sorted(fields.items())}
    combined = float(stats.combine_pvalues(list(ps.values()), method="fisher")[1]) if ps else 1.0
    return {"fields": ps, "combined_p": combined}


def proportions_agree(k1: int, k2: int, n: int, sigmas: float = 3.0) -> tuple[bool, float]:
    """|p1 - p2| within `sigmas` pooled standard errors; returns (agree, z)."""
    p1, p2 = k1 / n, k2 / n
    pooled = (k1 + k2) / (2 * n)
    se = np.sqrt(pooled * (1 - pooled) * 2 / n)
    if se == 0:
        return k1 == k2, 0.0
    z = abs(p1 - p2) / se
    return bool(z <= sigmas), float(z)


# ---- reports ---------------------------------------------------------------------


@dataclass
class ExperimentReport:
    experiment: str
    config_digest: str
    seed: int
    trials: int
    records: list[dict]
    aggregates: dict
    checks: list[dict]
    wall_time: float = 0.0
    schema_version: int = SCHEMA_VERSION
    transcript_jsonl: str = field(default="", repr=False)
    transcript_sha256: str = ""

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def check(self, name: str) -> dict:
        return next(c for c in self.checks if c["name"] == name)

    def to_dict(self, include_wall_time: bool = False) -> dict:
        d = {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "trials": self.trials,
            "transcript_sha256": self.transcript_sha256,
            "aggregates": self.aggregates,
            "checks": self.checks,
            "records": self.records,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "experiment", "config_digest", "seed", "trials", "aggregates", "checks", "records"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"type": "string"},
        "config_digest": {"type": "string"},
        "seed": {"type": "integer"},
        "trials": {"type": "integer", "minimum": 0},
        "transcript_sha256": {"type": "string", "pattern": "^([0-9a-f]{64})?$"},
        "aggregates": {"type": "object"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "passed", "detail"],
                "properties": {"name": {"type": "string"}, "passed": {"type": "boolean"}, "detail": {"type": "string"}},
            },
        },
        "records": {"type": "array", "items": {"type": "object"}},
        "wall_time": {"type": "number"},
    },
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def report_render(report: ExperimentReport, fmt: str = "json", include_wall_time: bool = False) -> bytes:
    """JSON and CSV omit wall time unless asked, so reruns compare byte for byte."""
    if fmt == "json":
        return (json.dumps(_jsonable(report.to_dict(include_wall_time)), indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        cols: list[str] = []
        for r in report.records:
            cols.extend(k for k in r if k not in cols)
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in report.records:
            w.writerow(_jsonable(r))
        return buf.getvalue().encode()
    if fmt == "text":
        lines = [f"{report.experiment}  trials={report.trials}  seed={report.seed}  config={report.config_digest}"]
        for name, agg in _flat_rates(report.aggregates):
            lines.append(f"  {name}: {agg['rate']:.4f} ± {(agg['ci_high'] - agg['ci_low']) / 2:.4f}"
                         f"  [{agg['ci_low']:.4f}, {agg['ci_high']:.4f}]  ({agg['k']}/{agg['n']})")
        for c in report.checks:
            lines.append(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['detail']}")
        lines.append(f"  wall time {report.wall_time:.1f}s")
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")


def _flat_rates(agg: dict, prefix: str = ""):
    for k, v in agg.items():
        if isinstance(v, dict) and "rate" in v and "k" in v:
            if v["rate"] is not None:
                yield prefix + k, v
        elif isinstance(v, dict):
            yield from _flat_rates(v, f"{prefix}{k}.")


def report_from_json(data: bytes | str) -> ExperimentReport:
    d = json.loads(data)
    jsonschema.validate(d, REPORT_SCHEMA)
    return ExperimentReport(d["experiment"], d["config_digest"], d["seed"], d["trials"], d["records"],
                            d["aggregates"], d["checks"], d.get("wall_time", 0.0), d["schema_version"],
                            transcript_sha256=d.get("transcript_sha256", ""))


# ---- trial plumbing ------------------------------------------------------------


@dataclass
class TrialOutput:
    record: dict
    transcripts: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _envelopes(res: SessionResult, trial: int, arm: str, side: str) -> list[str]:
    out = []
    for e in res.transcript:
        d = json.loads(e.to_json())
        d.update(trial=trial, arm=arm, side=side)
        out.append(json.dumps(d, sort_keys=True))
    return out


def _check(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def run_arm(cfg: ExperimentConfig, arm: Arm, ts: int, simulate: bool = False):
    """One session for a strategy pairing; returns (result, prover, verifier)."""
    pub = session_public(cfg.session, ts)
    v = make_verifier(arm.verifier, pub, arena_rng.derive_seed(ts, "verifier"), int(arm.param or 0))
    pseed = arena_rng.derive_seed(ts, "prover")
    oracle = TrapdoorOracle(v)
    if simulate:
        p = Simulator(pub, v, arena_rng.derive_seed(ts, "simulator"))
    elif arm.prover == "honest":
        p = HonestProver(pub, cfg.witness, oracle, pseed)
    elif arm.prover == "GuessR":
        p = GuessR(pub, oracle, pseed, float(arm.param))
    elif arm.prover == "RandomOutcomes":
        p = RandomOutcomes(pub, oracle, pseed)
    elif arm.prover == "WrongPreimage":
        p = WrongPreimage(pub, cfg.witness, oracle, pseed)
    else:
        raise ValueError(f"unknown prover strategy {arm.prover!r}")
    return run_session(p, v, pub), p, v


def _session_record(prefix: str, res: SessionResult) -> dict:
    return {
        f"{prefix}accept": res.accept,
        f"{prefix}round": res.round,
        f"{prefix}abort": res.prover_abort or "",
        f"{prefix}decode_failures": res.decode_failures,
    }


# ---- completeness ------------------------------------------------------------------


def _completeness_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    ts = arena_rng.trial_seed(cfg.seed, i)
    res, _, _ = run_arm(cfg, Arm(), ts)
    return TrialOutput({"trial": i, **_session_record("", res)}, _envelopes(res, i, "honest", "real"))


def _completeness_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    n = len(recs)
    acc = rate(sum(r["accept"] for r in recs), n)
    by_round = {}
    for rnd in ("test", "hadamard"):
        sub = [r for r in recs if r["round"] == rnd]
        by_round[rnd] = rate(sum(r["accept"] for r in sub), len(sub))
    agg = {"accept": acc, "by_round": by_round,
           "decode_failures": int(sum(r["decode_failures"] for r in recs))}
    checks = []
    if "min_accept" in cfg.params:
        thr = float(cfg.params["min_accept"])
        checks.append(_check("acceptance", n > 0 and acc["rate"] >= thr, f"{acc['k']}/{n} accepted, need >= {thr}"))
    return agg, checks


# ---- cheating strategies -------------------------------------------------------------


def _soundness_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    ts = arena_rng.trial_seed(cfg.seed, i)
    rec: dict = {"trial": i}
    lines: list[str] = []
    for k, arm in enumerate(cfg.arms):
        res, _, _ = run_arm(cfg, arm, arena_rng.trial_seed(ts, k))
        rec.update(_session_record(arm.name + ".", res))
        lines += _envelopes(res, i, arm.name, "real")
    return TrialOutput(rec, lines)


def _arm_rates(recs: list[dict], name: str) -> dict:
    def col(key):
        return [r[f"{name}.{key}"] for r in recs]

    accept, rnd, abort = col("accept"), col("round"), col("abort")
    test = [a for a, r in zip(accept, rnd) if r == "test"]
    had = [(a, ab) for a, r, ab in zip(accept, rnd, abort) if r == "hadamard"]
    reasons: dict[str, int] = {}
    for ab in abort:
        if ab:
            reasons[ab] = reasons.get(ab, 0) + 1
    return {
        "accept": rate(sum(accept), len(accept)),
        "test_reject": rate(sum(not a for a in test), len(test)),
        "hadamard_accept": rate(sum(a for a, _ in had), len(had)),
        "hadamard_abort": rate(sum(bool(ab) for _, ab in had), len(had)),
        "abort_reasons": dict(sorted(reasons.items())),
    }


def _soundness_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    agg = {arm.name: _arm_rates(recs, arm.name) for arm in cfg.arms}
    checks = []
    honest = agg.get("honest")
    for arm in cfg.arms:
        a = agg[arm.name]
        if arm.verifier in ("BadTrapdoor", "MalformedKey"):
            k = a["abort_reasons"].get("TrapdoorInvalid", 0)
            n = a["hadamard_abort"]["n"]
            checks.append(_check(f"{arm.name} caught", n > 0 and k == n,
                                 f"TrapdoorInvalid in {k}/{n} Hadamard rounds"))
        if arm.verifier == "BiasCoins":
            k = a["abort_reasons"].get("CoinOpenInvalid", 0)
            n = a["hadamard_abort"]["n"]
            checks.append(_check(f"{arm.name} caught", n > 0 and k == n, f"CoinOpenInvalid in {k}/{n} Hadamard rounds"))
        if arm.prover == "RandomOutcomes":
            thr = float(cfg.params.get("min_test_reject", 0.99))
            tr = a["test_reject"]
            checks.append(_check(f"{arm.name} policed", tr["n"] > 0 and tr["rate"] >= thr,
                                 f"{tr['k']}/{tr['n']} test rounds rejected, need >= {thr}"))
        if arm.prover == "WrongPreimage":
            tr = a["test_reject"]
            checks.append(_check(f"{arm.name} policed", tr["n"] > 0 and tr["k"] == tr["n"],
                                 f"{tr['k']}/{tr['n']} test rounds rejected"))
        if arm.prover == "GuessR" and honest is not None:
            checks.append(_check(f"{arm.name} below honest", a["accept"]["rate"] <= honest["accept"]["rate"],
                                 f"{a['accept']['rate']:.4f} vs honest {honest['accept']['rate']:.4f}"))
    checks += _tamper_checks(cfg, {arm.name: agg[arm.name]["hadamard_abort"] for arm in cfg.arms}, "abort")
    return agg, checks


def _tamper_checks(cfg, abort_rates: dict[str, dict], label: str) -> list[dict]:
    tamper = sorted((int(arm.param), arm.name) for arm in cfg.arms if arm.verifier == "TamperOutcomes")
    checks = []
    if not tamper:
        return checks
    rates = [abort_rates[name]["rate"] for _, name in tamper]
    for w, name in tamper:
        if w == 0:
            r = abort_rates[name]
            checks.append(_check(f"{name} never aborts ({label})", r["k"] == 0, f"{r['k']}/{r['n']}"))
    if len(tamper) > 1:
        mono = all(x is not None and y is not None and x < y for x, y in zip(rates, rates[1:]))
        desc = ", ".join(f"W={w}: {r:.3f}" if r is not None else f"W={w}: n/a" for (w, _), r in zip(tamper, rates))
        checks.append(_check(f"trap-catch monotone in W ({label})", mono, desc))
    return checks


# ---- real versus simulated -------------------------------------------------------------


def transcript_fields(res: SessionResult, h: np.ndarray | None, q: int) -> dict[str, list]:
    """Categorical samples of the statistically identical prover-sent fields."""
    out: dict[str, list] = {}

    def add(name, values):
        out.setdefault(name, []).extend(int(v) for v in np.ravel(values))

    for e in res.transcript:
        if e.sender != "P":
            continue
        msg = frame_decode(e.frame).message
        add(f"length.{e.tag}", [len(e.frame)])
        if isinstance(msg, ProverCoins):
            add("r_p.nibble", [int("".join(map(str, msg.r_p[:4])), 2)])
        elif isinstance(msg, CommitStrings) and h is not None:
            bins = msg.y[:, 0] * 16 // q
            add("y.claw_free", bins[h == 1])
            add("y.injective", bins[h == 0])
        elif isinstance(msg, TestReveal):
            add("test.beta", msg.beta)
            add("test.x.nibble", msg.x[:, :4] @ (1 << np.arange(4)))
        elif isinstance(msg, HadamardReveal):
            add("hadamard.beta", msg.beta)
            add("hadamard.d.nibble", msg.d[:, :4] @ (1 << np.arange(4)))
    return out


def _zk_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    ts = arena_rng.trial_seed(cfg.seed, i)
    rec: dict = {"trial": i}
    lines: list[str] = []
    fields: dict = {}
    q = cfg.session.lwe.q
    for k, arm in enumerate(cfg.arms):
        arm_seed = arena_rng.trial_seed(ts, k)
        for side, simulate in (("real", False), ("sim", True)):
            res, _, v = run_arm(cfg, arm, arm_seed, simulate=simulate)
            rec.update(_session_record(f"{arm.name}.{side}.", res))
            lines += _envelopes(res, i, arm.name, side)
            for name, vals in transcript_fields(res, v.h, q).items():
                fields.setdefault((arm.name, name, side), []).extend(vals)
    return TrialOutput(rec, lines, {"fields": fields})


def _zk_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    n = len(recs)
    agg: dict = {}
    checks = []
    abort_real, abort_sim = {}, {}
    for arm in cfg.arms:
        kr = sum(bool(r[f"{arm.name}.real.abort"]) for r in recs)
        ks = sum(bool(r[f"{arm.name}.sim.abort"]) for r in recs)
        ok, z = proportions_agree(kr, ks, n) if n else (False, 0.0)
        abort_real[arm.name], abort_sim[arm.name] = rate(kr, n), rate(ks, n)
        agg[arm.name] = {"real_abort": abort_real[arm.name], "sim_abort": abort_sim[arm.name], "z": z,
                         "real_accept": rate(sum(r[f"{arm.name}.real.accept"] for r in recs), n),
                         "sim_accept": rate(sum(r[f"{arm.name}.sim.accept"] for r in recs), n)}
        checks.append(_check(f"{arm.name} abort rates agree", ok, f"real {kr}/{n}, sim {ks}/{n}, z={z:.2f}"))
    merged: dict = {}
    for o in outs:
        for (arm, name, side), vals in o.extra["fields"].items():
            merged.setdefault(f"{arm}/{name}", ([], []))[0 if side == "real" else 1].extend(vals)
    bat = battery(merged)
    agg["battery"] = bat
    thr = float(cfg.params.get("min_battery_p", 0.01))
    checks.append(_check("transcript battery", bat["combined_p"] > thr,
                         f"Fisher-combined p = {bat['combined_p']:.4g} over {len(bat['fields'])} fields"))
    checks += _tamper_checks(cfg, abort_real, "real")
    checks += _tamper_checks(cfg, abort_sim, "simulated")
    return agg, checks


# ---- deterministic algebra ------------------------------------------------------------


def _random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def algebra_checks(seed: int) -> list[dict]:
    rng = arena_rng.stream(seed, "algebra")
    out = []
    sets = steane.gen_codeword_sets(1)
    N = sets.N
    proj = qsim.projector_set(sets)

    dev = np.abs(qsim.xi_adjoint(np.diag([1, 0]).astype(complex), N) - np.diag(proj.delta0)).max()
    out.append(_check("adjoint channel maps |0><0| to the even-parity projector", dev <= 1e-12, f"max dev {dev:.2e}"))

    for name, U in (("H", qsim.HAD), ("I", np.eye(2, dtype=complex))):
        UN = qsim.kron_all([U] * N)
        worst = 0.0
        for _ in range(50):
            sigma = _random_density(1 << N, rng)
            lhs = qsim.xi_channel(UN @ sigma @ UN.conj().T)
            rhs = U @ qsim.xi_channel(sigma) @ U.conj().T
            worst = max(worst, float(np.abs(lhs - rhs).max()))
        out.append(_check(f"transversal {name} commutes with the decoding channel", worst <= 1e-9,
                          f"max dev {worst:.2e} over 50 states"))

    key = steane.gen_encoding_key(1, N, rng)
    for label in ("0", "+"):
        state = qsim.encode_block(label, sets, key)
        rho = qsim.decode_M(state, N, key.perm, key.a, key.b)
        v = qsim.LABEL_VECTORS[label]
        dev = float(np.abs(rho - np.outer(v, v.conj())).max())
        out.append(_check(f"decode round trip on encoded |{label}>", dev <= 1e-8, f"max dev {dev:.2e}"))

    (pt, ph), val = qsim.soundness_bound_max()
    ok = abs(val - 2 / 3) <= 1e-6 and abs(pt - 1 / 9) <= 1e-4 and abs(ph - 1 / 3) <= 1e-4
    out.append(_check("soundness bound maximum", ok, f"f({pt:.6f}, {ph:.6f}) = {val:.9f}"))

    d0, d1 = (np.array(sets.enumerate(v), dtype=np.uint8) for v in (0, 1))
    parity_ok = (d0.sum(1) % 2 == 0).all() and (d1.sum(1) % 2 == 1).all()
    dist = min(int((x ^ y).sum()) for x in d0 for y in d1)
    out.append(_check("level-1 codeword sets", len(d0) == len(d1) == 8 and parity_ok and dist >= 3,
                      f"|D0|=|D1|={len(d0)}, parities ok={bool(parity_ok)}, distance {dist}"))
    sets2 = steane.gen_codeword_sets(2)
    words = steane.sample_codewords(sets2, np.array([0, 1] * 50, dtype=np.uint8), rng)
    decoded = steane.decode_many(words, 2)
    out.append(_check("level-2 sampled codewords decode to their logical value",
                      bool((decoded == np.array([0, 1] * 50)).all()), "100 samples"))
    return out


def run_algebra(cfg: ExperimentConfig) -> tuple[list[dict], dict, list[dict]]:
    checks = algebra_checks(cfg.seed)
    records = [{"check": c["name"], "passed": c["passed"], "detail": c["detail"]} for c in checks]
    return records, {"passed": sum(c["passed"] for c in checks), "total": len(checks)}, checks


# ---- bare amplified loop -----------------------------------------------------------------


def _azuma_m(cfg: ExperimentConfig) -> int:
    H = cfg.params["instance"]
    return xz.choose_m(H.a, H.b, H.weight_sum, float(cfg.params.get("eps", 0.01)))


def _azuma_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    H = cfg.params["instance"]
    state, _ = qsim.ground_state(H)
    ok, count = qsim.amplified_verification(H, state, _azuma_m(cfg), arena_rng.stream(arena_rng.trial_seed(cfg.seed, i)))
    return TrialOutput({"trial": i, "accept": bool(ok), "count": int(count)})


def _azuma_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    H = cfg.params["instance"]
    acc = rate(sum(r["accept"] for r in recs), len(recs))
    m = _azuma_m(cfg)
    thr = float(cfg.params.get("max_accept", 0.01))
    agg = {"m": m, "gap": float(H.beta - H.alpha), "accept": acc,
           "ground_energy": float(qsim.ground_state(H)[1]), "threshold": xz.accept_threshold(m, H.a, H.b, H.weight_sum)}
    return agg, [_check("no-instance acceptance", acc["n"] > 0 and acc["rate"] <= thr,
                        f"{acc['k']}/{acc['n']} accepted with m={m}, need <= {thr}")]


# ---- lattice oracles ----------------------------------------------------------------------


def brute_force_preimages(key: etcff.EtcffKey, y: np.ndarray, params: etcff.LweParams) -> list[tuple[int, tuple]]:
    """Every (b, x) in the support of the image distribution that can produce y."""
    out = []
    width = params.w_pre
    for b in (0, 1):
        for idx in range(1 << width):
            x = np.array([(idx >> k) & 1 for k in range(width)], dtype=np.uint8)
            if etcff.check_preimage(key, b, x, y, params):
                out.append((b, tuple(x)))
    return out


def exhaustive_decode(A: np.ndarray, c: np.ndarray, params: etcff.LweParams):
    """The s in Z_q^n minimising ||c - A^T s||_inf, if that minimum is within B_invert."""
    best = None
    for s in itertools.product(range(params.q), repeat=params.n_lwe):
        s = np.array(s, dtype=np.int64)
        norm = int(np.abs(etcff.centered(c - s @ A, params.q)).max())
        if norm <= params.B_invert and (best is None or norm < best[1]):
            best = (s, norm)
    return best


def forbidden_key(params: etcff.LweParams, rng: np.random.Generator) -> etcff.EtcffKeyPair:
    """A key whose offset error lies strictly between B_f and B_g."""
    A, R = etcff.gen_trap(params, rng)
    s = rng.integers(0, params.domain_size, size=params.n_lwe)
    e = rng.integers(-(params.B_f - 1), params.B_f, size=params.m_lwe)
    e[int(rng.integers(0, params.m_lwe))] = int(rng.integers(params.B_f + 1, params.B_g)) * int(rng.choice([-1, 1]))
    return etcff.EtcffKeyPair("f", etcff.EtcffKey(A, (s @ A + e) % params.q), R, s, e)


def _crypto_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    g = arena_rng.stream(arena_rng.trial_seed(cfg.seed, i), "crypto")
    micro = etcff.PRESETS[str(cfg.params.get("oracle_params", "micro"))]
    demo = etcff.PRESETS[str(cfg.params.get("check_params", "demo"))]

    kp = etcff.keygen("f" if i % 2 == 0 else "g", micro, g)
    b = int(g.integers(0, 2))
    y = etcff.eval_sample(kp.key, b, etcff.uniform_preimage(micro, g), micro, g)
    fast = sorted((bb, tuple(int(v) for v in x)) for bb, x in etcff.recover_preimages(kp.key, kp.R, y, micro))
    slow = sorted(brute_force_preimages(kp.key, y, micro))

    if g.random() < 0.5:
        s = g.integers(0, micro.q, size=micro.n_lwe)
        c = (s @ kp.key.A + g.integers(-micro.B_invert, micro.B_invert + 1, size=micro.m_lwe)) % micro.q
    else:
        c = g.integers(0, micro.q, size=micro.m_lwe)
    inv = etcff.invert(kp.key.A, kp.R, c, micro)
    ref = exhaustive_decode(kp.key.A, c, micro)
    invert_match = (inv is None and ref is None) or (
        inv is not None and ref is not None and np.array_equal(inv.s % micro.q, ref[0]))

    f_key, g_key = etcff.keygen("f", demo, g), etcff.keygen("g", demo, g)
    bad = forbidden_key(demo, g)
    return TrialOutput({
        "trial": i,
        "key_kind": kp.kind,
        "preimages": len(slow),
        "recover_match": fast == slow,
        "invert_match": bool(invert_match),
        "f_accepted": etcff.trapdoor_key_check(f_key.key, f_key.R, demo),
        "g_accepted": etcff.trapdoor_key_check(g_key.key, g_key.R, demo),
        "forbidden_rejected": not etcff.trapdoor_key_check(bad.key, bad.R, demo),
    })


def _crypto_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    n = len(recs)
    agg, checks = {}, []
    for key, label in (("recover_match", "preimage recovery matches brute force"),
                       ("invert_match", "inversion matches exhaustive decoding"),
                       ("f_accepted", "honest claw-free keys pass the key check"),
                       ("g_accepted", "honest injective keys pass the key check"),
                       ("forbidden_rejected", "forbidden-band keys fail the key check")):
        k = sum(bool(r[key]) for r in recs)
        agg[key] = rate(k, n)
        checks.append(_check(label, n > 0 and k == n, f"{k}/{n}"))
    return agg, checks


# ---- measurement-decode fidelity ----------------------------------------------------------


def logical_outcomes(outcomes: np.ndarray, key: steane.EncodingKey, gates: list[str], sets) -> np.ndarray:
    """Undo pads and permutation per block and decode the code half (-1 for non-codewords)."""
    n, N = key.n, key.N
    pad = np.where(predicates.physical_gates(gates, N) == 1, key.b, key.a)
    blocks = (np.asarray(outcomes, dtype=np.uint8) ^ pad).reshape(n, 2 * N)
    code, _ = steane.invert_block_split(blocks, key.perm)
    return steane.decode_many(code, sets.t)


def _decode_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    ts = arena_rng.trial_seed(cfg.seed, i)
    res, p, v = run_arm(cfg, Arm(), ts)
    c = cfg.session
    rec = {"trial": i, **_session_record("", res)}
    extra: dict = {}
    if v.outcomes is not None:
        gates = predicates.compute_U_r(c.instance, v.r, c.m)
        logical = logical_outcomes(v.outcomes, p.key, gates, p.sets)
        picks = xz.sample_term_indices(v.r, c.instance, c.m)
        extra["terms"] = [(int(s), "".join(str(int(logical[j * c.instance.n + q]))
                                           for q, _ in c.instance.terms[int(s)].supports)) for j, s in enumerate(picks)]
        # direct route: Born-rule logical samples, encoded straight into physical outcomes
        g = arena_rng.stream(ts, "direct")
        state = qsim.ground_state(c.instance)[0] if cfg.witness.mode == "ground_state" else None
        direct = []
        for _ in range(int(cfg.params.get("direct_samples", 1))):
            labels = []
            for j in range(c.m):
                bases = ["X" if gg == "H" else "Z" for gg in gates[j * c.instance.n:(j + 1) * c.instance.n]]
                src = state if state is not None else list(cfg.witness.labels)
                bits = qsim.sample_measurements(src, bases, g)
                labels += [xz.eigen_label(bb, 1 - 2 * int(x)) for bb, x in zip(bases, bits)]
            direct.append(steane.sample_encoded_measurement(labels, p.key, ["X" if gg == "H" else "Z" for gg in gates],
                                                            g, p.sets))
        extra["decoded"] = v.outcomes.astype(np.int64)
        extra["direct"] = np.mean(direct, axis=0)
        rec["terms"] = ";".join(f"{t}:{o}" for t, o in extra["terms"])
    return TrialOutput(rec, _envelopes(res, i, "honest", "real"), extra)


def _decode_aggregate(cfg, outs):
    c = cfg.session
    H = c.instance
    used = [o for o in outs if "decoded" in o.extra]
    n = len(used)
    agg: dict = {"sessions": n}
    checks = []
    if n == 0:
        return agg, [_check("decode fidelity", False, "no Hadamard rounds")]
    dec = np.mean([o.extra["decoded"] for o in used], axis=0)
    dirr = np.mean([o.extra["direct"] for o in used], axis=0)
    tv_phys = float(np.abs(dec - dirr).max())
    # exact logical distribution per term, from the witness state
    state = qsim.ground_state(H)[0] if cfg.witness.mode == "ground_state" else None
    tv_logical = 0.0
    per_term = {}
    for s, term in enumerate(H.terms):
        outcomes = [o for u in used for t, o in u.extra["terms"] if t == s]
        if not outcomes:
            continue
        bases = ["Z"] * H.n
        for q, pb in term.supports:
            bases[q] = pb
        qs = [q for q, _ in term.supports]
        if state is not None:
            dist = qsim.outcome_distribution(state, bases)
        else:
            dist = np.ones(1)
            for lab, bb in zip(cfg.witness.labels, bases):
                p1 = qsim.label_one_probability(lab, bb)
                dist = np.kron(dist, [1 - p1, p1])
        bits = qsim.index_to_bits(np.arange(1 << H.n), H.n)
        exact: dict[str, float] = {}
        for idx, pr in enumerate(dist):
            key = "".join(str(int(bits[idx, q])) for q in qs)
            exact[key] = exact.get(key, 0.0) + float(pr)
        emp = {k: outcomes.count(k) / len(outcomes) for k in set(outcomes) | set(exact)}
        tv = 0.5 * sum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in emp)
        per_term[str(s)] = {"samples": len(outcomes), "tv": tv, "exact": exact}
        tv_logical = max(tv_logical, tv)
    thr = float(cfg.params.get("max_tv", 0.05))
    agg.update(tv_physical=tv_phys, tv_logical=tv_logical, per_term=per_term)
    checks.append(_check("physical marginals match direct sampling", tv_phys <= thr,
                         f"max per-qubit TV {tv_phys:.4f} over {n} sessions"))
    checks.append(_check("decoded logical outcomes match the Born rule", tv_logical <= thr,
                         f"max per-term TV {tv_logical:.4f}"))
    return agg, checks


# ---- NP-ZK backend ------------------------------------------------------------------------


def honest_relation_instance(cfg: ExperimentConfig, ts: int):
    """A proof context and a satisfying (witness, public inputs) built from an honest measurement."""
    c = cfg.session
    pub = session_public(c, ts)
    g = arena_rng.stream(ts, "relation")
    r = arena_rng.bits(g, c.r_len)
    key = steane.gen_encoding_key(c.n_logical, c.N, g, rand_bits=pub.scheme.params.rand_bits)
    gates = predicates.compute_U_r(c.instance, r, c.m)
    labels = xz.build_rho_r(c.instance, r, c.m)
    outcomes = steane.sample_encoded_measurement(labels, key, ["X" if x == "H" else "Z" for x in gates], g, pub.sets())
    u = predicates.extract_u(outcomes, c.instance, r, c.m, c.N)

    z = cm.commit(pub.scheme, pub.tag, npzk.key_message_bits(key.perm, key.a, key.b), key.s_p)
    ctx = pub.proof_context(r)
    shape = npzk.RelationShape(c.instance, c.m, c.t, r)
    w = npzk.encode_witness(shape, key.s_p, key.traps, key.perm, key.a, key.b)
    pb, pa = npzk.public_inputs(z, u)
    return ctx, w, pb, pa


def false_statement(ctx: npzk.ProofContext, w, pb, pa, rng: np.random.Generator) -> np.ndarray:
    """Flip reported outcome bits until the relation fails; only the boolean side becomes false."""
    bad = pb.copy()
    while npzk.relation_holds(ctx.circuit, w, bad, pa):
        bad[int(rng.integers(0, bad.size))] ^= 1
    return bad


def proof_fields(tr: npzk.NpzkProofTranscript, q: int) -> dict[str, list]:
    out: dict[str, list] = {}
    out["final_shares"] = [int(a) * 4 + int(b) * 2 + int(c) for a, b, c in tr.commit.final_shares]
    out["zero_shares"] = [int(v) * 16 // q for v in np.ravel(tr.commit.zero_shares)]
    and_bits, mul_bins, explicit = [], [], []
    for pair in tr.response.opened:
        for view in pair:
            and_bits.extend(int(x) for x in view.and_out[:64])
            mul_bins.extend(int(x) * 16 // q for x in view.mul_out[:64])
            if view.explicit is not None:
                explicit.extend(int(x) for x in view.explicit[:64])
    out["and_out"], out["mul_out"], out["explicit"] = and_bits, mul_bins, explicit
    return out


def _npzk_trial(cfg: ExperimentConfig, i: int) -> TrialOutput:
    ts = arena_rng.trial_seed(cfg.seed, i)
    ctx, w, pb, pa = honest_relation_instance(cfg, ts)
    reps = cfg.session.reps
    g = arena_rng.stream(ts, "npzk-trial")
    honest = npzk.prove(ctx, w, pb, pa, reps, g)
    ok = npzk.verify(ctx, pb, pa, honest)
    cheat_reps = int(cfg.params.get("cheat_reps", 30))
    false_pb = false_statement(ctx, w, pb, pa, g)
    cheat, _ = npzk.cheat_prove(ctx, w, false_pb, pa, cheat_reps, g)
    per_rep = npzk.verify_repetitions(ctx, false_pb, pa, cheat)
    sim = npzk.simulate_transcript(ctx, pb, pa, honest.challenges, g)
    sim_ok = npzk.verify(ctx, pb, pa, sim)
    q = ctx.circuit.q
    fields = {(name, "real"): v for name, v in proof_fields(honest, q).items()}
    fields.update({(name, "sim"): v for name, v in proof_fields(sim, q).items()})
    return TrialOutput({"trial": i, "honest_ok": bool(ok), "cheat_accepted": int(per_rep.sum()),
                        "cheat_reps": cheat_reps, "sim_ok": bool(sim_ok)}, extra={"fields": fields})


def _npzk_aggregate(cfg, outs):
    recs = [o.record for o in outs]
    n = len(recs)
    honest = rate(sum(r["honest_ok"] for r in recs), n)
    cheat = rate(sum(r["cheat_accepted"] for r in recs), sum(r["cheat_reps"] for r in recs))
    sim = rate(sum(r["sim_ok"] for r in recs), n)
    merged: dict = {}
    for o in outs:
        for (name, side), vals in o.extra["fields"].items():
            merged.setdefault(name, ([], []))[0 if side == "real" else 1].extend(vals)
    bat = battery(merged)
    bound = float(cfg.params.get("max_cheat", 2 / 3 + 0.05))
    agg = {"honest": honest, "cheat_per_rep": cheat, "simulated_verify": sim, "battery": bat}
    return agg, [
        _check("honest proofs verify", n > 0 and honest["k"] == n, f"{honest['k']}/{n}"),
        _check("cheating repetitions bounded", cheat["n"] > 0 and cheat["rate"] <= bound,
               f"{cheat['k']}/{cheat['n']} = {cheat['rate'] if cheat['n'] else float('nan'):.4f}, need <= {bound:.4f}"),
        _check("simulated transcripts verify", n > 0 and sim["k"] == n, f"{sim['k']}/{n}"),
        _check("simulator battery", bat["combined_p"] > 0.01, f"Fisher-combined p = {bat['combined_p']:.4g}"),
    ]


# ---- driver -------------------------------------------------------------------------------

Trial = Callable[[ExperimentConfig, int], TrialOutput]
EXPERIMENTS: dict[str, tuple[Trial | None, Callable | None]] = {
    "completeness": (_completeness_trial, _completeness_aggregate),
    "soundness_cheats": (_soundness_trial, _soundness_aggregate),
    "zk_compare": (_zk_trial, _zk_aggregate),
    "algebra_validate": (None, None),
    "crypto_oracles": (_crypto_trial, _crypto_aggregate),
    "azuma": (_azuma_trial, _azuma_aggregate),
    "decode_fidelity": (_decode_trial, _decode_aggregate),
    "npzk_backend": (_npzk_trial, _npzk_aggregate),
}
NEEDS_SESSION = {"completeness", "soundness_cheats", "zk_compare", "decode_fidelity", "npzk_backend"}


def _run_one(args) -> TrialOutput:
    fn, cfg, i = args
    return fn(cfg, i)


def run_experiment(cfg: ExperimentConfig, trials: int | None = None, seed: int | None = None,
                   out_dir: str | Path | None = None, workers: int | None = None,
                   transcripts: str | Path | None = None, keep_transcripts: bool | None = None) -> ExperimentReport:
    """Run a suite; with `out_dir`, write report.json and transcripts.jsonl there.

    Transcript lines are streamed to `transcripts` (or ``out_dir/transcripts.jsonl``) as
    trials finish. They are also kept on the report unless `keep_transcripts` is false,
    which defaults to keeping them only when nothing is written to disk. The report
    always carries the SHA-256 of the full JSONL text.
    On KeyboardInterrupt the completed trials are written out before re-raising.
    """
    if cfg.kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {cfg.kind!r}")
    cfg = replace(cfg, trials=cfg.trials if trials is None else trials, seed=cfg.seed if seed is None else seed,
                  workers=cfg.workers if workers is None else workers)
    if transcripts is None and out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        transcripts = Path(out_dir) / "transcripts.jsonl"
    if keep_transcripts is None:
        keep_transcripts = transcripts is None
    start = time.perf_counter()
    if cfg.kind == "algebra_validate":
        records, agg, checks = run_algebra(cfg)
        report = ExperimentReport(cfg.kind, cfg.digest(), cfg.seed, len(records), records, agg, checks,
                                  transcript_sha256=hashlib.sha256(b"").hexdigest())
        if transcripts is not None:
            Path(transcripts).write_text("")
        report.wall_time = time.perf_counter() - start
        _persist(report, out_dir)
        return report

    trial_fn, agg_fn = EXPERIMENTS[cfg.kind]
    outs: list[TrialOutput] = []
    digest = hashlib.sha256()
    kept: list[str] = []
    sink = open(transcripts, "w", encoding="utf-8", newline="\n") if transcripts is not None else None

    def absorb(out: TrialOutput) -> None:
        text = "".join(line + "\n" for line in out.transcripts)
        digest.update(text.encode())
        if sink is not None:
            sink.write(text)
        if keep_transcripts:
            kept.append(text)
        out.transcripts = []
        outs.append(out)

    interrupted = False
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                for out in pool.map(_run_one, [(trial_fn, cfg, i) for i in range(cfg.trials)]):
                    absorb(out)
        else:
            for i in range(cfg.trials):
                absorb(trial_fn(cfg, i))
                log.debug("trial %d done", i)
    except KeyboardInterrupt:
        interrupted = True
    finally:
        if sink is not None:
            sink.close()
    agg, checks = agg_fn(cfg, outs)
    if interrupted:
        agg["partial"] = True
    report = ExperimentReport(cfg.kind, cfg.digest(), cfg.seed, len(outs), [o.record for o in outs],
                              _jsonable(agg), checks, transcript_jsonl="".join(kept),
                              transcript_sha256=digest.hexdigest())
    report.wall_time = time.perf_counter() - start
    _persist(report, out_dir)
    if interrupted:
        raise KeyboardInterrupt
    return report


def _persist(report: ExperimentReport, out_dir) -> None:
    if out_dir is None:
        return
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_bytes(report_render(report, "json"))


def diff_transcripts(a: str, b: str) -> list[str]:
    """Line-level differences between two JSONL transcripts, by (trial, arm, side, from, seq)."""
    def index(text):
        out = {}
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                out[(d.get("trial"), d.get("arm"), d.get("side"), d["from"], d["seq"])] = d
        return out

    ia, ib = index(a), index(b)
    diffs = []
    for k in sorted(set(ia) | set(ib), key=str):
        if k not in ia or k not in ib:
            diffs.append(f"{k}: only in {'second' if k not in ia else 'first'}")
        elif ia[k] != ib[k]:
            what = "tag" if ia[k]["tag"] != ib[k]["tag"] else "frame"
            diffs.append(f"{k}: {what} differs")
    return diffs
