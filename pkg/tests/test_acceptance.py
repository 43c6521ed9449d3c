"""End-to-end acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``criterion NN PASS|FAIL`` line. Suites run once per
module and are reused; criterion 11 reruns each suite and compares bytes.
The whole module takes roughly fifteen minutes on one core.
"""

import filecmp
import shutil

import pytest

from arena import qsim
from arena import xz_hamiltonian as xz
from arena.config import config_load
from arena.harness import report_render, run_experiment

from conftest import CONFIGS

SUITES = {
    "completeness": "completeness.ini",
    "algebra": "algebra.ini",
    "azuma": "azuma.ini",
    "crypto": "crypto_oracles.ini",
    "key_checks": "key_checks.ini",
    "test_round": "test_round.ini",
    "decode": "decode_fidelity.ini",
    "npzk": "npzk.ini",
    "zk": "zk_compare.ini",
}


class Suites:
    """Runs each suite on first use, writing report.json and transcripts.jsonl under `root`."""

    def __init__(self, root):
        self.root = root
        self._reports = {}

    def config(self, name):
        return config_load(CONFIGS / SUITES[name])

    def run(self, name, tag="first"):
        return run_experiment(self.config(name), out_dir=self.root / tag / name)

    def __getitem__(self, name):
        if name not in self._reports:
            self._reports[name] = self.run(name)
        return self._reports[name]


@pytest.fixture(scope="module")
def suites(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    yield Suites(root)
    # the zk_compare transcripts alone are several GB per run
    shutil.rmtree(root, ignore_errors=True)


@pytest.fixture
def verdict(capsys):
    def report(number: int, label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {label} ({detail})")
        assert ok, detail

    return report


def checks_detail(rep, *names) -> tuple[bool, str]:
    picked = [rep.check(n) for n in names] if names else rep.checks
    return all(c["passed"] for c in picked), "; ".join(f"{c['name']}: {c['detail']}" for c in picked)


def test_criterion_01_completeness(suites, verdict):
    rep = suites["completeness"]
    acc = rep.aggregates["accept"]
    ok = acc["n"] == 200 and acc["rate"] >= 0.97 and rep.wall_time <= 600
    verdict(1, "completeness", ok, f"{acc['k']}/{acc['n']} accepted in {rep.wall_time:.0f}s")


def test_criterion_02_soundness_bound(verdict):
    (x, y), value = qsim.soundness_bound_max()
    ok = abs(value - 2 / 3) <= 1e-6 and abs(x - 1 / 9) <= 1e-4 and abs(y - 1 / 3) <= 1e-4
    verdict(2, "soundness-bound maximum", ok, f"f({x:.6f}, {y:.6f}) = {value:.9f}")


def test_criterion_03_azuma(suites, verdict):
    rep = suites["azuma"]
    m_expected = xz.choose_m_for_gap(0.2, 0.01)
    acc = rep.aggregates["accept"]
    ok = (rep.aggregates["m"] == m_expected and abs(rep.aggregates["gap"] - 0.2) < 1e-12
          and acc["n"] == 500 and acc["rate"] <= 0.01 and rep.wall_time <= 300)
    verdict(3, "Azuma sizing", ok, f"m={rep.aggregates['m']}, {acc['k']}/{acc['n']} accepted in {rep.wall_time:.1f}s")


def test_criterion_04_algebra(suites, verdict):
    rep = suites["algebra"]
    ok, detail = checks_detail(
        rep,
        "adjoint channel maps |0><0| to the even-parity projector",
        "transversal H commutes with the decoding channel",
        "transversal I commutes with the decoding channel",
        "decode round trip on encoded |0>",
        "decode round trip on encoded |+>",
    )
    verdict(4, "decoding-channel algebra", ok and rep.wall_time <= 60, detail)


def test_criterion_05_etcff_oracles(suites, verdict):
    rep = suites["crypto"]
    ok, detail = checks_detail(rep, "preimage recovery matches brute force", "inversion matches exhaustive decoding")
    ok = ok and rep.aggregates["recover_match"]["n"] == 1000 and rep.wall_time <= 300
    verdict(5, "ETCFF oracle equivalence", ok, detail)


def test_criterion_06_key_checks(suites, verdict):
    keys = suites["crypto"]
    ok1, d1 = checks_detail(keys, "honest claw-free keys pass the key check",
                            "honest injective keys pass the key check", "forbidden-band keys fail the key check")
    runs = suites["key_checks"]
    ok2, d2 = checks_detail(runs, "verifier:BadTrapdoor caught", "verifier:MalformedKey caught")
    n = keys.aggregates["f_accepted"]["n"]
    verdict(6, "trapdoor and key check", ok1 and ok2 and n == 1000, f"{d1}; {d2}")


def test_criterion_07_test_round(suites, verdict):
    rep = suites["test_round"]
    r = rep.aggregates["prover:RandomOutcomes"]["test_reject"]
    ok = r["n"] == 500 and r["rate"] >= 0.99
    verdict(7, "test-round policing", ok, f"{r['k']}/{r['n']} RandomOutcomes test rounds rejected")


def test_criterion_08_decode_fidelity(suites, verdict):
    rep = suites["decode"]
    ok, detail = checks_detail(rep)
    verdict(8, "measurement-decode fidelity", ok and rep.trials == 2000, detail)


def test_criterion_09_npzk(suites, verdict):
    rep = suites["npzk"]
    agg = rep.aggregates
    ok = (agg["honest"]["k"] == agg["honest"]["n"] == 100
          and agg["cheat_per_rep"]["n"] == 3000 and agg["cheat_per_rep"]["rate"] <= 2 / 3 + 0.05
          and rep.check("simulator battery")["passed"])
    _, detail = checks_detail(rep)
    verdict(9, "NP-ZK backend", ok, detail)


def test_criterion_10_zk_compare(suites, verdict):
    rep = suites["zk"]
    arms = {a.name for a in suites.config("zk").arms}
    weights = sorted(int(a.param) for a in suites.config("zk").arms if a.verifier == "TamperOutcomes")
    ok, detail = checks_detail(rep)
    ok = ok and rep.trials == 500 and "honest" in arms and weights == [1, 4, 16]
    verdict(10, "real versus simulated transcripts", ok, detail)


def test_criterion_11_reproducible(suites, verdict):
    differing, size = [], 0
    for name in SUITES:
        suites[name]
        suites.run(name, tag="again")
        first, again = suites.root / "first" / name, suites.root / "again" / name
        for f in ("report.json", "transcripts.jsonl"):
            size += (first / f).stat().st_size
            if not filecmp.cmp(first / f, again / f, shallow=False):
                differing.append(f"{name}/{f}")
    detail = f"{len(SUITES)} suites rerun, {size / 1e6:.0f} MB of reports and transcripts compared"
    verdict(11, "byte-identical reruns", not differing, detail + (f", differing: {differing}" if differing else ""))
