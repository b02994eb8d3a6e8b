import numpy as np
import pytest

from carryfault import ConfigError, StructuralError
from carryfault.campaign import (Campaign, CampaignConfig, InequalitySystem, Relation, Verdict,
                                 balance, build_inequality, naive_threshold_rhs, failure_threshold,
                                 inequality_rows, observe, select_ciphertext)
from carryfault.faults import FaultProfile
from carryfault.kem import BatchEncryptor, DecryptionDevice, decryption_noise, keygen
from carryfault.params import KYBER512 as P, SABER
from carryfault.rng import DeterministicRng


@pytest.fixture(scope="module")
def kp():
    return keygen(P, DeterministicRng(31, ("keygen",)))


@pytest.fixture(scope="module")
def device(kp):
    return DecryptionDevice(kp, P)


def cfg(**kw):
    kw.setdefault("profile", FaultProfile.ideal())
    return CampaignConfig(P, **kw)


@pytest.fixture(scope="module")
def small_run(kp, device):
    return Campaign(kp.public, device, cfg(ciphertexts=1000, seed=4)).run()


def test_thresholds():
    assert failure_threshold(P, "stuck1") == (1, -193)
    assert failure_threshold(P, "stuck0") == (-1, -190)
    assert naive_threshold_rhs(P) == 640


def test_threshold_is_where_failures_start():
    # g = 833 + d for m=1, failing from 7168 on, i.e. d >= -193 mod 2^13
    assert (833 + (-193)) % 8192 == 640 and (833 + (-194)) % 8192 == 639
    assert (7361 - 193) == 7168


def test_config_validation():
    with pytest.raises(ConfigError):
        CampaignConfig(SABER, FaultProfile.ideal())
    with pytest.raises(ConfigError):
        cfg(beta=0)
    with pytest.raises(ConfigError):
        cfg(rejection_rate=1.0)
    with pytest.raises(ConfigError):
        cfg(profile=FaultProfile.ideal(coeff=256))
    with pytest.raises(ConfigError):
        cfg(profile=FaultProfile.ideal(share=2))
    with pytest.raises(ConfigError):
        cfg(profile=FaultProfile.ideal(bit=14))
    assert cfg(register_width=16).echo()["register_width"] == 16


def test_inequality_rows_reproduce_noise(kp):
    batch = BatchEncryptor(kp.public, P).encapsulate(40, DeterministicRng(3))
    x = kp.secret_vector()
    for i in (0, 100, 255):
        rows, const = inequality_rows(batch, i)
        lhs = rows.astype(np.int64) @ x + const
        want = [decryption_noise(kp, batch.record(j), P)[i] for j in range(len(batch))]
        assert lhs.tolist() == want
        neg, nconst = inequality_rows(batch, i, -1)
        assert np.array_equal(neg.astype(np.int64) @ x + nconst, -lhs)


def test_selection_picks_smallest_qualifying_g(kp, device):
    c = cfg(filter_pool=50)
    rec = select_ciphertext(kp.public, device, c, DeterministicRng(8))
    assert rec.m[0] == 1
    d = decryption_noise(kp, rec, P)[0]
    assert d < -60  # the minimum of ~25 draws sits deep in the lower tail


def test_observe_ideal_profile(kp, device):
    c = cfg(filter_pool=1)
    r = DeterministicRng(2)
    reps_fail = []
    for t in range(300):
        rec = select_ciphertext(kp.public, device, c, r)
        obs = observe(device, rec, c, r, t)
        fails = decryption_noise(kp, rec, P)[0] >= -193
        assert (obs.verdict is Verdict.FAILURE) == fails
        if obs.verdict is Verdict.FAILURE:
            reps_fail.append(obs.repetitions_used)
        else:
            assert obs.repetitions_used == c.beta
        ineq = build_inequality(rec, obs, P)
        assert ineq.holds(kp.secret_vector())
    assert 1.7 < np.mean(reps_fail) < 2.3


def test_balance_drops_only_failure_rows():
    n = 20_000
    sys_ = InequalitySystem(np.zeros((n, 4), np.int8), np.zeros(n, np.int64),
                            np.arange(n) % 4 != 0, np.zeros(n, np.int64))
    out = balance(sys_, 0.5, DeterministicRng(1))
    assert int((~out.ge).sum()) == n // 4
    assert abs(out.ge.sum() - 0.5 * 0.75 * n) < 4 * np.sqrt(n * 0.75 * 0.25)
    assert balance(sys_, 0.0, DeterministicRng(1)) is sys_


def test_small_campaign_counters(small_run):
    c = small_run.counters
    assert c["ciphertexts"] == 1000 and c["candidates"] == 13_000
    assert c["inequalities"] == c["ge"] + c["lt"] == len(small_run.system)
    assert sum(c["repetition_histogram"]) == 1000
    assert c["injections"] == sum(k * v for k, v in enumerate(c["repetition_histogram"]))
    assert small_run.metadata["tau"] == -193


def test_ground_truth_satisfies_failure_rows(kp, small_run):
    ok = small_run.system.satisfied(kp.secret_vector())
    assert ok[small_run.system.ge].all()
    assert ok[~small_run.system.ge].mean() > 0.9


def test_campaign_is_deterministic_and_thread_independent(kp, device):
    a = Campaign(kp.public, device, cfg(ciphertexts=600, seed=9)).run()
    b = Campaign(kp.public, device, cfg(ciphertexts=600, seed=9, threads=2)).run()
    assert np.array_equal(a.system.coeffs, b.system.coeffs)
    assert a.counters == b.counters
    c = Campaign(kp.public, device, cfg(ciphertexts=600, seed=10)).run()
    assert not np.array_equal(a.system.ge, c.system.ge) or a.counters != c.counters


def test_target_mode_truncates(kp, device):
    res = Campaign(kp.public, device, cfg(ciphertexts=None, target_inequalities=300, seed=2)).run()
    assert len(res.system) == 300


def test_device_order_must_match(kp):
    with pytest.raises(ConfigError):
        Campaign(kp.public, DecryptionDevice(kp, P, order=2), cfg())


def test_csv_roundtrip(tmp_path, small_run):
    p = tmp_path / "ineq.csv"
    small_run.system.to_csv(p)
    back = InequalitySystem.from_csv(p)
    for f in ("coeffs", "constant", "ge", "tau"):
        assert np.array_equal(getattr(back, f), getattr(small_run.system, f))
    assert back.row(0).relation in (Relation.GE, Relation.LT)


def test_csv_errors_name_the_line(tmp_path, small_run):
    p = tmp_path / "bad.csv"
    small_run.system.head(3).to_csv(p)
    lines = p.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(StructuralError, match="line 4"):
        InequalitySystem.from_csv(p)
    lines[2] = "XX" + lines[2][2:]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(StructuralError, match="line 3"):
        InequalitySystem.from_csv(p)
