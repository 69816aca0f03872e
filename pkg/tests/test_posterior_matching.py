import csv

import numpy as np
import pytest

from fscbounds.channels import make_builtin
from fscbounds.encoders import builtin_encoder
from fscbounds.lower import CertificationError
from fscbounds.posterior_matching import (BAYES_TOL, NORMALIZATION_TOL, empirical_rate,
                                          rate_trials, simulate)


@pytest.fixture(scope="module")
def trapdoor():
    enc = builtin_encoder("trapdoor_3node", 0.25)
    return enc, enc.channel


def test_posterior_stays_normalised(trapdoor):
    enc, ch = trapdoor
    tr = simulate(enc, ch, 64, 5000, seed=3)
    assert tr.normalization_error.max() < NORMALIZATION_TOL
    assert tr.bayes_gap.max() < BAYES_TOL
    assert np.all(tr.lambda_after >= 0)
    assert not tr.flags


def test_single_message_is_always_decoded(trapdoor):
    enc, ch = trapdoor
    tr = simulate(enc, ch, 1, 2000, seed=0)
    assert np.allclose(tr.lambda_before, 1.0, atol=1e-12)
    assert np.allclose(tr.lambda_after, 1.0, atol=1e-12)
    assert tr.success


def test_noiseless_gain_never_negative():
    # p = 0 makes the fading channel deterministic, so W(y|x*,s*) = 1 >= P(y|q)
    enc = builtin_encoder("bfc1_1node", 0.0)
    tr = simulate(enc, enc.channel, 8, 3000, seed=1)
    assert tr.log_growth.min() >= -1e-12


def test_martingale_sanity(trapdoor):
    enc, ch = trapdoor
    stats = rate_trials(enc, ch, 4, 400, trials=100, seed=10)
    assert abs(stats["mean"] - enc.rate) <= 3 * stats["stderr"]


def test_messages_are_decoded(trapdoor):
    enc, ch = trapdoor
    stats = rate_trials(enc, ch, 256, 300, trials=5, seed=0)
    assert stats["success"] == 1.0


def test_same_seed_same_transcript(trapdoor, tmp_path):
    enc, ch = trapdoor
    a, b = simulate(enc, ch, 16, 500, seed=9), simulate(enc, ch, 16, 500, seed=9)
    assert np.array_equal(a.y, b.y)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_csv(pa)
    b.write_csv(pb)
    assert pa.read_bytes() == pb.read_bytes()
    rows = list(csv.reader(pa.open()))
    assert rows[0] == ["step", "q", "y", "lambda_true", "log_growth"]
    assert len(rows) == 501
    assert empirical_rate(a) == pytest.approx(np.mean([float(r[4]) for r in rows[1:]]))


def test_encoder_for_other_channel_rejected():
    enc = builtin_encoder("trapdoor_3node", 0.3)
    with pytest.raises(CertificationError):
        simulate(enc, make_builtin("trapdoor", 0.2), 4, 10)


def test_argument_checks(trapdoor):
    enc, ch = trapdoor
    with pytest.raises(ValueError):
        simulate(enc, ch, 0, 10)
    with pytest.raises(ValueError):
        simulate(enc, ch, 4, 0)
