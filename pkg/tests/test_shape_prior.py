import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import count_ngrams, nucleus_size
from voxtok import latent_coder as lc, shape_prior as sp
from voxtok.errors import EmptyTrainingSet, FormatError, UntrainedModel
from voxtok.latent_coder import TokenSequence

FULL = lc.N_TOKENS + 1  # order whose context spans the whole prefix

distributions = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).dirichlet(np.full(64, 0.3)))


def _seq(seed, vocab=8192):
    return TokenSequence(np.random.default_rng(seed).integers(0, vocab, 1024))


def test_temperature_examples():
    assert np.allclose(sp.apply_temperature([0.8, 0.2], 0.5), [0.64 / 0.68, 0.04 / 0.68], atol=1e-12)
    assert np.allclose(sp.apply_temperature([0.8, 0.2], 0.5), [0.9411764705882353, 0.058823529411764705])
    assert sp.apply_temperature([0.6, 0.4], 0).tolist() == [1.0, 0.0]
    assert sp.apply_temperature([0.3, 0.4, 0.4], 0).tolist() == [0.0, 1.0, 0.0]
    p = np.array([0.1, 0.2, 0.7])
    assert np.abs(sp.apply_temperature(p, 1.0) - p).max() <= 1e-12


def test_top_k_examples():
    assert np.allclose(sp.apply_top_k([0.5, 0.3, 0.2], 2), [0.625, 0.375, 0.0], atol=1e-15)
    assert sp.apply_top_k([0.2, 0.5, 0.3], 1).tolist() == [0.0, 1.0, 0.0]
    p = np.random.default_rng(0).dirichlet(np.ones(8192))
    assert np.array_equal(sp.apply_top_k(p, 8192), p)
    tied = sp.apply_top_k([0.25, 0.25, 0.5], 2)
    assert tied[1] == 0.0 and np.allclose(tied, [1 / 3, 0, 2 / 3])


def test_top_p_examples():
    assert np.allclose(sp.apply_top_p([0.5, 0.3, 0.2], 0.7), [0.625, 0.375, 0.0], atol=1e-15)
    p = np.array([0.1, 0.0, 0.9])
    assert np.array_equal(sp.apply_top_p(p, 1.0) > 0, p > 0)
    uniform = np.full(8192, 1 / 8192)
    kept = np.count_nonzero(sp.apply_top_p(uniform, 0.7))
    assert kept == nucleus_size(uniform.tolist(), 0.7) == 5735


@given(distributions, st.floats(0.01, 1.0))
def test_nucleus_matches_cumsum_oracle(p, top_p):
    keep, mass = sp.nucleus(p, top_p)
    assert len(keep) == min(nucleus_size(p.tolist(), top_p), np.count_nonzero(p))
    assert mass >= top_p or len(keep) == np.count_nonzero(p)
    out = sp.apply_top_p(p, top_p)
    assert abs(out.sum() - 1) <= 1e-9


@given(distributions, st.floats(0.0, 3.0), st.integers(1, 64), st.floats(0.05, 1.0))
def test_filters_keep_valid_distributions(p, t, k, top_p):
    a = sp.apply_temperature(p, t)
    b = sp.apply_top_k(a, k)
    c = sp.apply_top_p(b, top_p)
    for q in (a, b, c):
        assert q.min() >= 0 and abs(q.sum() - 1) <= 1e-9
    if t > 0:
        assert np.argmax(a) == np.argmax(p)


def test_sampler_config_validation():
    cfg = sp.SamplerConfig()
    assert (cfg.top_k, cfg.top_p, cfg.temperature) == (8192, 0.7, 0.7)
    for bad in (dict(top_k=0), dict(top_k=8193), dict(top_p=0.0), dict(top_p=1.5), dict(temperature=-1)):
        with pytest.raises(ValueError):
            sp.SamplerConfig(**bad)


def test_counts_match_direct_counting():
    seqs = [_seq(1, 20), _seq(2, 20)]
    for n in (1, 2, 3):
        model = sp.fit_ngram(seqs, n=n)
        oracle = count_ngrams([s.tolist() for s in seqs], n, sp.BOS)
        for k in range(1, n + 1):
            got = {ctx + (tok,): c for ctx, row in model.table(k).items() for tok, c in row.items()}
            want = {}
            for gram, c in oracle.items():
                want[gram[n - k:]] = want.get(gram[n - k:], 0) + c
            assert got == want


def test_unigram_pooled_frequencies():
    seqs = [_seq(3, 50), _seq(4, 50)]
    model = sp.fit_ngram(seqs, n=2)
    pooled = np.bincount(np.concatenate([s.ids for s in seqs]), minlength=8192) / 2048
    assert np.allclose(sp.next_distribution(model, []), pooled, atol=1e-15)


def test_balanced_two_token_corpus():
    seq = TokenSequence(np.tile([3, 9], 512))
    p = sp.next_distribution(sp.fit_ngram([seq], n=3), [])
    assert p[3] == pytest.approx(0.5) and p[9] == pytest.approx(0.5)


def test_order_one_is_context_free():
    model = sp.fit_ngram([_seq(5, 30)], n=1)
    a = sp.next_distribution(model, [])
    assert np.array_equal(a, sp.next_distribution(model, [1, 2, 3]))
    assert np.array_equal(a, sp.next_distribution(model, [sp.BOS]))


def test_prefix_context_is_certain():
    s = _seq(6)
    model = sp.fit_ngram([s], n=FULL)
    ids = s.tolist()
    for i in (0, 1, 17, 500, 1023):
        p = sp.next_distribution(model, [sp.BOS] * (FULL - 1 - i) + ids[:i])
        assert p[ids[i]] >= 1 - 1e-9


def test_unseen_context_is_smoothed():
    model = sp.fit_ngram([_seq(7, 100)], n=3)
    p = sp.next_distribution(model, [5000, 6000])
    assert p.min() > 0 and abs(p.sum() - 1) <= 1e-9


def test_backoff_uses_longest_seen_suffix():
    seq = TokenSequence(np.array([1, 2, 3] * 341 + [1]))
    model = sp.fit_ngram([seq], n=3)
    # (7, 2) unseen, but the suffix (2,) is always followed by 3
    p = sp.next_distribution(model, [7, 2])
    assert p[3] == pytest.approx(1.0)
    _, depth = model.scores([7, 2])
    assert depth == 1


def test_memorized_sequence_regenerates():
    s = _seq(8)
    model = sp.fit_ngram([s], n=FULL)
    assert sp.greedy_sequence(model) == s
    assert sp.sample_sequence(model, sp.SamplerConfig(seed=3)) == s


def test_memorized_shape_decodes_to_itself(small_set):
    grids, model = small_set
    t = lc.encode(grids[0], model)
    prior = sp.fit_ngram([t], n=FULL)
    drawn = sp.sample_sequence(prior, sp.SamplerConfig())
    from voxtok.metrics import voxel_iou
    assert voxel_iou(lc.decode(drawn, model), lc.decode(t, model)) >= 0.99


def test_sampling_determinism_and_greedy():
    model = sp.fit_ngram([_seq(i, 40) for i in range(4)], n=3)
    a = sp.sample_sequence(model, sp.SamplerConfig(seed=11))
    assert a == sp.sample_sequence(model, sp.SamplerConfig(seed=11))
    assert a != sp.sample_sequence(model, sp.SamplerConfig(seed=12))
    assert sp.sample_sequence(model, sp.SamplerConfig(temperature=0, seed=1)) == sp.greedy_sequence(model)


def test_sampling_frequencies_binomial():
    # order 1 with unigram p(0) = 0.75, p(1) = 0.25; top_p = 1 and T = 1 leave it untouched
    seq = TokenSequence(np.array([0, 0, 0, 1] * 256))
    model = sp.fit_ngram([seq], n=1)
    draws = np.concatenate([sp.sample_sequence(model, sp.SamplerConfig(top_p=1.0, temperature=1.0, seed=s)).ids
                            for s in range(10)])
    ones = int(np.count_nonzero(draws == 1))
    mean, sd = 0.25 * len(draws), np.sqrt(len(draws) * 0.25 * 0.75)
    assert abs(ones - mean) <= 4 * sd


def test_sample_speed():
    model = sp.fit_ngram([_seq(i, 2000) for i in range(20)], n=3)
    t0 = time.perf_counter()
    sp.sample_sequence(model, sp.SamplerConfig())
    assert time.perf_counter() - t0 < 5


def test_errors():
    with pytest.raises(EmptyTrainingSet):
        sp.fit_ngram([])
    with pytest.raises(UntrainedModel):
        sp.sample_sequence(None)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_file_roundtrip(tmp_path, n):
    model = sp.fit_ngram([_seq(i, 300) for i in range(3)], n=n, discount=0.25)
    sp.save_ngram(model, tmp_path / "n.bin")
    data = (tmp_path / "n.bin").read_bytes()
    assert data[:8] == b"VOXNGRAM"
    back = sp.load_ngram(tmp_path / "n.bin")
    assert back.order == n and back.discount == 0.25
    assert np.array_equal(back.rev_grams, model.rev_grams) and np.array_equal(back.counts, model.counts)
    with pytest.raises(FormatError):
        sp.ngram_from_bytes(data[:-1])
