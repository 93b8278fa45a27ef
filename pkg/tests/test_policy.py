import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_task, random_params, random_snapshot
from grpo_mc.errors import CheckpointError, InvalidTokenError, NumericalError
from grpo_mc.policy import (
    Completion,
    PolicyParams,
    PolicySnapshot,
    Vocabulary,
    featurize,
    format_prior_params,
    grad_sequence_logprob,
    greedy_completion,
    make_vocabulary,
    read_checkpoint,
    rollout_rng,
    sample_completion,
    sample_completions,
    sequence_features,
    sequence_logprob,
    token_distribution,
    write_checkpoint,
)


# --- vocabulary -----------------------------------------------------------------


def test_vocabulary_layout():
    vocab = make_vocabulary(4, 16)
    assert len(vocab) == 25
    assert vocab.tokens[:5] == ("<think>", "</think>", "<answer>", "</answer>", "<eos>")
    assert vocab.letters == ("A", "B", "C", "D")
    assert len(vocab.fillers) == 16


def test_vocabulary_rejects_duplicates_and_small():
    with pytest.raises(ValueError):
        Vocabulary(("<think>", "</think>", "<answer>", "</answer>", "<eos>", "A", "B", "A", "w0", "w1"))
    with pytest.raises(ValueError):
        make_vocabulary(2, 0)  # 7 symbols < 10


def test_detokenize_renders_tags_tightly_and_stops_at_eos():
    vocab = make_vocabulary(4, 16)
    ids = [vocab.id(s) for s in ["<think>", "w00", "w01", "</think>", "<answer>", "C", "</answer>", "<eos>", "w02"]]
    assert vocab.detokenize(ids) == "<think>w00 w01</think> <answer>C</answer>"


# --- featurize ------------------------------------------------------------------


def test_featurize_empty_history_pads_with_zeros():
    vocab = make_vocabulary(4, 1)  # V = 10
    assert len(vocab) == 10
    task = make_task(4)
    phi = featurize(task, [], 2, vocab)
    assert phi.shape == (24,)
    assert np.all(phi[4:] == 0)
    assert np.array_equal(phi[:4], task.features)


def test_featurize_onehot_of_previous_token():
    vocab = make_vocabulary(4, 1)
    task = make_task(4)
    phi = featurize(task, [3], 1, vocab)
    expected = np.zeros(10)
    expected[3] = 1.0
    assert np.array_equal(phi[4:], expected)


def test_featurize_window_order_most_recent_first():
    vocab = make_vocabulary(4, 1)
    phi = featurize(make_task(4), [7, 2, 5], 2, vocab)
    assert phi[4 + 5] == 1.0 and phi[4 + 10 + 2] == 1.0
    assert phi[4:].sum() == 2.0


def test_featurize_deterministic():
    vocab = make_vocabulary(4, 4)
    task = make_task(6)
    a = featurize(task, [1, 2, 3], 3, vocab)
    b = featurize(task, [1, 2, 3], 3, vocab)
    assert a.tobytes() == b.tobytes()


def test_featurize_invalid_token():
    vocab = make_vocabulary(4, 1)
    with pytest.raises(InvalidTokenError):
        featurize(make_task(4), [10], 2, vocab)


def test_sequence_features_rows_match_featurize(rng):
    vocab = make_vocabulary(4, 4)
    task = make_task(5)
    ids = [int(x) for x in rng.integers(len(vocab), size=7)]
    phi = sequence_features(task, ids, 3, len(vocab))
    for t in range(len(ids)):
        assert np.array_equal(phi[t], featurize(task, ids[:t], 3, vocab))


# --- token distribution -----------------------------------------------------------


def test_token_distribution_zero_weights_uniform():
    params = PolicyParams.zeros(12, 2, 3)
    p = token_distribution(params, np.ones(params.D))
    assert np.allclose(p, 1 / 12, rtol=0, atol=1e-15)


def test_token_distribution_two_class_by_hand():
    # V=2, task block of width 1 carrying logits (ln 3, 0); history block inactive
    W = np.array([[math.log(3.0), 0.0, 0.0], [0.0, 0.0, 0.0]])
    params = PolicyParams(W.reshape(-1), 2, 1, 1)
    p = token_distribution(params, np.array([1.0, 0.0, 0.0]))
    assert p == pytest.approx([0.75, 0.25], abs=1e-15)


def test_token_distribution_shift_invariant(rng):
    # a feature that is 1 in every context adds the same constant to all logits when its column is constant
    params = random_params(rng, 10, 2, 4)
    phi = np.concatenate([rng.standard_normal(4), np.zeros(20)])
    phi[4] = 1.0
    W = params.W.copy()
    W[:, 4] = 0.0
    shifted = W.copy()
    shifted[:, 4] = 7.5
    p0 = token_distribution(params.with_flat(W.reshape(-1)), phi)
    p1 = token_distribution(params.with_flat(shifted.reshape(-1)), phi)
    assert np.allclose(p0, p1, rtol=0, atol=1e-14)


def test_token_distribution_temperature(rng):
    params = random_params(rng, 10, 1, 3, scale=2.0)
    phi = rng.standard_normal(params.D)
    logits = params.W @ phi
    for temp in (0.5, 1.0, 3.0):
        expected = np.exp(logits / temp - np.max(logits / temp))
        expected /= expected.sum()
        assert np.allclose(token_distribution(params, phi, temp), expected, atol=1e-14)


def test_non_finite_params_rejected():
    with pytest.raises(NumericalError):
        PolicyParams(np.full(10 * 11, np.inf), 10, 1, 1)
    with pytest.raises(NumericalError):
        PolicyParams(np.full(10 * 11, np.nan), 10, 1, 1)


def test_non_finite_logits_raise():
    params = PolicyParams(np.full(10 * 11, 1e308), 10, 1, 1)
    with pytest.raises(NumericalError):
        token_distribution(params, np.full(11, 1e308))


# --- sequence log-probability ---------------------------------------------------------


def test_sequence_logprob_uniform_policy():
    params = PolicyParams.zeros(10, 2, 4)
    assert sequence_logprob(params, make_task(4), [1, 5, 9]) == pytest.approx(3 * math.log(0.1), abs=1e-14)


def test_sequence_logprob_empty_is_zero(rng):
    params = random_params(rng, 10, 2, 4)
    assert sequence_logprob(params, make_task(4), []) == 0.0


def test_sequence_logprob_matches_product_of_step_distributions(rng):
    vocab = make_vocabulary(4, 4)
    V = len(vocab)
    for trial in range(5):
        params = random_params(rng, V, 3, 5)
        task = make_task(5, seed=trial)
        ids = [int(x) for x in rng.integers(V, size=6)]
        direct = math.fsum(
            math.log(token_distribution(params, featurize(task, ids[:t], 3, vocab), 0.8)[ids[t]]) for t in range(6)
        )
        assert abs(sequence_logprob(params, task, ids, 0.8) - direct) <= 1e-12


def test_sequence_logprob_invalid_token():
    with pytest.raises(InvalidTokenError):
        sequence_logprob(PolicyParams.zeros(10, 2, 4), make_task(4), [0, 10])


# --- gradient ---------------------------------------------------------------------


def test_grad_two_class_single_token_by_hand():
    # V=2, D=1 (task block only, k=1 history block unused for the first token)
    a, b, x = 0.3, -0.4, 1.7
    W = np.array([[a, 0.0, 0.0], [b, 0.0, 0.0]])
    params = PolicyParams(W.reshape(-1), 2, 1, 1)
    from grpo_mc.tasks import Task

    task = Task("t", [x], ("option A", "option B"), {"A"})
    p0 = 1 / (1 + math.exp((b - a) * x))
    grad = grad_sequence_logprob(params, task, [0]).reshape(2, 3)
    # d log p0 / dW = (onehot(0) - p) outer phi, phi = (x, 0, 0)
    expected = np.array([[(1 - p0) * x, 0, 0], [-(1 - p0) * x, 0, 0]])
    assert np.allclose(grad, expected, atol=1e-15)


def _fd_rel_err(f, x, grad, h=1e-5):
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (f(x + e) - f(x - e)) / (2 * h)
    return np.linalg.norm(fd - grad) / max(np.linalg.norm(fd), np.linalg.norm(grad), 1e-12)


def test_grad_sequence_logprob_finite_differences(rng):
    for trial in range(10):
        V = int(rng.integers(10, 17))
        k = int(rng.integers(1, 3))
        d_task = int(rng.integers(1, 33 - k * V)) if 32 - k * V >= 1 else 1
        params = random_params(rng, V, k, d_task)
        task = make_task(d_task, seed=trial)
        T = int(rng.integers(1, 9))
        ids = [int(x) for x in rng.integers(V, size=T)]
        temp = float(rng.uniform(0.5, 2.0))
        grad = grad_sequence_logprob(params, task, ids, temp)
        err = _fd_rel_err(lambda f: sequence_logprob(params.with_flat(f), task, ids, temp), params.flat.copy(), grad)
        assert err <= 1e-6, (trial, err)


def test_grad_rows_sum_to_zero(rng):
    # softmax is invariant to adding the same vector to every row of W
    params = random_params(rng, 12, 2, 4)
    grad = grad_sequence_logprob(params, make_task(4), [1, 2, 3, 4]).reshape(12, -1)
    assert np.allclose(grad.sum(axis=0), 0.0, atol=1e-12)


# --- sampling ---------------------------------------------------------------------


def _w0_oracle(seed, step, task_index, rollout_index, V, eos, max_len):
    """Replay of the sampler for a uniform policy: u ~ Philox stream, token = floor(u * V)."""
    ss = np.random.SeedSequence([seed, step, task_index, rollout_index])
    gen = np.random.Generator(np.random.Philox(ss))
    out = []
    for _ in range(max_len):
        tok = min(int(gen.random() * V), V - 1)
        out.append(tok)
        if tok == eos:
            break
    return out


def test_uniform_policy_sample_replays_documented_rng():
    vocab = make_vocabulary(4, 3)
    assert len(vocab) == 12
    snap = PolicySnapshot(PolicyParams.zeros(12, 2, 4), vocab)
    task = make_task(4)
    for key in [(0, 0, 0, 0), (7, 3, 11, 5), (123, 561, 4489, 7)]:
        comp = sample_completion(snap, task, 1.0, 24, rollout_rng(*key))
        assert list(comp.token_ids) == _w0_oracle(*key, 12, vocab.eos_id, 24)


def test_uniform_policy_sample_fixed_sequence():
    # Pinned values of the replay above so that a change in the rng scheme is noticed.
    vocab = make_vocabulary(4, 3)
    snap = PolicySnapshot(PolicyParams.zeros(12, 2, 4), vocab)
    comp = sample_completion(snap, make_task(4), 1.0, 24, rollout_rng(7, 3, 11, 5))
    assert comp.token_ids == (10, 11, 6, 10, 7, 2, 7, 2, 1, 4)  # ends at <eos> (id 4)
    assert all(lp == pytest.approx(math.log(1 / 12), abs=1e-15) for lp in comp.step_logprobs)


def test_sampling_deterministic(rng):
    snap = random_snapshot(rng)
    task = make_task(5)
    a = sample_completion(snap, task, 1.0, 20, rollout_rng(1, 2, 3, 4))
    b = sample_completion(snap, task, 1.0, 20, rollout_rng(1, 2, 3, 4))
    assert a == b


def test_sample_logprob_consistency(rng):
    snap = random_snapshot(rng, k=3)
    for i in range(20):
        task = make_task(5, seed=i)
        temp = 0.7 + 0.1 * (i % 5)
        comp = sample_completion(snap, task, temp, 16, rollout_rng(9, 0, i, 0))
        assert abs(comp.logprob - sequence_logprob(snap.params, task, comp.token_ids, temp)) <= 1e-12


def test_batched_sampling_independent_of_batch_composition(rng):
    snap = random_snapshot(rng)
    task = make_task(5)
    rngs = [rollout_rng(5, 1, 2, i) for i in range(6)]
    batch = sample_completions(snap, task, rngs, 1.0, 12)
    for i in range(6):
        assert batch[i] == sample_completion(snap, task, 1.0, 12, rollout_rng(5, 1, 2, i))
    reversed_batch = sample_completions(snap, task, [rollout_rng(5, 1, 2, i) for i in reversed(range(6))], 1.0, 12)
    assert list(reversed(reversed_batch)) == batch


def test_sample_respects_max_len_and_eos(rng):
    snap = random_snapshot(rng)
    for i in range(30):
        comp = sample_completion(snap, make_task(5), 1.0, 5, rollout_rng(0, 0, i, 0))
        assert 1 <= len(comp) <= 5
        eos = snap.vocab.eos_id
        assert eos not in comp.token_ids[:-1]


def test_sample_requires_rng_and_valid_args(rng):
    snap = random_snapshot(rng)
    with pytest.raises(ValueError):
        sample_completion(snap, make_task(5), 1.0, 5, None)
    with pytest.raises(ValueError):
        sample_completion(snap, make_task(5), 0.0, 5, rollout_rng(0, 0, 0, 0))
    with pytest.raises(ValueError):
        sample_completion(snap, make_task(5), 1.0, 0, rollout_rng(0, 0, 0, 0))


def test_greedy_zero_policy_emits_token_zero():
    vocab = make_vocabulary(4, 16)
    snap = PolicySnapshot(PolicyParams.zeros(len(vocab), 2, 8), vocab)
    comp = greedy_completion(snap, make_task(8), 10)
    assert comp.token_ids == (0,) * 10


def test_snapshot_params_read_only(rng):
    snap = random_snapshot(rng)
    with pytest.raises(ValueError):
        snap.params.flat[0] = 1.0
    with pytest.raises(ValueError):
        snap.params.W[0, 0] = 1.0


def test_snapshot_roles():
    vocab = make_vocabulary(4, 4)
    snap = PolicySnapshot(PolicyParams.zeros(len(vocab), 1, 2), vocab)
    assert snap.as_role("reference").role == "reference"
    with pytest.raises(ValueError):
        snap.as_role("critic")


# --- format prior ---------------------------------------------------------------


def test_format_prior_greedy_output_is_well_formed():
    from grpo_mc.parser import validate_format
    from grpo_mc.tasks import gen_tasks

    vocab = make_vocabulary(4, 64)
    params = format_prior_params(vocab, 3, 8, strength=6.0, filler_noise=0.5, filler_pairs=4.0)
    snap = PolicySnapshot(params, vocab)
    for task in gen_tasks("xmodal", 20, 4, 0.1, seed=3):
        assert validate_format(greedy_completion(snap, task, 24).text)


def test_format_prior_deterministic_in_seed():
    vocab = make_vocabulary(4, 16)
    a = format_prior_params(vocab, 3, 8, filler_noise=0.5, filler_pairs=4.0, seed=1)
    b = format_prior_params(vocab, 3, 8, filler_noise=0.5, filler_pairs=4.0, seed=1)
    c = format_prior_params(vocab, 3, 8, filler_noise=0.5, filler_pairs=4.0, seed=2)
    assert a.flat.tobytes() == b.flat.tobytes()
    assert a.flat.tobytes() != c.flat.tobytes()


# --- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    snap = random_snapshot(rng, k=3, d_task=8)
    path = tmp_path / "a.ckpt"
    write_checkpoint(snap, path)
    back = read_checkpoint(path)
    assert back.vocab == snap.vocab
    assert (back.params.V, back.params.k, back.params.d_task) == (snap.params.V, 3, 8)
    assert back.params.flat.tobytes() == snap.params.flat.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=10 * 11, max_size=10 * 11))
def test_checkpoint_round_trip_exact_floats(tmp_path_factory, values):
    vocab = make_vocabulary(4, 1)
    snap = PolicySnapshot(PolicyParams(np.array(values), 10, 1, 1), vocab)
    path = tmp_path_factory.mktemp("ck") / "x.ckpt"
    write_checkpoint(snap, path)
    assert read_checkpoint(path).params.flat.tobytes() == snap.params.flat.tobytes()


def test_checkpoint_zero_policy_format(tmp_path):
    vocab = make_vocabulary(4, 1)
    snap = PolicySnapshot(PolicyParams.zeros(10, 2, 4), vocab)
    path = tmp_path / "z.ckpt"
    write_checkpoint(snap, path)
    lines = path.read_text().splitlines()
    assert lines[1] == "10 24 2 4"
    assert lines[2].split() == list(vocab.tokens)
    body = lines[3:]
    assert len(body) == 10
    assert all(float(x) == 0.0 for row in body for x in row.split())


def _written(tmp_path, rng):
    snap = random_snapshot(rng, n_fillers=1, k=1, d_task=2)
    path = tmp_path / "c.ckpt"
    write_checkpoint(snap, path)
    return path, path.read_text().splitlines()


def test_checkpoint_dims_mismatch_names_line(tmp_path, rng):
    path, lines = _written(tmp_path, rng)
    lines[1] = "10 13 1 2"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointError, match="line 2"):
        read_checkpoint(path)


def test_checkpoint_short_row_names_line(tmp_path, rng):
    path, lines = _written(tmp_path, rng)
    lines[5] = " ".join(lines[5].split()[:-1])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointError, match="line 6"):
        read_checkpoint(path)


def test_checkpoint_missing_rows(tmp_path, rng):
    path, lines = _written(tmp_path, rng)
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(CheckpointError, match="weight rows"):
        read_checkpoint(path)


def test_checkpoint_bad_number_and_header(tmp_path, rng):
    path, lines = _written(tmp_path, rng)
    bad = list(lines)
    bad[4] = bad[4].replace(bad[4].split()[0], "zebra", 1)
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(CheckpointError, match="line 5"):
        read_checkpoint(path)
    path.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError, match="line 1"):
        read_checkpoint(path)


def test_checkpoint_missing_file_mentions_path(tmp_path):
    missing = tmp_path / "nope.ckpt"
    with pytest.raises(CheckpointError, match="nope.ckpt"):
        read_checkpoint(missing)


def test_completion_logprob_is_sum():
    c = Completion((1, 2), (-0.5, -0.25), "x")
    assert c.logprob == -0.75
    assert len(c) == 2
