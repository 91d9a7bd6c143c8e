"""Acceptance suite.

One test per headline requirement; `pytest -v` therefore emits one
pass/fail line per requirement. Each test also prints a short summary
with the measured numbers.

The learning and direction tests train real models and take several
minutes each; everything else runs in seconds.
"""

import math
import time

import numpy as np
import pytest

from s2tp import config as C
from s2tp import dla
from s2tp import flops as F
from s2tp import harness as H
from s2tp import serialize as S
from s2tp import tensor as T
from s2tp.gradcheck import full_report
from s2tp.model import build_network
from s2tp.tensor import Tensor


def report(name, detail):
    print(f"[acceptance] {name}: {detail}")


# --------------------------------------------------------------------
# 1. Oracle equivalence of the greedy diversity selection
# --------------------------------------------------------------------

def oracle_order(A):
    """Brute-force greedy diversity ordering, written independently with
    plain loops over pairwise cosines."""
    n = len(A)
    rows = []
    for a in A:
        norm = math.sqrt(sum(v * v for v in a))
        rows.append([v / norm for v in a])
    sim = [[min(abs(sum(x * y for x, y in zip(rows[i], rows[j]))), 1.0)
            for j in range(n)] for i in range(n)]
    if n == 1:
        return [0]
    first, first_val = 0, None
    for i in range(n):
        worst = max(sim[i][j] for j in range(n) if j != i)
        if first_val is None or worst < first_val:
            first, first_val = i, worst
    order = [first]
    while len(order) < n:
        pick, pick_val = None, None
        for i in range(n):
            if i in order:
                continue
            worst = max(sim[i][j] for j in order)
            if pick_val is None or worst < pick_val:
                pick, pick_val = i, worst
        order.append(pick)
    return order


def test_oracle_equivalence_1000_instances():
    gen = np.random.default_rng(42)
    start = time.time()
    checked = 0
    for _ in range(1000):
        n = int(gen.integers(1, 33))
        m = int(gen.integers(1, 17))
        A = gen.uniform(0.01, 1.0, size=(n, m))
        Z = gen.standard_normal((n, 2))
        want = oracle_order(A)
        # Prefix stability makes the full ordering cover every k'.
        got = dla.select_diverse(Z, A, n).ids
        assert got == want
        for k in range(1, n):
            assert dla.select_diverse(Z, A, k).ids == want[:k]
        checked += 1
    elapsed = time.time() - start
    report("oracle-equivalence", f"{checked}/1000 instances, all k', {elapsed:.1f}s")
    assert elapsed < 10.0


# --------------------------------------------------------------------
# 2. Selection invariances
# --------------------------------------------------------------------

def test_selection_invariances():
    gen = np.random.default_rng(7)
    A = gen.uniform(0.01, 1.0, size=(20, 12))
    Z = gen.standard_normal((20, 4))
    # Row-scale invariance, of S and of the selection, exact.
    scales = gen.uniform(0.25, 4.0, size=(20, 1))
    assert np.allclose(dla.similarity(A), dla.similarity(A * scales), atol=0)
    base = dla.select_diverse(Z, A, 20).ids
    assert dla.select_diverse(Z, A * scales, 20).ids == base
    # Prefix stability in k'.
    for k in range(1, 20):
        assert dla.select_diverse(Z, A, k).ids == base[:k]
    # Lowest-index tie-breaking on the all-equal-rows case.
    assert dla.select_diverse(np.zeros((6, 2)), np.ones((6, 3)), 4).ids == [0, 1, 2, 3]
    report("selection-invariances", "scale/prefix/tie-break all exact")


# --------------------------------------------------------------------
# 3. Gradient checks
# --------------------------------------------------------------------

def test_gradient_checks():
    start = time.time()
    results = list(full_report(dim=16))
    elapsed = time.time() - start
    worst = max(err for _, err in results)
    report("gradient-checks",
           f"{len(results)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")
    for name, err in results:
        assert err < 1e-5, f"{name}: {err:.3e}"
    assert elapsed < 60.0


# --------------------------------------------------------------------
# 4. Complexity realization (instrumented multiply-adds)
# --------------------------------------------------------------------

def encoder_cfg(n):
    cfg = C.defaults()
    cfg.update(d=16, heads=2, self_attn_layers=3, ffn_hidden=24, n_latents=n,
               train_latents=4, vocab=5, freq_bins=6, conv_channels=4,
               conv_kernel=3, dropout=0.0)
    return cfg


def measured_encode_macs(n, k, m):
    net = build_network(encoder_cfg(n), seed=0)
    x = np.random.default_rng(0).standard_normal((m, 6)).astype(np.float32)
    with T.no_grad(), T.count_macs() as c:
        net.encoder.encode(net.frontend(Tensor(x)), latent_ids=np.arange(k))
    return c.macs


def test_complexity_realization():
    # Independent of n given fixed (k, m, mu).
    counts = [measured_encode_macs(n, 8, 40) for n in (8, 16, 64)]
    assert counts[0] == counts[1] == counts[2]
    # Exact quadratic in k for the self-attention stage.
    net = build_network(encoder_cfg(64), seed=0)
    d, mu = 16, 3

    def self_macs(k):
        z = Tensor(np.random.default_rng(1).standard_normal((k, d)).astype(np.float32))
        with T.no_grad(), T.count_macs() as c:
            net.encoder.self_stage(z)
        return c.macs

    ks = [4, 8, 12, 16, 20]
    s = [self_macs(k) for k in ks]
    second = [s[i + 2] - 2 * s[i + 1] + s[i] for i in range(len(s) - 2)]
    assert len(set(second)) == 1  # constant second difference: exact quadratic
    # The k^2 coefficient is 2*mu*d MACs (scores + weighted sums per
    # layer); a quadratic a*k^2 has constant second difference 2a*step^2.
    step = ks[1] - ks[0]
    assert second[0] == 2 * (2 * mu * d) * step * step

    # Exact linear in m for the cross term.
    def cross_macs(m):
        x = Tensor(np.random.default_rng(2).standard_normal((m, d)).astype(np.float32))
        with T.no_grad(), T.count_macs() as c:
            net.encoder.cross_stage(x)
        return c.macs

    ms = [10, 20, 30, 50]
    cr = [cross_macs(m) for m in ms]
    slope = (cr[1] - cr[0]) // (ms[1] - ms[0])
    assert all(cr[i] == cr[0] + slope * (ms[i] - ms[0]) for i in range(len(ms)))
    report("complexity-realization",
           f"encode macs n-independent ({counts[0]}), self quadratic "
           f"(2nd diff {second[0]}), cross linear (slope {slope}/frame)")


# --------------------------------------------------------------------
# 5. FLOPS model
# --------------------------------------------------------------------

def instrumented_flops(net, source, tokens, k_prime):
    from s2tp.decoder import SPECIAL_TOKENS

    out = {}
    with T.no_grad():
        with T.count_macs() as c:
            x = net.frontend(Tensor(np.asarray(source, dtype=np.float32)))
        out["input_processor"] = c.flops
        with T.count_macs() as c:
            z_cross, _ = net.encoder.cross_stage(x)
        out["encoder_cross_attention"] = c.flops
        with T.count_macs() as c:
            z = net.encoder.self_stage(Tensor(z_cross.data[:k_prime]))
        out["encoder_self_attention"] = c.flops
        targets = [1] + [t + SPECIAL_TOKENS for t in tokens] + [2]
        with T.count_macs() as c:
            hidden = net.decoder.hidden_states(targets[:-1], z)
        out["decoder"] = c.flops
        with T.count_macs() as c:
            net.decoder.project(hidden)
        out["output_projection"] = c.flops
    return out


def test_flops_model():
    lengths = F.default_lengths()
    spec = F.ModelSpec()
    assert F.corpus_ratio(spec, spec, lengths) == 1.0
    baseline = F.ModelSpec(family="transformer", self_attn_layers=5,
                           conv_strides=(2, 2))
    ks = (64, 32, 16, 8, 4)
    ratios = [F.corpus_ratio(F.ModelSpec(n_latents=64, k_prime=k), baseline, lengths)
              for k in ks]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 1.0  # small k' crosses below the baseline
    # Analytic equals instrumented, exactly, per component.
    cfg = encoder_cfg(8)
    cfg.update(decoder_layers=2)
    net = build_network(cfg, seed=0)
    source = np.random.default_rng(3).standard_normal((23, 6))
    tokens = [0, 4, 1, 1]
    for k_prime in (3, 8):
        got = instrumented_flops(net, source, tokens, k_prime)
        want = F.cost(net.model_spec(k_prime=k_prime), 23, len(tokens) + 1).components
        assert got == want
    report("flops-model",
           "self ratio 1.0 exact; ratios " +
           ", ".join(f"k'={k}:{r:.2f}" for k, r in zip(ks, ratios)) +
           "; instrumented == analytic")


# --------------------------------------------------------------------
# 6-8. Trained-model criteria (shared session fixtures)
# --------------------------------------------------------------------

def train_model(cfg, seed):
    cfg = dict(cfg)
    cfg["seed"] = seed
    task = H.ToyTask.from_config(cfg)
    train_data = H.generate_dataset(task, cfg["train_examples"], split=0)
    valid_data = H.generate_dataset(task, cfg["valid_examples"], split=1)
    net = build_network(cfg, seed=seed)
    start = time.time()
    result = H.train(net, train_data, valid_data, H.TrainConfig.from_config(cfg))
    return net, valid_data, result, time.time() - start


def default_cfg(train_latents):
    cfg = C.defaults()
    cfg.update(train_latents=train_latents, stop_accuracy=0.95, max_epochs=10)
    return cfg


def lean_cfg(train_latents):
    """Reduced corpus for the multi-seed direction criteria: same model
    shape (d=64, mu=4, n=64), shorter sequences and fewer examples."""
    cfg = C.defaults()
    cfg.update(train_latents=train_latents, t_min=4, t_max=10,
               frames_per_token=4, train_examples=1200, valid_examples=200,
               warmup_steps=200, max_epochs=10, stop_accuracy=0.96)
    return cfg


@pytest.fixture(scope="session")
def default_trained():
    out = {}
    for k in (16, 64):
        out[k] = train_model(default_cfg(k), seed=0)
    return out


@pytest.fixture(scope="session")
def lean_trained():
    out = {}
    for seed in (0, 1, 2):
        for k in (16, 64):
            net, valid, _, _ = train_model(lean_cfg(k), seed=seed)
            out[seed, k] = (net, valid)
    return out


def test_toy_task_learning(default_trained):
    for k, (net, valid, result, elapsed) in default_trained.items():
        best = max(m.valid_token_acc for m in result.metrics)
        report("toy-task-learning",
               f"k={k}: best token accuracy {best:.3f} in {elapsed:.0f}s "
               f"({len(result.metrics)} epochs)")
        assert best >= 0.95, f"k={k} reached only {best:.3f}"
        assert elapsed < 900.0, f"k={k} took {elapsed:.0f}s"


def test_dla_training_enables_latent_reduction(lean_trained):
    # At k' = n/4 with diverse selection, the model trained with random
    # latent subsampling (k = n/4) stays within 2 points of its own
    # full-latent accuracy; the k = n model degrades strictly more.
    n_quarter = 16
    drops = {16: [], 64: []}
    for k in (16, 64):
        for seed in (0, 1, 2):
            net, valid = lean_trained[seed, k]
            full = H.evaluate(net, valid)["token_accuracy"]
            reduced = H.evaluate(net, valid, "diverse", n_quarter)["token_accuracy"]
            drops[k].append(full - reduced)
    dla_drop = float(np.mean(drops[16]))
    full_drop = float(np.mean(drops[64]))
    report("dla-latent-reduction",
           f"mean drop at k'=16: DLA-trained {dla_drop * 100:.2f} pts, "
           f"full-trained {full_drop * 100:.2f} pts (3 seeds)")
    assert dla_drop <= 0.02
    assert full_drop > dla_drop


def test_diverse_selection_beats_random(lean_trained):
    gaps = {}
    for k_prime in (8, 16):  # n/8 and n/4
        diffs = []
        for seed in (0, 1, 2):
            net, valid = lean_trained[seed, 16]
            div = H.evaluate(net, valid, "diverse", k_prime)["token_accuracy"]
            rnd = H.evaluate(net, valid, "random", k_prime,
                             rng=np.random.default_rng((seed, 9)))["token_accuracy"]
            diffs.append(div - rnd)
        gaps[k_prime] = float(np.mean(diffs))
    report("diverse-vs-random",
           f"mean gap k'=8: {gaps[8] * 100:.2f} pts, k'=16: {gaps[16] * 100:.2f} pts")
    assert gaps[8] >= 0.0 and gaps[16] >= 0.0
    assert gaps[8] > gaps[16]


# --------------------------------------------------------------------
# 9. Serialization
# --------------------------------------------------------------------

def test_serialization_round_trip(tmp_path):
    cfg = encoder_cfg(8)
    net = build_network(cfg, seed=0)
    state = net.state_tensors()
    path = str(tmp_path / "model.ckpt")
    S.save_checkpoint(path, cfg, state)
    loaded_cfg, loaded = S.load_checkpoint(path)
    assert loaded_cfg == cfg
    assert set(loaded) == set(state)
    for name in state:
        assert loaded[name].tobytes() == state[name].tobytes()
    averaged = H.average_checkpoints([state, state, state])
    for name in state:
        assert averaged[name].tobytes() == state[name].tobytes()
    report("serialization", "round-trip bit-identical; duplicate averaging idempotent")
