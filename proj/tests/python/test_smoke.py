# Copyright 2026 The aLoRA Engine Authors.
# SPDX-License-Identifier: Apache-2.0

import pytest

import alora

INVOCATION = [1, 2]


def small_config():
    return alora.ModelConfig(n_layers=2, n_heads=2, d_model=16, vocab_size=128,
                             max_positions=512)


@pytest.fixture(scope="module")
def engine():
    return alora.Engine(alora.Model.random(small_config(), seed=3))


def adapter(seed=5, mode="alora", **kw):
    inv = INVOCATION if mode == "alora" else []
    return alora.random_adapter(small_config(), seed, mode=mode, rank=4,
                                invocation=inv, **kw)


def test_config_defaults_and_validation():
    c = alora.ModelConfig()
    assert (c.n_layers, c.n_heads, c.d_model, c.vocab_size) == (4, 4, 64, 256)
    assert c.kv_row_bytes == 4 * 2 * 64 * 4
    with pytest.raises(alora.ConfigError):
        alora.ModelConfig(n_heads=3, d_model=16)
    assert issubclass(alora.ConfigError, alora.Error)


def test_model_round_trip(tmp_path):
    m = alora.Model.random(small_config(), seed=1)
    path = tmp_path / "m.alre"
    m.save(path)
    assert alora.Model.load(path).to_bytes() == m.to_bytes()
    assert alora.Model.random(small_config(), seed=1).to_bytes() == m.to_bytes()
    with pytest.raises(alora.IoError):
        alora.Model.load(tmp_path / "missing.alre")


def test_adapter_round_trip_and_invocation(tmp_path):
    a = adapter()
    path = tmp_path / "a.alad"
    a.save(path)
    assert alora.Adapter.load(path) == a
    assert a.mode == "alora" and a.rank == 4
    assert a.targets == ["q", "k", "v"]
    assert alora.find_invocation([20, 1, 2, 30, 1, 2, 40], a) == 5


def test_cache_reuse_matches_scratch(engine):
    prompt = list(range(20, 40))
    base = engine.generate(prompt, min_new_tokens=4, max_new_tokens=4)
    assert base.cache.length == len(prompt) + 4
    assert set(base.cache.provenance()) == {"Base"}

    a = adapter()
    extra = INVOCATION + [50, 51]
    reused = engine.invoke_intrinsic(base.cache, extra, a, min_new_tokens=6,
                                     max_new_tokens=6, record_logits=True)
    full = base.cache.token_ids() + extra
    scratch = engine.generate(full, a, min_new_tokens=6, max_new_tokens=6,
                              record_logits=True)
    assert reused.new_tokens == scratch.new_tokens
    assert reused.logits == scratch.logits
    assert reused.t_invoke == len(full) - len(extra) + 1
    assert reused.first_token_cost["rows_projected_fresh"] == len(extra) + 1


def test_kv_prefix_is_base(engine):
    a = adapter(b_std=0.5)
    prompt = list(range(30, 50)) + INVOCATION + [60, 61]
    base = engine.prefill(prompt)
    adapted = engine.prefill(prompt, a)
    t = adapted.t_invoke
    assert t == 21
    for layer in range(2):
        for pos in range(t):
            assert base.cache.key_row(layer, pos) == adapted.cache.key_row(layer, pos)
            assert base.cache.value_row(layer, pos) == adapted.cache.value_row(layer, pos)
        assert base.cache.key_row(layer, t) != adapted.cache.key_row(layer, t)


def test_not_invoked(engine):
    with pytest.raises(alora.NotInvoked):
        engine.prefill([20, 21, 22], adapter())


def test_fanout_memory_and_prediction(engine):
    base = engine.prefill(list(range(20, 84)))
    adapters = [adapter(seed=10 + i, id=i + 1) for i in range(3)]
    extras = [INVOCATION + [70 + i] * 14 for i in range(3)]
    results = engine.fanout(base.cache, adapters, extras, max_new_tokens=1)
    assert len(results) == 3
    row = small_config().kv_row_bytes
    for r in results:
        assert r.first_token_cost["cache_bytes_incremental"] == 16 * row
        predicted = alora.predict_first_token(small_config(), 64, 16, rank=4)
        assert predicted["total_flops"] == r.first_token_cost["total_flops"]


def test_prediction_scaling():
    c = alora.ModelConfig(max_positions=1 << 20)
    lo = alora.predict_first_token(c, 8192, 16, mode="lora")
    hi = alora.predict_first_token(c, 16384, 16, mode="lora")
    assert hi["attention_score_flops"] / lo["attention_score_flops"] == pytest.approx(4, rel=0.01)
    al_lo = alora.predict_first_token(c, 8192, 16)
    al_hi = alora.predict_first_token(c, 16384, 16)
    assert al_hi["attention_score_flops"] / al_lo["attention_score_flops"] == pytest.approx(2, rel=0.01)


def test_train_and_evaluate():
    model = alora.Model.random(small_config(), seed=2)
    data = alora.make_synthetic_task("copy_key", 32, seed=1)
    assert data == alora.make_synthetic_task("copy_key", 32, seed=1)
    trained, history = alora.train(model, data, steps=5, rank=4, eval_every=0,
                                   invocation=alora.task_invocation("copy_key"))
    assert len(history) == 5
    assert history[-1]["eval_exact_match"] is not None
    assert 0.0 <= alora.exact_match(model, data, trained) <= 1.0
    again, _ = alora.train(model, data, steps=5, rank=4, eval_every=0,
                           invocation=alora.task_invocation("copy_key"))
    assert again.to_bytes() == trained.to_bytes()


def test_verify_and_bench():
    ok, report = alora.verify(trials=2, seed=1, config=small_config())
    assert ok and "PASS" in report
    csv = alora.run_bench(alora.Model.random(small_config(), seed=4),
                          prompt_lengths=[16, 32], answer_tokens=4, eval_tokens=2,
                          new_tokens=4, n_adapters=[1], lora_rank=4, alora_rank=4,
                          repetitions=1)
    lines = csv.strip().split("\n")
    assert lines[0].startswith("mode,seed,T_cache")
    assert len(lines) == 1 + 4
    for line in lines[1:]:
        f = line.split(",")
        assert f[5] == f[9] and f[7] == f[10]
