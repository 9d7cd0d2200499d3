"""Smoke test for the groove Python module.

Build and install it first:

    pip install maturin
    pip install --no-build-isolation ./crates/python
"""

import json
import random

import groove


def performance(rng, steps=32, tempo=100.0):
    g = groove.GrooveTensor(steps, tempo)
    for t in range(steps):
        for m in range(groove.NUM_INSTRUMENTS):
            if rng.random() < (0.7 if m == 2 else 0.15):
                g.set_hit(t, m, 0.9 if t % 4 == 0 else 0.5, 0.04 if t % 2 == 0 else -0.08)
    return g


def main():
    rng = random.Random(0)
    corpus = [performance(rng) for _ in range(12)]
    truth = corpus[0]

    score = groove.to_score(truth)
    assert score.hits == truth.hits
    assert all(v == 0.0 for row in score.velocities for v in row)

    back = groove.from_midi(truth.to_midi(), steps=32)
    assert back.hits == truth.hits

    partial = groove.remove_voice(truth, "hihat")
    assert not any(row[2] or row[3] for row in partial.hits)

    taps = groove.flatten_to_taps(truth)
    assert sum(tap is not None for tap in taps) == sum(any(row) for row in truth.hits)

    nearest = groove.knn_humanize(score, corpus, 3)
    assert nearest.hits == score.hits

    for family in ["quantized", "linear", "knn", "mlp", "seq2seq"]:
        model = groove.Model.train(corpus, family=family, k=3, steps=5, dims=8, hidden=16, batch_size=4)
        out = model.humanize(score)
        assert out.hits == score.hits, family
        print(f"{family:<10} timing MAE {groove.timing_mae_ms(out, truth):6.2f} ms")

    infill = groove.Model.train(corpus, family="seq2seq", task="infill", steps=5, dims=8, batch_size=4)
    filled = infill.infill(partial)
    assert all(filled.hits[t][m] == truth.hits[t][m] for t in range(32) for m in range(9) if m not in (2, 3))

    drums = groove.Model.train(corpus, family="seq2seq", task="tap2drum", steps=5, dims=8, batch_size=4)
    generated = drums.tap2drum(taps, tempo_bpm=100.0)
    assert all(-0.5 <= o < 0.5 for row in generated.offsets for o in row)

    report = json.loads(groove.evaluate(corpus, corpus, resamples=50))
    assert report["mae_ms"]["value"] == 0.0
    assert groove.gaussian_kl(0.0, 1.0, 0.0, 1.0) == 0.0

    try:
        groove.Model.train(corpus, family="knn", task="infill")
    except ValueError:
        pass
    else:
        raise AssertionError("knn cannot infill")

    print("smoke test passed")


if __name__ == "__main__":
    main()
