"""Smoke test for the `dogrpo` extension module.

Builds expect the compiled library at ../target/{release,debug}/libdogrpo.so;
the freshest one is copied next to this file as dogrpo.so before import.

Run:  cargo build --release -p dogrpo-py && python3 python/smoke_test.py
"""

import os
import shutil
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)


def stage_module():
    candidates = [
        os.path.join(ROOT, "target", profile, "libdogrpo.so")
        for profile in ("release", "debug")
    ]
    built = [p for p in candidates if os.path.exists(p)]
    if not built:
        sys.exit("build the bindings first: cargo build --release -p dogrpo-py")
    newest = max(built, key=os.path.getmtime)
    staged = os.path.join(HERE, "dogrpo.so")
    if not os.path.exists(staged) or os.path.getmtime(staged) < os.path.getmtime(newest):
        shutil.copy2(newest, staged)


stage_module()
sys.path.insert(0, HERE)
import dogrpo  # noqa: E402


def main():
    prompt = dogrpo.generate_prompt(12, "single")
    print("prompt:", prompt.text)

    # The hand-built oracle response scores perfectly.
    oracle = dogrpo.oracle(prompt)
    rewards = oracle.rewards()
    assert rewards["r_sa"] == 2.0, rewards
    assert rewards["r_sp"] == 1.0, rewards
    assert rewards["r_ha"] == 3.0, rewards
    ppm = oracle.to_ppm()
    assert ppm.startswith("P3"), ppm[:20]

    # A parsed prompt round-trips through the grammar.
    reparsed = dogrpo.Prompt(prompt.text)
    assert reparsed.scene_json == prompt.scene_json

    # Fresh policy: sampling is deterministic, rollouts score sanely.
    policy = dogrpo.Policy(seed=7)
    a = policy.sample(prompt, 4, 99)
    b = policy.sample(prompt, 4, 99)
    assert [r.text for r in a] == [r.text for r in b]
    for r in a:
        assert 0.0 <= r.rewards()["r_ha"] <= 3.0

    # One training step moves the metrics machinery.
    batch = [dogrpo.generate_prompt(2 * i + 1, "single") for i in range(2)]
    report = policy.train_step(batch, seed=5)
    assert "objective" in report and "grad_norm" in report
    assert report["grad_norm"] <= 1.0 + 1e-9

    # Checkpoint round-trip preserves greedy behavior.
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ckpt.json")
        policy.save(path)
        loaded = dogrpo.Policy.load(path)
        assert loaded.greedy(prompt).text == policy.greedy(prompt).text

    ev = policy.evaluate(3, seed=1)
    assert ev["n_prompts"] == 3
    print("evaluate:", ev)
    print("smoke test passed")


if __name__ == "__main__":
    main()
