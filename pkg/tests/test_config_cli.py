import json

import numpy as np
import pytest

from fragforge.chem import write_xyz
from fragforge.cli import EXIT_CONFIG, EXIT_OK, main
from fragforge.config import ConfigError, RunConfig, apply_overrides, load_config, parse_config, serialize_config

from conftest import ETHANE

TINY = ["total_steps=60", "workers=2", "rollout_steps=32", "minibatch_size=16", "epochs=1",
        "eval_start=50", "eval_samples=1", "hidden=16", "multiset_dim=8", "n_atom_basis=8",
        "n_filters=12", "n_interactions=1", "n_rbf=16", "manifest=toy"]


def _ov(items):
    return [x for it in items for x in ("--override", it)]


def test_defaults():
    cfg = parse_config("")
    ppo, pol = cfg.ppo(), cfg.policy()
    assert (ppo.clip_epsilon, ppo.grad_clip, ppo.gae_lambda, ppo.value_coef, ppo.entropy_coef) == (
        0.2, 0.5, 0.97, 0.5, 0.01)
    assert (ppo.epochs, ppo.learning_rate, ppo.gamma, ppo.minibatch_size, ppo.workers) == (5, 3e-4, 1.0, 100, 8)
    assert pol.hidden == 128 and pol.distance_range == (1.10, 2.10)
    e = pol.embedder
    assert (e.cutoff, e.n_interactions, e.n_filters, e.n_atom_basis) == (5.0, 3, 128, 64)


def test_overrides_and_types():
    cfg = apply_overrides(RunConfig(), ["clip_epsilon=0.3", "adapter.timeout=5", "adam_betas=[0.8, 0.99]"])
    assert cfg.clip_epsilon == 0.3 and cfg.adapter.timeout == 5.0 and cfg.ppo().adam_betas == (0.8, 0.99)
    assert parse_config("epochs: 3\nreward_floor: null\n").reward_floor is None
    for bad in (["nonsense=1"], ["adapter.nope=1"], ["epochs"], ["epochs=1.5"], ["normalize_advantages=1"],
                ["distance_range=[2, 1]"], ["backend=dft"], ["workers=0"], ["adam_betas=[1]"]):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), bad)
    with pytest.raises(ConfigError):
        parse_config("epochs: [\n")
    with pytest.raises(ConfigError):
        parse_config("- 1\n")


def test_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), ["seed=7", "sigma_d=0.1", "manifest=toy"])
    assert parse_config(serialize_config(cfg)) == cfg
    (tmp_path / "lib.yaml").write_text("x")
    (tmp_path / "c.yaml").write_text("manifest: lib.yaml\n")
    assert load_config(tmp_path / "c.yaml").manifest == str((tmp_path / "lib.yaml").resolve())
    (tmp_path / "d.yaml").write_text("manifest: drug1\n")
    assert load_config(tmp_path / "d.yaml").manifest == "drug1"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_external_backend_needs_command():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["backend=external"]).make_backend()


def test_validate_and_energy(tmp_path, capsys):
    f = tmp_path / "ethane.xyz"
    f.write_text(write_xyz(ETHANE))
    assert main(["validate", str(f)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["bond_valid"] and out["reason"] == "ok" and out["formulas"] == ["C2H6"]
    assert main(["energy", str(f)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert np.isfinite(out["energy_kcal_mol"]) and out["backend"] == "surrogate"
    assert main(["validate", str(tmp_path / "none.xyz")]) == EXIT_CONFIG
    assert main(["energy", str(f), "--override", "bogus=1"]) == EXIT_CONFIG


def test_train_generate(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FRAGFORGE_WORKERS", raising=False)
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), "--seed", "3"] + _ov(TINY)) == EXIT_OK
    for name in ("config.yaml", "provenance.json", "metrics.jsonl", "checkpoints/step_0000000.npz",
                 "checkpoints/step_0000050.npz", "checkpoints/final.npz"):
        assert (run / name).exists(), name
    prov = json.loads((run / "provenance.json").read_text())
    assert prov["seed"] == 3 and prov["worker_seeds"] == [3, 4]
    assert load_config(run / "config.yaml").seed == 3
    ck = str(run / "checkpoints" / "final.npz")
    assert main(["generate", ck, "-n", "3", "--seed", "1", "--out", str(tmp_path / "g1")]) == EXIT_OK
    assert main(["generate", ck, "-n", "3", "--seed", "1", "--out", str(tmp_path / "g2")]) == EXIT_OK
    for k in range(3):
        a = (tmp_path / "g1" / f"mol_{k:04d}.xyz").read_bytes()
        assert a == (tmp_path / "g2" / f"mol_{k:04d}.xyz").read_bytes()
    assert json.loads((tmp_path / "g1" / "summary.json").read_text())["n_samples"] == 3
    assert main(["generate", str(tmp_path / "nope.npz")]) == EXIT_CONFIG


def test_zero_steps_and_bad_config(tmp_path):
    run = tmp_path / "z"
    assert main(["train", "--out", str(run)] + _ov(TINY + ["total_steps=0"])) == EXIT_OK
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_0000000.npz"]
    assert main(["train", "--out", str(run), "--override", "manifest=missing_set"]) == EXIT_CONFIG
    assert main(["train", "--out", str(run), "--override", "wat=1"]) == EXIT_CONFIG
    (tmp_path / "bad.yaml").write_text("epochs: many\n")
    assert main(["train", "--config", str(tmp_path / "bad.yaml")]) == EXIT_CONFIG
