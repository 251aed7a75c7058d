import json

import numpy as np
import pytest

from vitcae import diagnostics as dg
from vitcae.errors import ContractError, TrainingError
from vitcae.trainer import Trainer, random_patch_mask, train


def test_zero_epochs_gives_initial_checkpoint(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(epochs=0)
    res = train(cfg, tmp_path, figures=False)
    assert res.checkpoint.is_file() and res.records == []
    assert (tmp_path / "diagnostics.csv").read_text() == ",".join(dg.CSV_HEADER) + "\n"
    fresh = Trainer(cfg)
    back = Trainer.from_checkpoint(res.checkpoint)
    for k, p in fresh.model.named_parameters().items():
        assert np.array_equal(p.data, back.model.named_parameters()[k].data), k


def test_one_epoch_writes_a_row_per_head(tiny_cfg, tmp_path):
    res = train(tiny_cfg.replace(epochs=1), tmp_path, figures=False)
    lines = res.diagnostics.read_text().splitlines()
    assert lines[0] == "epoch,layer,head,drift,kappa,tau,frozen"
    assert len(lines) == 1 + 2 * 2
    assert [tuple(line.split(",")[:3]) for line in lines[1:]] == [("1", "0", "0"), ("1", "0", "1"),
                                                                 ("1", "1", "0"), ("1", "1", "1")]
    summary = json.loads((tmp_path / "diagnostics.json").read_text())
    assert summary["epochs"] == 1 and len(summary["heads"]) == 4
    assert (tmp_path / "losses.csv").is_file()


def test_csv_reload_reproduces_records(tiny_cfg, tmp_path):
    res = train(tiny_cfg, tmp_path, figures=False)
    back = dg.read_csv(res.diagnostics)
    assert [r.row() for r in back] == [r.row() for r in res.records]
    assert dg.records_to_csv(back) == res.diagnostics.read_text()


def test_export_requires_records(tmp_path):
    with pytest.raises(ContractError):
        dg.export_diagnostics([], tmp_path)


def test_scheduled_tau_follows_drift(tiny_cfg):
    tr = Trainer(tiny_cfg)
    tr.fit()
    for layer in tr.heads:
        for s in layer:
            assert s.tau == pytest.approx(1.0 / (1.0 + s.drift_history[-1]), rel=1e-12)
            assert len(s.drift_history) == len(s.kappa_history) == 2


def test_unscheduled_tau_stays_one(tiny_cfg):
    tr = Trainer(tiny_cfg.replace(temperature_schedule=False))
    tr.fit()
    assert np.all(tr.model.taus() == 1.0)
    assert all(r.tau == 1.0 for r in tr.records)


def test_freezing_disabled_keeps_count(tiny_cfg):
    tr = Trainer(tiny_cfg.replace(drift_threshold=0.0, epochs=8))
    tr.fit()
    counts = {e["trainable_params"] for e in tr.epoch_logs}
    assert counts == {tr.model.total_count()}
    assert not any(r.frozen for r in tr.records)


def test_forced_freeze_is_sticky_and_count_drops(tiny_cfg):
    class EagerFreeze(Trainer):
        def control_step(self, epoch):
            super().control_step(epoch)
            s = self.heads[1][0]
            if epoch == 1 and not s.frozen:
                self.freeze(s, epoch)

    tr = EagerFreeze(tiny_cfg.replace(epochs=3))
    before = tr.model.trainable_count()
    tr.fit()
    D, h = tiny_cfg.embed_dim, tiny_cfg.n_heads
    assert before - tr.epoch_logs[0]["trainable_params"] == 3 * D * (D // h) + 1
    flags = [r.frozen for r in tr.records if (r.layer, r.head) == (1, 0)]
    assert flags == [True, True, True]
    counts = [e["trainable_params"] for e in tr.epoch_logs]
    assert counts == sorted(counts, reverse=True)


def test_checkpoint_round_trip_resumes_identically(tiny_cfg, tmp_path):
    full = Trainer(tiny_cfg.replace(epochs=2))
    full.fit()
    half = Trainer(tiny_cfg.replace(epochs=2))
    half.fit(1)
    half.save_checkpoint(tmp_path / "c.npz")
    resumed = Trainer.from_checkpoint(tmp_path / "c.npz")
    resumed.fit(1)
    assert dg.records_to_csv(resumed.records) == dg.records_to_csv(full.records)
    for k, p in full.model.named_parameters().items():
        assert np.array_equal(p.data, resumed.model.named_parameters()[k].data), k


def test_non_finite_loss_aborts(tiny_cfg):
    tr = Trainer(tiny_cfg)
    tr.initialize()
    tr.model.named_parameters()["embed"].data[0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 1, step 0"):
        tr.run_epoch()


def test_checkpoint_write_failure(tiny_cfg, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(TrainingError, match="cannot write"):
        Trainer(tiny_cfg).save_checkpoint(blocker / "sub" / "c.npz")


def test_random_patch_mask_ratio():
    m = random_patch_mask(np.random.default_rng(0), 5, 16, 0.5)
    assert m.shape == (5, 16) and np.all(m.sum(axis=1) == 8)


def test_nan_loss_part_aborts(tiny_cfg, monkeypatch):
    tr = Trainer(tiny_cfg)
    orig = tr.model.loss_parts

    def poisoned(*a, **k):
        parts = orig(*a, **k)
        parts["kl_cls"] = parts["kl_cls"] * np.nan
        return parts

    monkeypatch.setattr(tr.model, "loss_parts", poisoned)
    with pytest.raises(TrainingError, match="non-finite loss at epoch 1, step 0"):
        tr.run_epoch()
