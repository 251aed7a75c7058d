"""Epoch loop: optimisation, head diagnostics, temperature control and freezing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import TrainConfig, config_to_dict
from .data import Dataset, make_dataset
from .diagnostics import DiagnosticsRecord, export_diagnostics, records_to_csv
from .dynamics import (
    EfficiencyLedger,
    HeadState,
    check_converged,
    cls_patch_rows,
    consensus_rank,
    freeze_head,
    mean_drift,
    update_temperature,
)
from .errors import NumericDomainError, TrainingError
from .latent import total_loss
from .model import ViTCAE
from .optim import AdamW, ReduceLROnPlateau, clip_grad_norm

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
TAU_FLOOR = 1e-3


@dataclass
class TrainResult:
    checkpoint: Path | None
    diagnostics: Path | None
    records: list[DiagnosticsRecord] = field(default_factory=list)
    epoch_logs: list[dict] = field(default_factory=list)


def random_patch_mask(rng: np.random.Generator, batch: int, n_patches: int, ratio: float = 0.5) -> np.ndarray:
    k = int(round(ratio * n_patches))
    mask = np.zeros((batch, n_patches), dtype=bool)
    for i in range(batch):
        mask[i, rng.choice(n_patches, size=k, replace=False)] = True
    return mask


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        nx.set_default_dtype(cfg.precision)
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.model = ViTCAE(cfg, seed=int(seeds[0].generate_state(1)[0]))
        self.rng = np.random.default_rng(seeds[1])
        pc = self.model.pc
        self.train_set: Dataset = make_dataset(cfg.dataset, cfg.dataset_size, pc.channels, pc.image_h, pc.image_w, cfg.seed)
        self.heldout: Dataset = make_dataset(cfg.dataset, cfg.heldout_size, pc.channels, pc.image_h, pc.image_w, cfg.seed + 7919)
        probe_rng = np.random.default_rng(seeds[2])
        k = min(cfg.probe_size, len(self.train_set))
        self.probe_idx = np.sort(probe_rng.choice(len(self.train_set), size=k, replace=False))
        self.probe = self.train_set.images[self.probe_idx]
        self.optimizer = AdamW(self.model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.plateau = ReduceLROnPlateau(self.optimizer, cfg.plateau_factor, cfg.plateau_patience)
        self.policy = cfg.freeze_policy()
        self.weights = cfg.loss_weights()
        self.heads = [[HeadState(l, h) for h in range(pc.n_heads)] for l in range(pc.n_layers)]
        self.ledger = EfficiencyLedger(total_params=self.model.total_count())
        self.records: list[DiagnosticsRecord] = []
        self.epoch_logs: list[dict] = []
        self.epoch = 0
        self._grid = pc.grid if cfg.ground_metric == "grid" else None
        self._initialized = False

    # -- diagnostics ---------------------------------------------------------------
    def snapshot(self) -> list[list[tuple[np.ndarray, np.ndarray]]]:
        """``(cls_rows, mean_attention)`` for every head on the probe batch."""
        record = self.model.attention_record(self.probe)
        return [[(cls_patch_rows(a), a.mean(axis=0)) for a in layer] for layer in record]

    def initialize(self) -> None:
        if self._initialized:
            return
        for layer_states, layer_snap in zip(self.heads, self.snapshot()):
            for state, (rows, mean_attn) in zip(layer_states, layer_snap):
                state.cls_snapshot = rows
                state.attn_snapshot = mean_attn
        self._initialized = True

    def heldout_mse(self) -> float:
        rec = np.clip(self.model.no_grad_reconstruct(self.heldout.images), 0.0, 1.0)
        return float(np.mean((rec - self.heldout.images) ** 2))

    # -- optimisation ------------------------------------------------------------------
    def optimizer_step(self) -> None:
        params = self.model.parameters()
        clip_grad_norm(params, self.cfg.grad_clip)
        self.optimizer.step()
        # keep learnable temperatures strictly positive
        for layer in self.model.layers:
            for t in layer.tau:
                if t.requires_grad and t.data[0] < TAU_FLOOR:
                    t.data[0] = TAU_FLOOR

    def train_epoch(self, epoch: int) -> dict[str, float]:
        cfg, model = self.cfg, self.model
        order = self.rng.permutation(len(self.train_set))
        with_mmd = epoch > self.weights.warmup_epochs
        sums: dict[str, float] = {}
        batches = 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            x = self.train_set.images[idx]
            mask = None
            if cfg.mask_prob > 0:
                m = random_patch_mask(self.rng, len(idx), model.pc.n_patches)
                m &= (self.rng.random(len(idx)) < cfg.mask_prob)[:, None]
                mask = m if m.any() else None
            try:
                x_rec, bundle = model.forward_train(x, self.rng, mask=mask)
                parts = model.loss_parts(x, x_rec, bundle, self.rng, with_mmd=with_mmd)
                loss = total_loss(epoch, parts, self.weights)
            except NumericDomainError as exc:
                raise TrainingError(f"non-finite values at epoch {epoch}, step {step}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            model.zero_grad()
            loss.backward()
            self.optimizer_step()
            batches += 1
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.item() if isinstance(v, nx.Tensor) else v)
            sums["total"] = sums.get("total", 0.0) + value
        means = {k: v / max(batches, 1) for k, v in sums.items()}
        if means:
            means["rec"] = self.weights.lambda_l1 * means["rec_l1"] + self.weights.lambda_l2 * means["rec_l2"]
        return means

    # -- control ------------------------------------------------------------------------
    def freeze(self, state: HeadState, epoch: int) -> int:
        return freeze_head(state, self.model.head_parameters(state.layer, state.head), epoch, self.ledger)

    def control_step(self, epoch: int) -> None:
        """Measure drift and consensus, reschedule temperatures, freeze converged heads."""
        snap = self.snapshot()
        cfg = self.cfg
        for layer_states, layer_snap in zip(self.heads, snap):
            for state, (rows, mean_attn) in zip(layer_states, layer_snap):
                d = mean_drift(state.cls_snapshot, rows, self._grid)
                kappa = consensus_rank(mean_attn, cfg.eps_eig)
                state.drift_history.append(d)
                state.kappa_history.append(kappa)
                state.cls_snapshot = rows
                state.attn_snapshot = mean_attn
                if cfg.temperature_schedule and not state.frozen:
                    tau = update_temperature(d, cfg.alpha_temp)
                    self.model.layers[state.layer].tau[state.head].data[0] = tau
                state.tau = float(self.model.layers[state.layer].tau[state.head].data[0])
                state.tau_history.append(state.tau)
        for layer_states in self.heads:
            for state in layer_states:
                if not state.frozen and check_converged(state, self.policy, epoch):
                    self.freeze(state, epoch)
                    log.info("epoch %d: froze head (%d, %d)", epoch, state.layer, state.head)

    def run_epoch(self) -> dict:
        self.initialize()
        epoch = self.epoch + 1
        losses = self.train_epoch(epoch)
        mse = self.heldout_mse()
        self.control_step(epoch)
        self.plateau.step(mse)
        trainable = self.model.trainable_count()
        for layer_states in self.heads:
            for s in layer_states:
                self.records.append(DiagnosticsRecord(
                    epoch, s.layer, s.head, s.drift_history[-1], s.kappa_history[-1], s.tau, s.frozen,
                    dict(losses), trainable,
                ))
        entry = {"epoch": epoch, "lr": self.optimizer.lr, "losses": losses, "heldout_mse": mse,
                 "trainable_params": trainable}
        self.epoch_logs.append(entry)
        self.epoch = epoch
        log.info("epoch %d: loss %.4f held-out mse %.5f trainable %d", epoch, losses.get("total", float("nan")), mse, trainable)
        return entry

    def fit(self, epochs: int | None = None) -> list[dict]:
        self.initialize()
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            self.run_epoch()
        return self.epoch_logs

    # -- persistence ------------------------------------------------------------------------
    def state_meta(self) -> dict:
        params = self.model.named_parameters()
        return {
            "version": CHECKPOINT_VERSION,
            "config": config_to_dict(self.cfg),
            "epoch": self.epoch,
            "requires_grad": {k: p.requires_grad for k, p in params.items()},
            "heads": [s.to_dict() for layer in self.heads for s in layer],
            "optimizer": self.optimizer.state_meta(),
            "plateau": self.plateau.state(),
            "ledger": {"total_params": self.ledger.total_params, "frozen_params": self.ledger.frozen_params,
                       "events": self.ledger.events},
            "records": [r.to_dict() for r in self.records],
            "epoch_logs": self.epoch_logs,
            "rng": self.rng.bit_generator.state,
        }

    def save_checkpoint(self, path) -> Path:
        path = Path(path)
        arrays = {f"param/{k}": p.data for k, p in self.model.named_parameters().items()}
        arrays.update(self.optimizer.state_arrays())
        for layer in self.heads:
            for s in layer:
                if s.cls_snapshot is not None:
                    arrays[f"snap_rows/{s.layer}.{s.head}"] = s.cls_snapshot
                    arrays[f"snap_attn/{s.layer}.{s.head}"] = s.attn_snapshot
        arrays["meta"] = np.frombuffer(json.dumps(self.state_meta(), sort_keys=True).encode(), dtype=np.uint8)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                np.savez(fh, **arrays)
        except OSError as exc:
            raise TrainingError(f"cannot write checkpoint {path}: {exc}") from exc
        return path

    @classmethod
    def from_checkpoint(cls, path) -> Trainer:
        from .config import TrainConfig

        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: np.array(npz[k]) for k in npz.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = TrainConfig(**meta["config"])
        trainer = cls(cfg)
        for k, p in trainer.model.named_parameters().items():
            p.data[...] = arrays[f"param/{k}"]
            p.requires_grad = meta["requires_grad"][k]
        trainer.optimizer.load_state(arrays, meta["optimizer"])
        trainer.plateau.load_state(meta["plateau"])
        states = [HeadState.from_dict(d) for d in meta["heads"]]
        for s in states:
            key = f"{s.layer}.{s.head}"
            if f"snap_rows/{key}" in arrays:
                s.cls_snapshot = arrays[f"snap_rows/{key}"]
                s.attn_snapshot = arrays[f"snap_attn/{key}"]
            trainer.heads[s.layer][s.head] = s
        trainer._initialized = all(s.cls_snapshot is not None for s in states)
        led = meta["ledger"]
        trainer.ledger = EfficiencyLedger(led["total_params"], led["frozen_params"], led["events"])
        trainer.records = [DiagnosticsRecord.from_dict(r) for r in meta["records"]]
        trainer.epoch_logs = meta["epoch_logs"]
        trainer.epoch = meta["epoch"]
        trainer.rng.bit_generator.state = meta["rng"]
        return trainer

    def export(self, out_dir, figures: bool = True) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_epoch_log(self.epoch_logs, out / "losses.csv")
        if not self.records:
            csv_path = out / "diagnostics.csv"
            csv_path.write_text(records_to_csv([]))
            return csv_path
        csv_path, _ = export_diagnostics(self.records, out, self.ledger.total_params, self.ledger.frozen_params)
        if figures:
            from .plotting import plot_dynamics, plot_losses

            plot_dynamics(self.records, out)
            plot_losses(self.epoch_logs, out / "losses.png")
        return csv_path


def write_epoch_log(epoch_logs: list[dict], path) -> Path:
    keys = ["rec_l1", "rec_l2", "rec", "kl_cls", "kl_pt", "w_cls", "w_pt", "pt_disc", "total"]
    lines = [",".join(["epoch", "lr", *keys, "heldout_mse", "trainable_params"])]
    for e in epoch_logs:
        vals = [repr(float(e["losses"].get(k, 0.0))) for k in keys]
        lines.append(",".join([str(e["epoch"]), repr(float(e["lr"])), *vals, repr(float(e["heldout_mse"])),
                               str(e["trainable_params"])]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def train(cfg: TrainConfig, out_dir=None, figures: bool = True) -> TrainResult:
    """Run the full schedule and write checkpoint, diagnostics and figures to ``out_dir``."""
    trainer = Trainer(cfg)
    trainer.fit()
    out = Path(out_dir or cfg.out_dir)
    ckpt = trainer.save_checkpoint(out / "checkpoint.npz")
    diag = trainer.export(out, figures=figures)
    return TrainResult(ckpt, diag, trainer.records, trainer.epoch_logs)
