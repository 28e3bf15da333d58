"""Training loop: batch assembly, multi-view forwards, the full objective,
momentum SGD under a cosine schedule, and per-epoch prototype refresh.

Per iteration: sample a labeled batch and gamma-times-larger unlabeled
batch, draw augmented views, forward them, freeze the gate/pseudo-label
decisions from the weak unlabeled view, backprop the weighted total, and
step. Gate-accepted unlabeled embeddings accumulate across the epoch and
feed the prototype refresh at the epoch boundary; the labeled side of the
refresh is a clean (unaugmented) pass over the full labeled set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import net as net_mod
from . import tensor_losses as tl
from .data import EmbeddingBatch, LossReport
from .heads import HeadWeights, OvaOutput, compose_total, negatives_count
from .linalg import softmax_rows
from .metrics import evaluate
from .net import NetSpec, ParamState, forward, init_params, sgd_step
from .prototypes import PrototypeSet, initial_prototypes, refresh
from .sna import GateMask, SnaWeights, dual_gate
from .synthdata import Split, augment_views


class TrainingDiverged(RuntimeError):
    """Raised when the loss or an activation goes non-finite."""

    def __init__(self, message: str, last_report: dict | None = None):
        super().__init__(message)
        self.last_report = last_report


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    iters_per_epoch: int = 40
    batch_size: int = 16
    gamma: float = 2.0
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    head: HeadWeights = field(default_factory=HeadWeights)
    sna: SnaWeights = field(default_factory=SnaWeights)
    tau_id: float = 0.99
    eta_id: float = 0.5
    gate_temperature: float = 0.5
    tau_proto: float | None = None  # defaults to tau_id
    eta_proto: float | None = None  # defaults to eta_id
    r_u: float = 0.5
    socr_on: str = "logits"
    score_rule: str = "ova_id_at_cc_argmax"
    eval_every: int = 0  # epochs between metric snapshots; 0 = final only
    log_gate_details: bool = True
    seed: int = 2

    def __post_init__(self):
        if self.epochs < 0 or self.iters_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0; iteration and batch counts >= 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr0, momentum, weight_decay must be non-negative")
        for name in ("tau_id", "eta_id", "r_u"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("tau_proto", "eta_proto"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.gate_temperature <= 0:
            raise ValueError("gate_temperature must be positive")
        if self.socr_on not in ("logits", "probs"):
            raise ValueError("socr_on must be 'logits' or 'probs'")
        u = self.gamma * self.batch_size
        if abs(u - round(u)) > 1e-9:
            raise ValueError("gamma * batch_size must be an integer")

    @property
    def unlabeled_batch(self) -> int:
        return int(round(self.gamma * self.batch_size))

    @property
    def proto_tau(self) -> float:
        return self.tau_id if self.tau_proto is None else self.tau_proto

    @property
    def proto_eta(self) -> float:
        return self.eta_id if self.eta_proto is None else self.eta_proto


@dataclass
class RunLog:
    """Append-only record of a run; serializable at any point."""

    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    final_prototypes: PrototypeSet | None = None

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for record in self.iterations:
                fh.write(json.dumps({"type": "iteration", **record}) + "\n")
            for record in self.epochs:
                fh.write(json.dumps({"type": "epoch", **record}) + "\n")


def lr_at(step: int, total_steps: int, lr0: float) -> float:
    """Plain half-cosine decay from lr0 to zero."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class _CyclingSampler:
    """Exact-size batches drawn from reshuffled permutations of a pool."""

    def __init__(self, pool_size: int, batch: int, rng: np.random.Generator):
        if pool_size < 1:
            raise ValueError("cannot sample from an empty pool")
        self.pool_size = pool_size
        self.batch = batch
        self.rng = rng
        self._queue: list[int] = []

    def next(self) -> np.ndarray:
        while len(self._queue) < self.batch:
            self._queue.extend(self.rng.permutation(self.pool_size).tolist())
        idx = self._queue[:self.batch]
        del self._queue[:self.batch]
        return np.asarray(idx, dtype=np.int64)


def _clean_labeled_embeddings(params: ParamState, split: Split) -> EmbeddingBatch:
    out = forward(params, split.labeled_x)
    return EmbeddingBatch(out.embeddings, labels=split.labeled_y)


def train(split: Split, netspec: NetSpec, cfg: TrainConfig) -> tuple[ParamState, RunLog]:
    """Run the full loop; deterministic given (split, netspec, cfg)."""
    if split.labeled_x.shape[1] != netspec.input_dim:
        raise ValueError("network input_dim does not match the scenario")
    if int(split.labeled_y.max()) + 1 > netspec.num_classes:
        raise ValueError("network num_classes is smaller than the label range")
    if split.unlabeled_x.shape[0] == 0:
        raise ValueError("training requires an unlabeled pool")
    if split.scenario is None:
        raise ValueError("split carries no scenario; augmentation scales are unknown")

    params = init_params(netspec)
    runlog = RunLog()
    protos = initial_prototypes(_clean_labeled_embeddings(params, split),
                                gamma=cfg.gamma, num_classes=netspec.num_classes)
    runlog.final_prototypes = protos
    if cfg.epochs == 0:
        return params, runlog

    rng = np.random.default_rng(cfg.seed)
    labeled_sampler = _CyclingSampler(split.labeled_x.shape[0], cfg.batch_size, rng)
    unlabeled_sampler = _CyclingSampler(split.unlabeled_x.shape[0], cfg.unlabeled_batch, rng)
    velocity: np.ndarray | None = None
    total_steps = cfg.epochs * cfg.iters_per_epoch
    scenario = split.scenario

    for epoch in range(cfg.epochs):
        proto_rows: list[np.ndarray] = []
        proto_pred: list[np.ndarray] = []
        for it in range(cfg.iters_per_epoch):
            step = epoch * cfg.iters_per_epoch + it
            lr = lr_at(step, total_steps, cfg.lr0)
            li = labeled_sampler.next()
            ui = unlabeled_sampler.next()
            xb, yb = split.labeled_x[li], split.labeled_y[li]
            ub = split.unlabeled_x[ui]
            x_views = augment_views(xb, ["weak"], rng, scenario)
            u_views = augment_views(ub, ["weak", "weak2", "strong"], rng, scenario)
            inputs = {"x_w": x_views["weak"], "u_w": u_views["weak"],
                      "u_w2": u_views["weak2"], "u_s": u_views["strong"]}

            info: dict = {}
            closure = _make_closure(cfg, yb, protos, info)
            try:
                grads = net_mod.backward(params, inputs, closure)
            except ValueError as err:
                last = runlog.iterations[-1] if runlog.iterations else None
                raise TrainingDiverged(str(err), last_report=last) from err
            params, velocity = sgd_step(params, grads, lr=lr, momentum=cfg.momentum,
                                        weight_decay=cfg.weight_decay, velocity=velocity)

            record = {
                "step": step, "epoch": epoch, "lr": lr,
                "terms": info["terms"], "weights": info["weights"], "total": info["total"],
                "batch_labeled": int(len(li)), "batch_unlabeled": int(len(ui)),
                "gate": info["gate_stats"],
            }
            if cfg.log_gate_details:
                record["gate_detail"] = info["gate_detail"]
            runlog.iterations.append(record)
            if info["proto_rows"].shape[0] > 0:
                proto_rows.append(info["proto_rows"])
                proto_pred.append(info["proto_pred"])

        protos = _refresh_prototypes(params, split, cfg, netspec, proto_rows, proto_pred)
        runlog.final_prototypes = protos
        epoch_record = {
            "epoch": epoch,
            "prototypes": {
                "n_labeled": protos.n_labeled.tolist(),
                "n_unlabeled": protos.n_unlabeled.tolist(),
                "gamma": protos.gamma, "r_u": protos.r_u,
            },
        }
        last_epoch = epoch == cfg.epochs - 1
        if last_epoch or (cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0):
            report = evaluate(params, split, protos, score_rule=cfg.score_rule)
            epoch_record["eval"] = report.to_dict()
        runlog.epochs.append(epoch_record)

    return params, runlog


def _refresh_prototypes(params, split, cfg, netspec, proto_rows, proto_pred) -> PrototypeSet:
    labeled = _clean_labeled_embeddings(params, split)
    if proto_rows:
        vectors = np.vstack(proto_rows)
        pred = np.concatenate(proto_pred)
        mask = GateMask(phi=np.ones(pred.size, dtype=np.int64),
                        cc_conf=np.ones(pred.size), od_conf=np.ones(pred.size),
                        pred_class=pred, tau_id=cfg.proto_tau, eta_id=cfg.proto_eta)
        unlabeled = EmbeddingBatch(vectors)
    else:
        mask = None
        unlabeled = None
    return refresh(labeled, unlabeled, mask, gamma=cfg.gamma, r_u=cfg.r_u,
                   num_classes=netspec.num_classes)


def _make_closure(cfg: TrainConfig, labels: np.ndarray, protos: PrototypeSet, info: dict):
    head = cfg.head
    sna_w = cfg.sna
    unit_protos = protos.unit_directions()

    def closure(outputs):
        xw, uw, uw2, us = outputs["x_w"], outputs["u_w"], outputs["u_w2"], outputs["u_s"]

        # Frozen decisions: gradients never flow through gates or pseudo-labels.
        gate_probs = softmax_rows(uw.cc_logits.data, cfg.gate_temperature)
        ova_uw = OvaOutput.from_logits(uw.id_logits.data, uw.ood_logits.data)
        gate = dual_gate(gate_probs, ova_uw.id_probs, cfg.tau_id, cfg.eta_id)
        proto_gate = dual_gate(gate_probs, ova_uw.id_probs, cfg.proto_tau, cfg.proto_eta)
        pl_probs = softmax_rows(uw.cc_logits.data)
        pseudo = np.argmax(pl_probs, axis=1)
        pl_accept = pl_probs[np.arange(pseudo.size), pseudo] > head.tau_pl

        zero = tl.constant(0.0)
        loss_x = tl.ce_graph(xw.cc_logits, labels)
        loss_u = (tl.consistency_graph(us.cc_logits, pseudo, pl_accept)
                  if head.lambda_u > 0 else zero)
        loss_ova = tl.ova_graph(xw.id_logits, xw.ood_logits, labels)
        loss_em = tl.em_graph(uw.id_logits, uw.ood_logits) if head.lambda_em > 0 else zero
        if head.lambda_socr > 0:
            if cfg.socr_on == "logits":
                loss_socr = tl.socr_graph(uw.id_logits, uw2.id_logits)
            else:
                loss_socr = tl.socr_probs_graph(uw.id_logits, uw.ood_logits,
                                                uw2.id_logits, uw2.ood_logits)
        else:
            loss_socr = zero
        if head.lambda_neg > 0:
            # Negatives are mined on both the weak and the strong view.
            loss_neg = (tl.neg_graph(uw.id_logits, uw.ood_logits, head.eta_neg)
                        + tl.neg_graph(us.id_logits, us.ood_logits, head.eta_neg))
        else:
            loss_neg = zero
        loss_usna = (tl.usna_graph(uw.embeddings, unit_protos, gate.phi,
                                   gate.pred_class, sna_w.temperature)
                     if sna_w.lambda_usna > 0 else zero)
        loss_ia = (tl.ia_graph(xw.embeddings, labels, sna_w.temperature)
                   if sna_w.lambda_ia > 0 else zero)
        loss_pa = (tl.pa_graph(xw.embeddings, unit_protos, labels, sna_w.temperature)
                   if sna_w.lambda_pa > 0 else zero)

        loss_sna = (sna_w.lambda_usna * loss_usna + sna_w.lambda_ia * loss_ia
                    + sna_w.lambda_pa * loss_pa)
        loss_cc = loss_x + head.lambda_u * loss_u
        loss_od = (loss_ova + head.lambda_em * loss_em + head.lambda_socr * loss_socr
                   + head.lambda_neg * loss_neg)
        total = head.lambda_cc * loss_cc + head.lambda_od * loss_od + head.lambda_sna * loss_sna

        terms = {"x": loss_x.item(), "u": loss_u.item(), "ova": loss_ova.item(),
                 "em": loss_em.item(), "socr": loss_socr.item(), "neg": loss_neg.item(),
                 "usna": loss_usna.item(), "ia": loss_ia.item(), "pa": loss_pa.item(),
                 "sna": loss_sna.item(), "cc": loss_cc.item(), "od": loss_od.item()}
        weights = {"lambda_u": head.lambda_u, "lambda_em": head.lambda_em,
                   "lambda_socr": head.lambda_socr, "lambda_neg": head.lambda_neg,
                   "lambda_cc": head.lambda_cc, "lambda_od": head.lambda_od,
                   "lambda_sna": head.lambda_sna, "lambda_usna": sna_w.lambda_usna,
                   "lambda_ia": sna_w.lambda_ia, "lambda_pa": sna_w.lambda_pa}
        info["terms"] = terms
        info["weights"] = weights
        info["total"] = total.item()
        info["gate_stats"] = {
            "accepted": gate.accepted,
            "proto_accepted": proto_gate.accepted,
            "negatives": negatives_count(ova_uw, head.eta_neg),
            "pl_accepted": int(pl_accept.sum()),
        }
        info["gate_detail"] = {
            "phi": gate.phi.tolist(),
            "cc_conf": gate.cc_conf.tolist(),
            "od_conf": gate.od_conf.tolist(),
            "pred_class": gate.pred_class.tolist(),
            "tau_id": gate.tau_id, "eta_id": gate.eta_id,
        }
        selected = proto_gate.phi == 1
        info["proto_rows"] = uw.embeddings.data[selected].copy()
        info["proto_pred"] = proto_gate.pred_class[selected].copy()
        return total

    return closure


def loss_report_from_record(record: dict) -> LossReport:
    """Rebuild a LossReport from a logged iteration."""
    return LossReport(terms=dict(record["terms"]), weights=dict(record["weights"]),
                      total=record["total"])


def audit_gate_flow(runlog: RunLog) -> None:
    """Check every logged pull decision against the gate rule it claims."""
    for record in runlog.iterations:
        detail = record.get("gate_detail")
        if detail is None:
            continue
        cc = np.asarray(detail["cc_conf"])
        od = np.asarray(detail["od_conf"])
        phi = np.asarray(detail["phi"])
        expected = ((cc > detail["tau_id"]) & (od > detail["eta_id"])).astype(np.int64)
        if not np.array_equal(phi, expected):
            raise AssertionError(f"gate mask inconsistent at step {record['step']}")


def audit_loss_composition(runlog: RunLog, tol: float = 1e-12) -> float:
    """Max deviation between logged totals and their recomposed values."""
    worst = 0.0
    for record in runlog.iterations:
        recomposed = compose_total(record["terms"], record["weights"])
        worst = max(worst, abs(recomposed - record["total"]))
        if worst > tol:
            raise AssertionError(f"loss composition off by {worst} at step {record['step']}")
    return worst
