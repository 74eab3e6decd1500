"""Training loop: sample, (optionally) perturb, descend, record.

Runs are pure functions of (config, dataset): batch composition, triplet
mining, attacks, and evaluation all draw from generators seeded by the
config, and recorded floats are written exactly, so repeating a run
reproduces its record bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import gradcore as gc
from ..defenses import CollapseMonitor, detect_collapse, training_loss
from ..encoder import AdamState, Encoder
from ..hm import LossTracker
from ..robustness import benign_metrics, evaluate_robustness
from ..samplers import LabeledBatch
from .config import TrainConfig
from .dataset import SyntheticDataset

RECORD_FILE = "record.jsonl"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "checkpoint.json"


@dataclass
class EpochRow:
    epoch: int
    benign_loss: float
    adv_loss: Optional[float]
    h_source: float
    h_tilde: Optional[float]
    h_dest: Optional[float]
    collapse_sim: float
    r_at_1: float


@dataclass
class RunRecord:
    config: dict
    label: str
    status: str  # ok | collapsed | nan
    cost_per_iteration: int
    rows: list = field(default_factory=list)
    final_report: Optional[dict] = None

    def summary(self) -> dict:
        last = asdict(self.rows[-1]) if self.rows else None
        return {
            "config": self.config,
            "label": self.label,
            "status": self.status,
            "cost_per_iteration": self.cost_per_iteration,
            "epochs_run": len(self.rows),
            "last_epoch": last,
            "final_report": self.final_report,
        }

    def save(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, RECORD_FILE), "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(asdict(row), sort_keys=True))
                fh.write("\n")
        with open(os.path.join(out_dir, SUMMARY_FILE), "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, run_dir: str) -> "RunRecord":
        with open(os.path.join(run_dir, SUMMARY_FILE)) as fh:
            summary = json.load(fh)
        rows = []
        record_path = os.path.join(run_dir, RECORD_FILE)
        if os.path.exists(record_path):
            with open(record_path) as fh:
                rows = [EpochRow(**json.loads(line)) for line in fh if line.strip()]
        return cls(config=summary["config"], label=summary["label"],
                   status=summary["status"],
                   cost_per_iteration=summary["cost_per_iteration"],
                   rows=rows, final_report=summary["final_report"])


def _epoch_batches(dataset: SyntheticDataset, config: TrainConfig,
                   rng: np.random.Generator):
    """P-classes x K-samples batches; one epoch covers about the train set."""
    per_class = [np.where(dataset.train_y == c)[0] for c in range(dataset.classes)]
    p = min(config.classes_per_batch, dataset.classes)
    k = config.samples_per_class
    n_batches = max(1, len(dataset.train_x) // (p * k))
    for _ in range(n_batches):
        chosen = rng.permutation(dataset.classes)[:p]
        rows = np.concatenate([rng.choice(per_class[c], size=k, replace=False)
                               for c in chosen])
        yield LabeledBatch(dataset.train_x[rows], dataset.train_y[rows])


def _mean_or_none(values: list) -> Optional[float]:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


def train(config: TrainConfig, dataset: SyntheticDataset) -> tuple[Encoder, RunRecord]:
    """Train an encoder under the configured defense.

    Aborts with status "collapsed" when the collapse monitor fires and
    "nan" on a non-finite loss; the final robustness report is only
    attached to runs that finish normally.
    """
    config.validate()
    spec = config.defense_spec()
    expected_backwards = spec.backward_passes_per_step()

    rng = np.random.default_rng(config.seed)
    model = Encoder(dataset.dim, config.hidden, config.embed_dim, seed=config.seed)
    adam = AdamState(model.parameters(), lr=config.lr)
    tracker = LossTracker(config.resolved_u)
    monitor = CollapseMonitor()
    corpus = dataset.eval_corpus()

    record = RunRecord(config=config.to_dict(), label=config.label(), status="ok",
                       cost_per_iteration=expected_backwards)

    for epoch in range(config.epochs):
        sums: dict[str, list] = {k: [] for k in
                                 ("benign_loss", "adv_loss", "h_source", "h_tilde", "h_dest")}
        for batch in _epoch_batches(dataset, config, rng):
            calls_before = gc.backward_calls()
            loss, params, diag = training_loss(model, batch, spec, rng, tracker)
            if not np.isfinite(loss.value):
                record.status = "nan"
                break
            gc.backward(loss)
            adam.step(model.parameters(), [p.grad for p in params])
            used = gc.backward_calls() - calls_before
            if used != expected_backwards:
                raise AssertionError(
                    f"cost accounting violated: {used} backward passes, "
                    f"expected {expected_backwards}")
            if diag["adv_loss"] is not None:
                tracker.update(diag["adv_loss"])
            for key in sums:
                sums[key].append(diag[key])

        if record.status == "nan":
            break

        sim = detect_collapse(model.embed_array(corpus.gallery_x))
        r1 = benign_metrics(model, corpus)["r_at_1"]
        record.rows.append(EpochRow(
            epoch=epoch,
            benign_loss=_mean_or_none(sums["benign_loss"]),
            adv_loss=_mean_or_none(sums["adv_loss"]),
            h_source=_mean_or_none(sums["h_source"]),
            h_tilde=_mean_or_none(sums["h_tilde"]),
            h_dest=_mean_or_none(sums["h_dest"]),
            collapse_sim=sim,
            r_at_1=r1,
        ))
        if monitor.update(sim):
            record.status = "collapsed"
            break

    if record.status == "ok":
        report = evaluate_robustness(model, corpus, config.eval_budget(),
                                     seed=config.seed)
        record.final_report = report.as_dict()
    return model, record


def run_and_save(config: TrainConfig, dataset: SyntheticDataset, out_dir: str) -> RunRecord:
    model, record = train(config, dataset)
    os.makedirs(out_dir, exist_ok=True)
    model.save(os.path.join(out_dir, CHECKPOINT_FILE))
    record.save(out_dir)
    return record
