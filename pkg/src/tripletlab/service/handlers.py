"""Implementation behind the service endpoints; the CLI calls these same
functions in-process, so local and served behavior cannot drift."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor

from ..encoder import Encoder
from ..harness.config import TrainConfig
from ..harness.dataset import SyntheticDataset, generate_dataset
from ..harness.report import write_report
from ..harness.train import CHECKPOINT_FILE, SUMMARY_FILE, RunRecord, run_and_save
from ..pgd import PerturbationBudget
from ..robustness import benign_metrics, evaluate_robustness
from . import schemas


def gen_data(req: schemas.GenDataRequest) -> schemas.GenDataResponse:
    dataset = generate_dataset(classes=req.classes, dim=req.dim,
                               per_class_train=req.per_class_train,
                               per_class_eval=req.per_class_eval,
                               sigma=req.sigma, seed=req.seed)
    parent = os.path.dirname(req.out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    dataset.save(req.out_path)
    return schemas.GenDataResponse(out_path=req.out_path, classes=dataset.classes,
                                   dim=dataset.dim, train_rows=len(dataset.train_x),
                                   eval_rows=len(dataset.eval_x))


def _resolve_config(config_file: str | None, settings: schemas.TrainSettings) -> TrainConfig:
    base = TrainConfig.from_file(config_file) if config_file else TrainConfig()
    return settings.to_config(base)


def _train_response(record: RunRecord, out_dir: str) -> schemas.TrainResponse:
    last_r1 = record.rows[-1].r_at_1 if record.rows else None
    return schemas.TrainResponse(
        status=record.status,
        label=record.label,
        out_dir=out_dir,
        checkpoint=os.path.join(out_dir, CHECKPOINT_FILE),
        summary=os.path.join(out_dir, SUMMARY_FILE),
        epochs_run=len(record.rows),
        cost_per_iteration=record.cost_per_iteration,
        r_at_1=last_r1,
        ers=record.final_report["ers"] if record.final_report else None,
    )


def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    config = _resolve_config(req.config_file, req.settings)
    dataset = SyntheticDataset.load(req.dataset)
    record = run_and_save(config, dataset, req.out_dir)
    return _train_response(record, req.out_dir)


def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    model = Encoder.load(req.checkpoint)
    corpus = SyntheticDataset.load(req.dataset).eval_corpus()
    return schemas.EvaluateResponse(**benign_metrics(model, corpus))


def attack(req: schemas.AttackRequest) -> schemas.AttackResponse:
    model = Encoder.load(req.checkpoint)
    corpus = SyntheticDataset.load(req.dataset).eval_corpus()
    budget = PerturbationBudget(req.eps, req.alpha, req.pgd_steps)
    report = evaluate_robustness(model, corpus, budget, seed=req.seed).as_dict()
    out_path = None
    if req.out_path:
        parent = os.path.dirname(req.out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        doc = {"report": report,
               "config": {"eps": req.eps, "alpha": req.alpha,
                          "pgd_steps": req.pgd_steps, "seed": req.seed,
                          "checkpoint": req.checkpoint, "dataset": req.dataset}}
        with open(req.out_path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        out_path = req.out_path
    return schemas.AttackResponse(report=report, out_path=out_path)


def _sweep_worker(args: tuple) -> tuple:
    dataset_path, config_dict, out_dir = args
    config = TrainConfig.from_dict(config_dict)
    dataset = SyntheticDataset.load(dataset_path)
    record = run_and_save(config, dataset, out_dir)
    return out_dir, record.status


def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    base = _resolve_config(req.config_file, req.settings)
    etas = req.etas or [base.pgd_steps]
    defenses = req.defenses or [base.defense]
    seeds = req.seeds or [base.seed]

    jobs = []
    for defense in defenses:
        for eta in etas:
            for seed in seeds:
                config = base.with_overrides(defense=defense, pgd_steps=eta, seed=seed)
                name = f"{defense.replace('+', '_')}-eta{eta}-seed{seed}"
                out_dir = os.path.join(req.out_dir, name)
                jobs.append((req.dataset, config.to_dict(), out_dir))

    if req.workers > 1:
        with ProcessPoolExecutor(max_workers=req.workers) as pool:
            list(pool.map(_sweep_worker, jobs))
    else:
        for job in jobs:
            _sweep_worker(job)

    runs = [_train_response(RunRecord.load(out_dir), out_dir)
            for _, _, out_dir in jobs]
    return schemas.SweepResponse(runs=runs)


def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
    records = [RunRecord.load(run_dir) for run_dir in req.runs]
    result = write_report(records, req.out_dir)
    return schemas.ReportResponse(table=result["table"], paths=result["paths"])
