"""Command-line client for the lab.

Every subcommand builds the same request model the HTTP service accepts
and either executes it in-process (default) or posts it to a running
service (--remote URL). Output locations default into the directory named
by the TRIPLETLAB_OUT environment variable.

Exit codes: 0 ok, 2 configuration error, 3 training aborted by collapse.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from pydantic import ValidationError

from .harness.config import ConfigError
from .service import handlers, schemas

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLAPSE = 3
OUT_ENV = "TRIPLETLAB_OUT"


def _out_root() -> str:
    return os.environ.get(OUT_ENV, ".")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_train_overrides(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="flat key=value config file; flags override it")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--defense", help="none|hm|hm+ics|est|act|minmax")
    sub.add_argument("--source", help="random|semihard|softhard|distance|hardest")
    sub.add_argument("--dest", dest="destination",
                     help="destination hardness spec, e.g. lga, sampler:semihard, const:-0.1")
    sub.add_argument("--eps", type=float, help="L-inf perturbation radius")
    sub.add_argument("--alpha", type=float, help="PGD step size")
    sub.add_argument("--pgd-steps", type=int, help="PGD steps during training")
    sub.add_argument("--eval-pgd-steps", type=int, help="PGD steps for the attack suite")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--gamma", type=float, help="triplet margin")
    sub.add_argument("--lambda", dest="lam", type=float, help="intra-class loss weight")
    sub.add_argument("--lr", type=float)
    sub.add_argument("--u", type=float, help="loss normalization cap (defaults to gamma)")
    sub.add_argument("--xi", type=float, help="gradual hardness boost")
    sub.add_argument("--hidden", help="hidden layer widths, e.g. 64,64")
    sub.add_argument("--embed-dim", type=int)
    sub.add_argument("--classes-per-batch", type=int)
    sub.add_argument("--samples-per-class", type=int)


_SETTINGS_KEYS = ("epochs", "defense", "source", "destination", "eps", "alpha",
                  "pgd_steps", "eval_pgd_steps", "seed", "gamma", "lam", "lr",
                  "u", "xi", "embed_dim", "classes_per_batch", "samples_per_class")


def _settings_from_args(args) -> schemas.TrainSettings:
    values = {key: getattr(args, key) for key in _SETTINGS_KEYS
              if getattr(args, key, None) is not None}
    if getattr(args, "hidden", None) is not None:
        values["hidden"] = _int_list(args.hidden)
    return schemas.TrainSettings(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletlab",
        description="Adversarial robustness lab for triplet metric learning")
    parser.add_argument("--remote", metavar="URL",
                        help="send the request to a running tripletlab service")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--out", help="dataset path (default $TRIPLETLAB_OUT/dataset.json)")
    gen.add_argument("--classes", type=int, default=8)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--per-class-train", type=int, default=64)
    gen.add_argument("--per-class-eval", type=int, default=32)
    gen.add_argument("--sigma", type=float, default=None)
    gen.add_argument("--seed", type=int, default=0)

    tr = commands.add_parser("train", help="train one model and record the run")
    tr.add_argument("--data", required=True, help="dataset JSON path")
    tr.add_argument("--out", help="run directory (default $TRIPLETLAB_OUT/run)")
    _add_train_overrides(tr)

    ev = commands.add_parser("evaluate", help="benign retrieval metrics for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)

    at = commands.add_parser("attack", help="run the attack suite against a checkpoint")
    at.add_argument("--checkpoint", required=True)
    at.add_argument("--data", required=True)
    at.add_argument("--eps", type=float, default=8.0 / 255.0)
    at.add_argument("--alpha", type=float, default=1.0 / 255.0)
    at.add_argument("--pgd-steps", type=int, default=32)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--out", help="write the report JSON here")

    sw = commands.add_parser("sweep", help="grid of runs over defenses/eta/seeds")
    sw.add_argument("--data", required=True)
    sw.add_argument("--out", help="sweep directory (default $TRIPLETLAB_OUT/sweep)")
    sw.add_argument("--etas", type=_int_list, help="comma-separated PGD step counts")
    sw.add_argument("--defenses", type=_str_list, help="comma-separated defense kinds")
    sw.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    sw.add_argument("--workers", type=int, default=1)
    _add_train_overrides(sw)

    rp = commands.add_parser("report", help="comparison table and efficiency curves")
    rp.add_argument("runs", nargs="+", help="run directories")
    rp.add_argument("--out", help="report directory (default $TRIPLETLAB_OUT/report)")

    sv = commands.add_parser("serve", help="start the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8315)

    return parser


def _build_request(args):
    if args.command == "gen-data":
        out = args.out or os.path.join(_out_root(), "dataset.json")
        kwargs = dict(out_path=out, classes=args.classes, dim=args.dim,
                      per_class_train=args.per_class_train,
                      per_class_eval=args.per_class_eval, seed=args.seed)
        if args.sigma is not None:
            kwargs["sigma"] = args.sigma
        return "/gen-data", schemas.GenDataRequest(**kwargs), handlers.gen_data
    if args.command == "train":
        out = args.out or os.path.join(_out_root(), "run")
        req = schemas.TrainRequest(dataset=args.data, out_dir=out,
                                   config_file=args.config,
                                   settings=_settings_from_args(args))
        return "/train", req, handlers.train
    if args.command == "evaluate":
        req = schemas.EvaluateRequest(checkpoint=args.checkpoint, dataset=args.data)
        return "/evaluate", req, handlers.evaluate
    if args.command == "attack":
        req = schemas.AttackRequest(checkpoint=args.checkpoint, dataset=args.data,
                                    eps=args.eps, alpha=args.alpha,
                                    pgd_steps=args.pgd_steps, seed=args.seed,
                                    out_path=args.out)
        return "/attack", req, handlers.attack
    if args.command == "sweep":
        out = args.out or os.path.join(_out_root(), "sweep")
        req = schemas.SweepRequest(dataset=args.data, out_dir=out,
                                   config_file=args.config,
                                   settings=_settings_from_args(args),
                                   etas=args.etas, defenses=args.defenses,
                                   seeds=args.seeds, workers=args.workers)
        return "/sweep", req, handlers.sweep
    if args.command == "report":
        out = args.out or os.path.join(_out_root(), "report")
        req = schemas.ReportRequest(runs=args.runs, out_dir=out)
        return "/report", req, handlers.report
    raise AssertionError(f"unhandled command {args.command}")


def _exit_code(command: str, payload: dict) -> int:
    if command == "train" and payload.get("status") == "collapsed":
        return EXIT_COLLAPSE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    try:
        path, request, handler = _build_request(args)
        if args.remote:
            import httpx

            resp = httpx.post(args.remote.rstrip("/") + path,
                              json=request.model_dump(), timeout=None)
            if resp.status_code >= 400:
                print(f"error {resp.status_code}: {resp.text}", file=sys.stderr)
                return EXIT_CONFIG if resp.status_code in (400, 404, 422) else 1
            payload = resp.json()
        else:
            payload = handler(request).model_dump()
    except (ConfigError, ValidationError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    print(json.dumps(payload, indent=1, sort_keys=True))
    return _exit_code(args.command, payload)


if __name__ == "__main__":
    sys.exit(main())
