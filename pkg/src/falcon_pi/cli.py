"""Command line entry point: ``falcon serve | predict | bench | verify-bound | predict-plain``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .gc.ot import MODES, ObliviousTransferConfig
from .model import ModelFormatError, load_image, load_model
from .runtime.framing import ProtocolError
from .runtime.session import DEFAULT_ADDRESS, SessionConfig, predict, run_inprocess, serve

log = logging.getLogger("falcon")


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or DEFAULT_ADDRESS[0], int(port)


def _config(args, **kw) -> SessionConfig:
    ot = ObliviousTransferConfig(args.ot, unsafe=args.ot == "insecure_dealer")
    return SessionConfig(seed=args.seed, ot=ot, **kw)


def _result_doc(res) -> dict:
    return {"t": res.t} if res.probability is None else {"t": res.t, "probability": res.probability}


def cmd_serve(args) -> int:
    model = load_model(args.model)
    cfg = _config(args, argmax_only=args.argmax_only, address=args.listen)
    log.info("serving %s on %s:%d", args.model, *args.listen)
    server = serve(model, args.listen, cfg, max_sessions=args.sessions,
                   ready=lambda s: print(f"listening on {s.server_address[0]}:{s.server_address[1]}", flush=True))
    for exc in server.errors:
        log.warning("session aborted: %s", exc)
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args, accuracy=args.accuracy)
    res = predict(load_image(args.input), args.connect, cfg)
    print(json.dumps(_result_doc(res)))
    return 0


def cmd_bench(args) -> int:
    from .runtime.pipeline import fuse_layers, unfuse_layers
    from .runtime.transcript import transcript_report

    model = load_model(args.model)
    model = unfuse_layers(model) if args.unfused else fuse_layers(model)
    res, t = run_inprocess(model, load_image(args.input), _config(args, accuracy=args.accuracy))
    report = transcript_report(t)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report)
    if args.transcript:
        with open(args.transcript, "w") as fh:
            fh.write(t.to_csv())
    print(json.dumps(_result_doc(res)))
    if not args.report:
        print(report, end="")
    return 0


def cmd_verify_bound(args) -> int:
    from .softmax import verify_bound

    worst, violations = verify_bound(args.K, args.l, args.trials, args.seed if args.seed is not None else 0)
    ok = violations == 0 and worst <= 10.0 ** -args.l
    print(f"K={args.K} l={args.l} trials={args.trials} max_gap={worst:.3e} bound={10.0 ** -args.l:.0e} "
          f"violations={violations} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_predict_plain(args) -> int:
    from .reference import fixed_point_forward, plain_forward

    model, image = load_model(args.model), load_image(args.input)
    res = fixed_point_forward(model, image)[0] if args.fixed else plain_forward(model, image)
    doc = _result_doc(res)
    if res.logits is not None:
        doc["logits"] = [float(v) for v in res.logits]
    print(json.dumps(doc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="falcon", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def session_flags(p):
        p.add_argument("--seed", default=None, help="deterministic seed (FALCON_SEED also works)")
        p.add_argument("--ot", choices=MODES, default="iknp", help="oblivious transfer mode")

    p = sub.add_parser("serve", help="serve a model to remote clients")
    p.add_argument("--model", required=True)
    p.add_argument("--listen", type=_address, default=DEFAULT_ADDRESS)
    p.add_argument("--argmax-only", action="store_true")
    p.add_argument("--sessions", type=int, default=None, help="exit after this many sessions")
    session_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("predict", help="run a private prediction against a server")
    p.add_argument("--input", required=True)
    p.add_argument("--connect", type=_address, default=DEFAULT_ADDRESS)
    p.add_argument("--accuracy", type=int, default=None, help="softmax accuracy l (10^-l)")
    session_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="run both parties in process and report costs")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fused", action="store_true", help="merge ReLU and max pooling (default)")
    g.add_argument("--unfused", action="store_true")
    p.add_argument("--report", help="write the cost table as CSV")
    p.add_argument("--transcript", help="write the full transcript as CSV")
    p.add_argument("--accuracy", type=int, default=None)
    session_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-bound", help="check the softmax approximation bound on random logits")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("predict-plain", help="cleartext prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--fixed", action="store_true", help="integer fixed-point pass instead of float")
    p.set_defaults(func=cmd_predict_plain)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # crypto failures and anything unexpected
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
