"""Command-line workflow: steer, render, sweep, analyze, serve.

Exit codes: 0 success, 1 user error (bad flags or inputs), 2 runtime
failure (diverged steering, failed fits, port conflicts). Every run prints
its resolved configuration as machine-parsable key=value pairs. Input
flags accept WAV paths or built-in source specs (``impulse:<dur>``,
``noise:<dur>[,<seed>]``, ``sine:<freq>,<dur>``).
"""

from __future__ import annotations

import argparse
import logging
import math
import socket
import sys

import numpy as np

from . import audio
from .audio import AudioBuffer, AudioIOError
from .loss import DegenerateTargetError
from .metrics import (
    GRID_METRICS,
    T60FitError,
    estimate_t60,
    grid_sweep,
    integrated_loudness,
    schroeder_edc,
)
from .model import (
    CheckpointError,
    ModelConfig,
    forward,
    load_checkpoint,
    receptive_field,
    receptive_field_ms,
)
from .train import NonFiniteLossError, TrainConfig, steer

EXIT_OK = 0
EXIT_USER = 1
EXIT_RUNTIME = 2


class UserError(Exception):
    """Invalid flags or inputs; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the CLI contract wants 1 for user errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


def _load_input(text: str, sample_rate: int | None = None) -> AudioBuffer:
    if audio.is_signal_spec(text):
        return audio.synth_from_spec(text, sample_rate or audio.DEFAULT_SAMPLE_RATE)
    try:
        return audio.read_wav(text)
    except AudioIOError as exc:
        raise UserError(str(exc)) from exc


def _print_config(args: argparse.Namespace, skip=("func",)) -> None:
    pairs = " ".join(
        f"{key.replace('_', '-')}={value}"
        for key, value in sorted(vars(args).items())
        if key not in skip and value is not None
    )
    print(f"config {pairs}")


def _parse_conditioning(text: str, cond_dim: int) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")], dtype=np.float32)
    except ValueError as exc:
        raise UserError(f"--c must be comma-separated reals, got {text!r}") from exc
    if values.shape != (cond_dim,):
        raise UserError(
            f"--c has {values.size} values but the model expects cond_dim={cond_dim}"
        )
    return values


def cmd_steer(args) -> int:
    _print_config(args)
    x = _load_input(args.input)
    y = _load_input(args.target, sample_rate=x.sample_rate)
    try:
        model_config = ModelConfig(
            layers=args.layers,
            channels=args.channels,
            kernel_size=args.kernel,
            dilation_growth=args.dilation_growth,
            cond_dim=args.cond_dim,
            sample_rate=x.sample_rate,
        )
        train_config = TrainConfig(
            iterations=args.iters,
            base_lr=args.lr,
            seed=args.seed,
            log_every=args.log_every,
            checkpoint_path=args.out,
        )
    except ValueError as exc:
        raise UserError(str(exc)) from exc

    rf = receptive_field(model_config)
    print(f"receptive_field_samples={rf} receptive_field_ms={receptive_field_ms(model_config):.1f}")

    def progress(iteration, lr, report):
        print(f"iter={iteration} lr={lr:g} loss={report.total:g} "
              f"sc={report.sc_total:g} logmag={report.logmag_total:g}")

    try:
        result = steer(x, y, model_config, train_config, progress=progress)
    except (ValueError, DegenerateTargetError) as exc:
        raise UserError(str(exc)) from exc
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.history:
        result.history.write_csv(args.history)
    print(f"final_loss={result.history.loss_total[-1]:g} checkpoint={args.out}")
    return EXIT_OK


def render_wav_bytes(model, input_buffer: AudioBuffer, conditioning) -> bytes:
    """Shared render path: forward pass encoded as float32 WAV bytes.

    The HTTP render endpoint calls this too, so CLI and API output are
    byte-identical for identical inputs.
    """
    rendered, _ = forward(model, audio.to_mono(input_buffer), conditioning)
    data, _ = audio.wav_bytes(rendered, "float32")
    return data


def cmd_render(args) -> int:
    _print_config(args)
    model = _load_model(args.model)
    conditioning = _parse_conditioning(args.c, model.config.cond_dim)
    source = _load_input(args.input, model.config.sample_rate)
    try:
        data = render_wav_bytes(model, source, conditioning)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote={args.out} samples={source.n_frames}")
    return EXIT_OK


def _load_model(path: str):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise UserError(str(exc)) from exc


def cmd_sweep(args) -> int:
    _print_config(args)
    model = _load_model(args.model)
    source = _load_input(args.input, model.config.sample_rate)
    if args.steps < 2:
        raise UserError(f"--steps must be >= 2, got {args.steps}")
    if args.metric not in GRID_METRICS:
        raise UserError(f"--metric must be one of {GRID_METRICS}")
    try:
        sweep = grid_sweep(
            model,
            audio.to_mono(source),
            c0_range=(args.min, args.max),
            c1_range=(args.min, args.max),
            steps=args.steps,
            metric=args.metric,
        )
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    with open(args.out, "w", encoding="utf-8") as fh:
        sweep.write_csv(fh)
    print(f"wrote={args.out} cells={args.steps * args.steps}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    _print_config(args)
    if args.lufs:
        buffer = _load_input(args.lufs)
        try:
            value = integrated_loudness(buffer)
        except ValueError as exc:
            raise UserError(str(exc)) from exc
        if math.isinf(value):
            print("lufs=below-gate")
        else:
            print(f"lufs={value:.2f}")
        return EXIT_OK

    path = args.t60 or args.edc
    buffer = audio.to_mono(_load_input(path))
    try:
        curve = schroeder_edc(buffer)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    if args.edc:
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                curve.write_csv(fh)
            print(f"wrote={args.out}")
        else:
            curve.write_csv(sys.stdout)
        return EXIT_OK
    try:
        estimate = estimate_t60(curve)
    except T60FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    flag = " confidence=reduced" if estimate.reduced_confidence else ""
    print(f"t60_s={estimate.seconds:.4f}{flag}")
    return EXIT_OK


def cmd_serve(args) -> int:
    _print_config(args)
    model = _load_model(args.model)
    # Preflight bind so a busy port maps to the runtime exit code.
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, args.port))
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        probe.close()

    import uvicorn

    from .server import create_app

    app = create_app(model, static_dir=args.static_dir, input_dir=args.input_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="steerfx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steer", help="fit a model to a clean/processed WAV pair")
    p.add_argument("--input", required=True, help="clean input WAV or signal spec")
    p.add_argument("--target", required=True, help="processed target WAV or signal spec")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--kernel", type=int, default=9)
    p.add_argument("--dilation-growth", type=int, default=10)
    p.add_argument("--cond-dim", type=int, default=2)
    p.add_argument("--iters", type=int, default=2500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", help="history CSV output path")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("render", help="process audio through a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--c", required=True, help="comma-separated conditioning values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="metric over a 2-D conditioning lattice")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--min", type=float, default=-5.0)
    p.add_argument("--max", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--metric", default="rms", choices=GRID_METRICS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="loudness / T60 / decay curve of a WAV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--lufs", metavar="WAV")
    group.add_argument("--t60", metavar="WAV")
    group.add_argument("--edc", metavar="WAV")
    p.add_argument("--out", help="CSV output path for --edc")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="HTTP API + UI over a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--input-dir", help="directory of WAVs preloaded as sources")
    p.add_argument("--static-dir", help="UI bundle directory served at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except KeyboardInterrupt:
        return EXIT_RUNTIME


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
