"""Command-line front end.

Exit codes: 0 ok, 1 usage or configuration error, 2 sync not found,
3 protocol failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import ble
from .channel import awgn
from .iq import (
    WordFormat,
    deframe_words,
    dequantize,
    frame_words,
    quantize,
    read_iq_file,
    read_word_file,
    write_iq_file,
    write_word_file,
)
from .lora.modem import modulate_frame, pack_bits
from .lora.params import ConfigError, LoraParams, airtime, data_rate
from .lora.receiver import SyncNotFound, demodulate_frame
from .lora.ser import SerExperiment, concurrent_ser

EXIT_OK, EXIT_USAGE, EXIT_NO_SYNC, EXIT_PROTOCOL = 0, 1, 2, 3
SEED_ENV = "IOTPHY_SEED"
MIN_TRIALS = 100


class UsageError(Exception):
    pass


def _load_json(arg: str):
    """Inline JSON (starting with ``{`` or ``[``) or a path to a JSON file."""
    text = arg.strip()
    if not text.startswith(("{", "[")):
        try:
            text = Path(arg).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {arg}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {arg!r}: {exc}") from None


def _lora_config(arg: str) -> LoraParams:
    return LoraParams.from_dict(_load_json(arg))


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _sample_rate(params: LoraParams):
    rate = params.sample_rate_hz
    if rate != int(rate):
        raise UsageError(f"sample rate {rate} Hz is not an integer; raise osr to write a file")
    return int(rate)


def cmd_lora_mod(args) -> int:
    params = _lora_config(args.config)
    try:
        payload = bytes.fromhex(args.payload_hex)
    except ValueError:
        raise UsageError(f"payload is not valid hex: {args.payload_hex!r}") from None
    _sample_rate(params)
    buf = modulate_frame(pack_bits(payload, params.sf), params)
    write_iq_file(args.out, buf, description=f"LoRa frame, {len(payload)} payload bytes")
    print(f"samples: {len(buf)}")
    print(f"airtime_s: {airtime(params, len(payload)):.9f}")
    print(f"data_rate_bps: {data_rate(params):.6f}")
    return EXIT_OK


def cmd_lora_demod(args) -> int:
    params = _lora_config(args.config)
    buf = read_iq_file(args.inp)
    try:
        res = demodulate_frame(buf, params, n_bytes=args.n_bytes)
    except SyncNotFound as exc:
        print(f"sync not found: {exc}", file=sys.stderr)
        return EXIT_NO_SYNC
    print(f"payload_hex: {res.payload.hex()}")
    if args.json:
        print(json.dumps(res.to_dict()))
    return EXIT_OK


def _sweep_grid(spec: dict) -> list[float]:
    try:
        start, stop, step = (float(spec[k]) for k in ("snr_start_db", "snr_stop_db", "snr_step_db"))
    except KeyError as exc:
        raise UsageError(f"sweep spec is missing {exc}") from None
    if step <= 0:
        raise UsageError("snr_step_db must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(max(n, 0))]


def _gfsk_point(cfg: ble.GfskConfig, snr: float, trials: int, seed: int, index: int) -> int:
    rng = np.random.default_rng([seed, index])
    bits = rng.integers(0, 2, trials).astype(np.uint8)
    buf = ble.gfsk_modulate(bits, cfg)
    noisy = awgn(buf, snr, int(rng.integers(0, 2**63)))
    return int(np.count_nonzero(ble.gfsk_demodulate(noisy, cfg) != bits))


def cmd_ser_sweep(args) -> int:
    spec = _load_json(args.spec)
    grid = _sweep_grid(spec)
    trials = int(spec.get("trials_per_point", 0))
    if trials < MIN_TRIALS:
        raise UsageError(f"trials_per_point must be at least {MIN_TRIALS}")
    seed = int(spec["seed"]) if "seed" in spec else _seed(args)
    kind = spec.get("kind", "lora")
    workers = max(1, args.threads)
    if kind == "lora":
        params = LoraParams.from_dict(spec.get("params", {}))
        exp = SerExperiment(params, trials, seed, use_fir=bool(spec.get("use_fir", False)))

        def job(i):
            return exp.run([grid[i]])[0].symbol_errors

    elif kind == "gfsk":
        cfg = ble.GfskConfig(**spec.get("params", {}))

        def job(i):
            return _gfsk_point(cfg, grid[i], trials, seed, i)

    else:
        raise UsageError(f"unknown sweep kind {kind!r}")
    # map() keeps point order whatever order the workers finish in
    with ThreadPoolExecutor(max_workers=workers) as pool:
        errors = list(pool.map(job, range(len(grid))))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snr_db", "symbol_errors", "trials", "ser"])
        for snr, e in zip(grid, errors):
            w.writerow([f"{snr:g}", e, trials, f"{e / trials:.6g}"])
    print(f"wrote {len(grid)} points to {args.out}")
    return EXIT_OK


def cmd_ble_beacon(args) -> int:
    d = _load_json(args.pdu)
    try:
        pdu = ble.BleAdvPdu(bytes.fromhex(d["adv_address"]), bytes.fromhex(d.get("adv_data", "")))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad PDU: {exc}") from None
    channel = args.channel if args.channel is not None else d.get("channel", 37)
    try:
        pkt = ble.assemble_packet(pdu, int(channel))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = ble.GfskConfig()
    buf = ble.gfsk_modulate(pkt.bits(), cfg)
    write_iq_file(args.out, buf, description=f"BLE ADV_NONCONN_IND, channel {channel}")
    print(f"crc: {pkt.crc.hex()}")
    print(f"whitened: {pkt.whitened.hex()}")
    print(f"samples: {len(buf)}")
    return EXIT_OK


def cmd_concurrent_demo(args) -> int:
    d = _load_json(args.configs)
    if isinstance(d, list):
        d = {"configs": d}
    configs = [LoraParams.from_dict(c) for c in d.get("configs", [])]
    if len(configs) != 2:
        raise UsageError("concurrent-demo needs exactly two LoRa configs")
    n = int(d.get("n_symbols", 2000))
    seed = int(d["seed"]) if "seed" in d else _seed(args)
    try:
        results = concurrent_ser(configs, [args.snr_a, args.snr_b], n, seed, bool(d.get("use_fir", True)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream", "sf", "bw_hz", "snr_db", "symbol_errors", "trials", "ser"])
        for k, r in enumerate(results):
            w.writerow([k, r.params.sf, f"{r.params.bw_hz:g}", f"{r.snr_db:g}", r.symbol_errors, r.trials, f"{r.ser:.6g}"])
    for k, r in enumerate(results):
        print(f"stream {k}: sf={r.params.sf} bw={r.params.bw_hz:g} ser={r.ser:.6g}")
    return EXIT_OK


def cmd_ota_sim(args) -> int:
    from .ota.session import SessionConfig

    try:
        cfg = SessionConfig.from_dict(_load_json(args.session), default_seed=_seed(args))
        report = cfg.run()
    except (ValueError, TypeError, OSError) as exc:
        raise UsageError(f"bad session: {exc}") from None
    Path(args.out).write_text(report.to_json() + "\n")
    print(f"completed: {report.completed}")
    print(f"total_time_s: {report.total_time_s:.6f}")
    print(f"node_energy_mj: {report.node_energy_mj:.3f}")
    if not report.completed:
        print(f"failure: {report.failure}", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


def cmd_iq(args) -> int:
    fmt = WordFormat()
    if args.action == "frame":
        buf = read_iq_file(args.inp)
        bits = frame_words(quantize(buf, args.full_scale), fmt)
        write_word_file(args.out, bits)
        Path(str(args.out) + ".meta.json").write_text(
            json.dumps({"sample_rate_hz": buf.sample_rate_hz, "full_scale": args.full_scale}) + "\n"
        )
        print(f"framed {len(buf)} samples into {len(bits) // 32} words")
        return EXIT_OK
    meta_path = Path(str(args.inp) + ".meta.json")
    if not meta_path.exists():
        raise UsageError(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    qs, report = deframe_words(read_word_file(args.inp), fmt)
    buf = dequantize(qs, meta.get("full_scale", args.full_scale), meta["sample_rate_hz"])
    write_iq_file(args.out, buf, description="deframed I/Q words")
    print(f"deframed {len(qs)} samples; discarded {report.discarded_bits} bits")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotphy", description="LoRa/BLE baseband toolkit and OTA simulator")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker cap for sweeps")
    # the same flags are accepted after the subcommand; SUPPRESS keeps the top-level value otherwise
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lora-mod", parents=[common], help="modulate a LoRa frame to an I/Q file")
    s.add_argument("--config", required=True, help="LoRa config JSON (inline or path)")
    s.add_argument("--payload-hex", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lora_mod)

    s = sub.add_parser("lora-demod", parents=[common], help="decode a LoRa frame from an I/Q file")
    s.add_argument("--config", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--json", action="store_true", help="also print the full result as JSON")
    s.add_argument("--n-bytes", type=int, default=None, help="payload length in bytes, if known")
    s.set_defaults(func=cmd_lora_demod)

    s = sub.add_parser("ser-sweep", parents=[common], help="Monte-Carlo SER/BER versus SNR to CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ser_sweep)

    s = sub.add_parser("ble-beacon", parents=[common], help="assemble and GFSK-modulate an advertisement")
    s.add_argument("--pdu", required=True, help='{"adv_address": hex, "adv_data": hex}')
    s.add_argument("--channel", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ble_beacon)

    s = sub.add_parser("concurrent-demo", parents=[common], help="SER of two summed LoRa streams")
    s.add_argument("--configs", required=True)
    s.add_argument("--snr-a", type=float, required=True)
    s.add_argument("--snr-b", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_concurrent_demo)

    s = sub.add_parser("ota-sim", parents=[common], help="simulate an over-the-air update session")
    s.add_argument("--session", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ota_sim)

    s = sub.add_parser("iq", parents=[common], help="convert between I/Q files and framed word files")
    s.add_argument("action", choices=["frame", "deframe"])
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--full-scale", type=float, default=1.0)
    s.set_defaults(func=cmd_iq)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
