"""Discrete-event simulation of one AP updating one node over a lossy link."""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..channel import ErasureChannel
from ..lora.params import LoraParams, airtime
from .codec import BLOCK_SIZE, MemoryMeter, compress_block
from .flash import (
    KIND_CODES,
    STAGING_OFFSET,
    FirmwareImage,
    FlashModel,
    ImageKind,
    ProgrammingAborted,
    reassemble_and_program,
)
from .machines import (
    ApPhase,
    ApState,
    NodePhase,
    NodeState,
    PacketReceived,
    Reprogram,
    Send,
    Sleep,
    Start,
    StartTimer,
    Timeout,
    TimerFired,
    WriteFlash,
    ap_step,
    node_step,
)
from .packets import MAX_DATA_PAYLOAD, Kind, Manifest, Packet

# a 579 kB bitstream decompresses in at most 450 ms on the node MCU
DECOMPRESS_BYTES_PER_S = 579_000 / 0.45
DEFAULT_WAKE_DELAY_MS = 100
DEFAULT_DEVICE_ID = 1


@dataclass(frozen=True)
class PowerModel:
    """Node power draw in watts per radio/MCU state."""

    tx_w: float = 0.130
    rx_w: float = 0.040
    idle_w: float = 0.005
    sleep_w: float = 30e-6

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a non-negative number")

    def of(self, state: str) -> float:
        return {"tx": self.tx_w, "rx": self.rx_w, "idle": self.idle_w, "sleep": self.sleep_w}[state]


@dataclass(frozen=True)
class TimingEnergyModel:
    rx_to_tx_s: float = 11e-6
    tx_to_rx_s: float = 45e-6
    freq_switch_s: float = 220e-6
    wake_s: float = 22e-3
    reprogram_s: float = 22e-3
    power: PowerModel = field(default_factory=PowerModel)

    def __post_init__(self):
        for name in ("rx_to_tx_s", "tx_to_rx_s", "freq_switch_s", "wake_s", "reprogram_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def turnaround_s(self) -> float:
        """Gap before a reply: the responder turns RX to TX while the sender turns TX to RX."""
        return max(self.rx_to_tx_s, self.tx_to_rx_s)


def ota_link_params(sf: int = 8, bw_hz: float = 500_000.0, cr: int = 6, preamble: int = 8) -> LoraParams:
    return LoraParams(sf=sf, bw_hz=bw_hz, coding_rate_denominator=cr, preamble_len=preamble)


def ack_timeout(params: LoraParams, timing: TimingEnergyModel, payload_size: int = MAX_DATA_PAYLOAD) -> float:
    data = airtime(params, _data_len(payload_size))
    ack = airtime(params, len(Packet(Kind.ACK).encode()))
    return 2 * (data + ack + timing.rx_to_tx_s + timing.tx_to_rx_s)


def _data_len(payload_size: int) -> int:
    return len(Packet(Kind.DATA, payload=bytes(payload_size)).encode())


@dataclass
class ChunkPlan:
    blocks: list[tuple[int, bytes]]
    manifest: Manifest
    payloads: list[bytes]

    @property
    def stream(self) -> bytes:
        return b"".join(b for _, b in self.blocks)


def split_payloads(stream: bytes, payload_size: int = MAX_DATA_PAYLOAD) -> list[bytes]:
    if not 1 <= payload_size <= MAX_DATA_PAYLOAD:
        raise ValueError(f"payload_size must lie in 1..{MAX_DATA_PAYLOAD}")
    return [stream[i : i + payload_size] for i in range(0, len(stream), payload_size)]


def chunk_firmware(image: FirmwareImage, payload_size: int = MAX_DATA_PAYLOAD) -> ChunkPlan:
    """Split into ``BLOCK_SIZE`` blocks, compress each, and cut the result into DATA payloads."""
    data = image.data
    blocks = [(k, compress_block(data[i : i + BLOCK_SIZE])) for k, i in enumerate(range(0, len(data), BLOCK_SIZE))]
    manifest = Manifest(len(data), tuple(len(b) for _, b in blocks), KIND_CODES[image.kind])
    stream = b"".join(b for _, b in blocks)
    return ChunkPlan(blocks, manifest, split_payloads(stream, payload_size))


@dataclass
class SessionReport:
    completed: bool
    ap_confirmed: bool
    total_time_s: float
    node_energy_mj: float
    packets_sent: int
    retransmissions: int
    bytes_over_air: int
    decompress_time_budget: float
    data_packets: int
    compressed_bytes: int
    image_bytes: int
    image_identical: bool
    failure: str | None = None
    node_timeline: list[tuple[float, float, str]] = field(default_factory=list, repr=False)
    trace: list[tuple[float, str, str]] = field(default_factory=list, repr=False)

    def to_dict(self, include_logs: bool = False) -> dict:
        d = asdict(self)
        if not include_logs:
            d.pop("node_timeline")
            d.pop("trace")
        return d

    def to_json(self, include_logs: bool = False) -> str:
        return json.dumps(self.to_dict(include_logs), indent=2, sort_keys=True)


def integrate_energy_mj(timeline, power: PowerModel) -> float:
    return 1000 * sum((end - start) * power.of(state) for start, end, state in timeline)


class _NodeMeter:
    """Contiguous node power-state timeline starting at t = 0."""

    def __init__(self):
        self.segments: list[tuple[float, float, str]] = []
        self.state = "rx"
        self.since = 0.0

    def set(self, t: float, state: str) -> None:
        if t < self.since:
            raise RuntimeError("node state change goes back in time")
        if t > self.since:
            self.segments.append((self.since, t, self.state))
        self.state, self.since = state, t

    def close(self, t: float) -> None:
        self.set(t, self.state)


def simulate_session(
    image: FirmwareImage | None,
    loss_prob: float = 0.0,
    timing: TimingEnergyModel | None = None,
    lora_cfg: LoraParams | None = None,
    seed: int = 0,
    *,
    compressed_size: int | None = None,
    image_size: int | None = None,
    payload_size: int = MAX_DATA_PAYLOAD,
    erasure_script=None,
    wake_delay_ms: int = DEFAULT_WAKE_DELAY_MS,
) -> SessionReport:
    """Run the AP and node machines to completion or failure.

    With ``compressed_size`` the payload is that many seeded random bytes
    standing in for an already-compressed image; the node stores and installs
    it without decoding, and ``image_size`` (default: the same size) sets the
    decompression time budget.
    """
    timing = timing or TimingEnergyModel()
    params = lora_cfg or ota_link_params()
    if compressed_size is not None:
        if compressed_size < 0:
            raise ValueError("compressed_size must be non-negative")
        stream = np.random.default_rng([seed, 0x5EED]).bytes(compressed_size)
        full_size = compressed_size if image_size is None else image_size
        manifest = Manifest(full_size, (), 0)
        payloads = split_payloads(stream, payload_size)
        source = stream
    else:
        if image is None:
            raise ValueError("either an image or compressed_size is required")
        plan = chunk_firmware(image, payload_size)
        stream, manifest, payloads = plan.stream, plan.manifest, plan.payloads
        full_size = len(image.data)
        source = image.data

    timeout = ack_timeout(params, timing, payload_size)
    ap = ApState(tuple(payloads), manifest, DEFAULT_DEVICE_ID, wake_delay_ms, timeout)
    node = NodeState(DEFAULT_DEVICE_ID, linger_s=2 * timeout, wake_s=timing.wake_s)
    flash = FlashModel()
    channel = ErasureChannel(loss_prob, seed, erasure_script)
    meter = _NodeMeter()
    decompress_s = full_size / DECOMPRESS_BYTES_PER_S

    queue: list = []
    order = itertools.count()
    trace: list[tuple[float, str, str]] = []
    stats = {"sent": 0, "bytes": 0}
    result = {"done_at": None, "failure": None, "installed": None}
    node_tx_busy_until = [0.0]
    air_cache: dict[int, float] = {}

    def air(n_bytes: int) -> float:
        if n_bytes not in air_cache:
            air_cache[n_bytes] = airtime(params, n_bytes)
        return air_cache[n_bytes]

    def push(t: float, target: str, event) -> None:
        heapq.heappush(queue, (t, next(order), target, event))

    def transmit(t: float, sender: str, pkt: Packet) -> None:
        wire = pkt.encode()
        start = t + timing.turnaround_s
        end = start + air(len(wire))
        stats["sent"] += 1
        stats["bytes"] += len(wire)
        delivered = channel.deliver()
        trace.append((start, sender, f"{pkt.kind.name}{'' if pkt.kind in (Kind.REQUEST, Kind.READY) else pkt.seq}"
                      + ("" if delivered else " lost")))
        if sender == "node":
            meter.set(start, "tx")
            push(end, "node_tx_done", None)
            node_tx_busy_until[0] = end
        if delivered:
            push(end, "node" if sender == "ap" else "ap", PacketReceived(Packet.decode(wire)))

    def run_ap(t: float, event) -> None:
        nonlocal ap
        ap, actions = ap_step(ap, event)
        for act in actions:
            if isinstance(act, Send):
                transmit(t, "ap", act.packet)
            elif isinstance(act, StartTimer):
                push(t + act.delay_s, "ap", Timeout(act.token))
        if ap.phase is ApPhase.FAILED and result["failure"] is None:
            result["failure"] = ap.log[-1]

    def run_node(t: float, event) -> None:
        nonlocal node
        if node.phase is NodePhase.IDLE and isinstance(event, PacketReceived):
            return  # asleep: radio off
        if node.phase in (NodePhase.REPROGRAM, NodePhase.DONE, NodePhase.FAILED) and isinstance(
            event, PacketReceived
        ):
            return  # radio already shut down for decompression
        node, actions = node_step(node, event)
        for act in actions:
            if isinstance(act, Send):
                transmit(t, "node", act.packet)
            elif isinstance(act, WriteFlash):
                flash.write(STAGING_OFFSET + act.offset, act.data)
            elif isinstance(act, Sleep):
                meter.set(t, "sleep")
                push(t + act.duration_s, "node_wake_start", None)
            elif isinstance(act, StartTimer):
                push(t + act.delay_s, "node", TimerFired(act.name))
            elif isinstance(act, Reprogram):
                meter.set(t, "idle")
                try:
                    if act.manifest.block_lengths:
                        installed = reassemble_and_program(flash, act.manifest, MemoryMeter())
                    else:
                        raw = flash.read(STAGING_OFFSET, len(stream))
                        installed = FirmwareImage(ImageKind.FPGA_BITSTREAM, raw) if raw else None
                        if installed is not None:
                            flash.install(installed)
                    result["installed"] = installed
                    push(t + decompress_s + timing.reprogram_s, "node", TimerFired("programmed"))
                except ProgrammingAborted as exc:
                    result["failure"] = str(exc)
                    push(t + decompress_s, "node", TimerFired("program_failed"))
        if node.phase in (NodePhase.DONE, NodePhase.FAILED):
            result["done_at"] = t
            meter.close(t)

    push(0.0, "ap", Start())
    now = 0.0
    while queue:
        now, _, target, event = heapq.heappop(queue)
        if target == "ap":
            run_ap(now, event)
        elif target == "node":
            run_node(now, event)
        elif target == "node_tx_done":
            if now >= node_tx_busy_until[0] and meter.state == "tx":
                meter.set(now, "rx")
        elif target == "node_wake_start":
            meter.set(now, "idle")
        if result["done_at"] is not None:
            break
        if ap.phase is ApPhase.FAILED and node.phase is not NodePhase.REPROGRAM:
            break

    completed = node.phase is NodePhase.DONE
    if result["done_at"] is None:
        meter.close(now)
    total = meter.since
    installed = result["installed"]
    identical = completed and installed is not None and installed.data == (
        source if compressed_size is None else stream
    )
    failure = result["failure"]
    if not completed and failure is None:
        failure = "session did not terminate"
    return SessionReport(
        completed=completed,
        ap_confirmed=ap.phase is ApPhase.DONE,
        total_time_s=total,
        node_energy_mj=integrate_energy_mj(meter.segments, timing.power),
        packets_sent=stats["sent"],
        retransmissions=ap.retransmissions,
        bytes_over_air=stats["bytes"],
        decompress_time_budget=decompress_s,
        data_packets=len(payloads),
        compressed_bytes=len(stream),
        image_bytes=full_size,
        image_identical=identical,
        failure=None if completed else failure,
        node_timeline=list(meter.segments),
        trace=trace,
    )


@dataclass(frozen=True)
class SessionConfig:
    image_path: str | None = None
    loss_prob: float = 0.0
    seed: int = 0
    sf: int = 8
    bw_hz: float = 500_000.0
    cr: int = 6
    payload_size: int = MAX_DATA_PAYLOAD
    preamble: int = 8
    power_model: PowerModel = field(default_factory=PowerModel)
    compressed_size: int | None = None
    image_size: int | None = None
    image_kind: str = ImageKind.FPGA_BITSTREAM.value

    @classmethod
    def from_dict(cls, d: dict, default_seed: int | None = None) -> "SessionConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown session fields: {sorted(unknown)}")
        d = dict(d)
        if "seed" not in d and default_seed is not None:
            d["seed"] = default_seed
        if "power_model" in d:
            d["power_model"] = PowerModel(**d["power_model"])
        cfg = cls(**d)
        if not 0.0 <= cfg.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if cfg.image_path is None and cfg.compressed_size is None:
            raise ValueError("session needs image_path or compressed_size")
        return cfg

    def run(self) -> SessionReport:
        params = ota_link_params(self.sf, self.bw_hz, self.cr, self.preamble)
        timing = TimingEnergyModel(power=self.power_model)
        image = None
        if self.compressed_size is None:
            with open(self.image_path, "rb") as fh:
                image = FirmwareImage(ImageKind(self.image_kind), fh.read())
        return simulate_session(
            image,
            self.loss_prob,
            timing,
            params,
            self.seed,
            compressed_size=self.compressed_size,
            image_size=self.image_size,
            payload_size=self.payload_size,
        )
