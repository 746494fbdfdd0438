"""Access-point and node state machines for stop-and-wait firmware transfer.

Both machines are pure: ``step(state, event)`` returns a new state and a list
of actions for the driver to carry out.  Neither touches time, radios or
flash directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .packets import MAX_DATA_PAYLOAD, Kind, Manifest, Packet

RETRY_CEILING = 100


# events


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class PacketReceived:
    packet: Packet


@dataclass(frozen=True)
class Timeout:
    token: int


@dataclass(frozen=True)
class TimerFired:
    name: str


# actions


@dataclass(frozen=True)
class Send:
    packet: Packet


@dataclass(frozen=True)
class WriteFlash:
    offset: int
    data: bytes


@dataclass(frozen=True)
class StartTimer:
    delay_s: float
    token: int = 0
    name: str = ""


@dataclass(frozen=True)
class Sleep:
    duration_s: float


@dataclass(frozen=True)
class Reprogram:
    manifest: Manifest


class ApPhase(str, Enum):
    IDLE = "IDLE"
    AWAIT_READY = "AWAIT_READY"
    TRANSFER = "TRANSFER"
    END_SENT = "END_SENT"
    DONE = "DONE"
    FAILED = "FAILED"


class NodePhase(str, Enum):
    LISTEN = "LISTEN"
    IDLE = "IDLE"  # asleep until the announced wake time
    READY_SENT = "READY_SENT"
    TRANSFER = "TRANSFER"
    REPROGRAM = "REPROGRAM"
    DONE = "DONE"
    FAILED = "FAILED"


@dataclass(frozen=True)
class ApState:
    payloads: tuple[bytes, ...]
    manifest: Manifest
    device_id: int
    wake_delay_ms: int
    ack_timeout_s: float
    phase: ApPhase = ApPhase.IDLE
    next_seq: int = 0
    retries: int = 0
    timer_token: int = 0
    retransmissions: int = 0
    log: tuple[str, ...] = ()

    def current_packet(self) -> Packet:
        if self.phase is ApPhase.AWAIT_READY:
            return Packet(Kind.REQUEST, device_ids=(self.device_id,), wake_time_ms=self.wake_delay_ms)
        if self.phase is ApPhase.TRANSFER:
            return Packet(Kind.DATA, seq=self.next_seq, payload=self.payloads[self.next_seq])
        return Packet(Kind.END, seq=len(self.payloads), manifest=self.manifest)


def _ap_send_current(state: ApState, *, retry: bool) -> tuple[ApState, list]:
    token = state.timer_token + 1
    state = replace(
        state,
        timer_token=token,
        retries=state.retries + 1 if retry else 0,
        retransmissions=state.retransmissions + (1 if retry else 0),
    )
    return state, [Send(state.current_packet()), StartTimer(_ap_wait(state), token)]


def _ap_wait(state: ApState) -> float:
    # a REQUEST is answered only after the node has slept until its wake time
    if state.phase is ApPhase.AWAIT_READY:
        return state.wake_delay_ms / 1000 + state.ack_timeout_s
    return state.ack_timeout_s


def _advance(state: ApState) -> tuple[ApState, list]:
    nxt = state.next_seq + 1
    if nxt < len(state.payloads):
        return _ap_send_current(replace(state, next_seq=nxt), retry=False)
    return _ap_send_current(replace(state, next_seq=nxt, phase=ApPhase.END_SENT), retry=False)


def ap_step(state: ApState, event) -> tuple[ApState, list]:
    phase = state.phase
    if isinstance(event, Start):
        if phase is not ApPhase.IDLE:
            return replace(state, log=state.log + ("start ignored: already running",)), []
        return _ap_send_current(replace(state, phase=ApPhase.AWAIT_READY), retry=False)

    if isinstance(event, Timeout):
        if event.token != state.timer_token or phase in (ApPhase.DONE, ApPhase.FAILED, ApPhase.IDLE):
            return state, []
        if state.retries >= RETRY_CEILING:
            msg = f"gave up in {phase.value} after {state.retries} retries"
            return replace(state, phase=ApPhase.FAILED, log=state.log + (msg,)), []
        return _ap_send_current(state, retry=True)

    if isinstance(event, PacketReceived):
        pkt = event.packet
        if phase is ApPhase.AWAIT_READY and pkt.kind is Kind.READY:
            if pkt.device_ids and pkt.device_ids[0] != state.device_id:
                return replace(state, log=state.log + ("READY from unexpected device",)), []
            if not state.payloads:
                return _ap_send_current(replace(state, phase=ApPhase.END_SENT), retry=False)
            return _ap_send_current(replace(state, phase=ApPhase.TRANSFER, next_seq=0), retry=False)
        if pkt.kind is Kind.ACK and pkt.seq == state.next_seq:
            if phase is ApPhase.TRANSFER:
                return _advance(state)
            if phase is ApPhase.END_SENT:
                return replace(state, phase=ApPhase.DONE, timer_token=state.timer_token + 1), []
        return replace(state, log=state.log + (f"ignored {pkt.kind.name} in {phase.value}",)), []

    return replace(state, log=state.log + (f"unknown event {event!r}",)), []


@dataclass(frozen=True)
class NodeState:
    device_id: int
    linger_s: float
    wake_s: float
    phase: NodePhase = NodePhase.LISTEN
    next_expected_seq: int = 0
    flash_cursor: int = 0
    manifest: Manifest | None = None
    log: tuple[str, ...] = ()


def _note(state: NodeState, msg: str) -> tuple[NodeState, list]:
    return replace(state, log=state.log + (msg,)), []


def node_step(state: NodeState, event) -> tuple[NodeState, list]:
    phase = state.phase
    if isinstance(event, TimerFired):
        if event.name == "wake" and phase is NodePhase.IDLE:
            ready = Packet(Kind.READY, device_ids=(state.device_id,))
            return replace(state, phase=NodePhase.READY_SENT), [Send(ready)]
        if event.name == "linger" and phase is NodePhase.TRANSFER and state.manifest is not None:
            return replace(state, phase=NodePhase.REPROGRAM), [Reprogram(state.manifest)]
        if event.name == "programmed" and phase is NodePhase.REPROGRAM:
            return replace(state, phase=NodePhase.DONE), []
        if event.name == "program_failed" and phase is NodePhase.REPROGRAM:
            return replace(state, phase=NodePhase.FAILED, log=state.log + ("programming aborted",)), []
        return _note(state, f"timer {event.name} ignored in {phase.value}")

    if not isinstance(event, PacketReceived):
        return _note(state, f"unexpected event {event!r}")
    pkt = event.packet

    if pkt.kind is Kind.REQUEST:
        if state.device_id not in pkt.device_ids:
            return _note(state, "REQUEST for other devices")
        if phase is NodePhase.LISTEN:
            delay = pkt.wake_time_ms / 1000
            actions = [Sleep(max(0.0, delay - state.wake_s)), StartTimer(delay, name="wake")]
            return replace(state, phase=NodePhase.IDLE), actions
        if phase is NodePhase.READY_SENT:
            # our READY was lost; answer the repeated REQUEST straight away
            return state, [Send(Packet(Kind.READY, device_ids=(state.device_id,)))]
        return _note(state, f"REQUEST ignored in {phase.value}")

    if pkt.kind is Kind.DATA:
        if phase is NodePhase.READY_SENT:
            # first DATA doubles as the AP's acknowledgement of READY
            state = replace(state, phase=NodePhase.TRANSFER)
            phase = state.phase
        if phase is not NodePhase.TRANSFER or state.manifest is not None:
            return _note(state, f"DATA {pkt.seq} ignored in {phase.value}")
        if pkt.seq == state.next_expected_seq:
            offset = MAX_DATA_PAYLOAD * pkt.seq
            state = replace(
                state,
                next_expected_seq=pkt.seq + 1,
                flash_cursor=offset + len(pkt.payload),
            )
            return state, [WriteFlash(offset, pkt.payload), Send(Packet(Kind.ACK, seq=pkt.seq))]
        if pkt.seq < state.next_expected_seq:
            return state, [Send(Packet(Kind.ACK, seq=pkt.seq))]
        return _note(state, f"DATA {pkt.seq} ahead of expected {state.next_expected_seq}")

    if pkt.kind is Kind.END:
        if phase is NodePhase.READY_SENT and pkt.seq == 0:
            state = replace(state, phase=NodePhase.TRANSFER)
            phase = state.phase
        if phase is not NodePhase.TRANSFER or pkt.seq != state.next_expected_seq:
            return _note(state, f"END {pkt.seq} ignored in {phase.value}")
        ack = Send(Packet(Kind.ACK, seq=pkt.seq))
        if state.manifest is not None:
            return state, [ack]
        # stay on air long enough to re-ACK an END whose ACK was lost
        return replace(state, manifest=pkt.manifest), [ack, StartTimer(state.linger_s, name="linger")]

    return _note(state, f"{pkt.kind.name} ignored in {phase.value}")
