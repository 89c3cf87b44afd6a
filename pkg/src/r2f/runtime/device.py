"""Device side: faulty FP under TMR, increment packets, and the message state machine."""
from __future__ import annotations

import logging
import time

import numpy as np

from .. import data
from ..codec import choose_encoding
from ..errors import DecodeError, R2FError
from ..nn.serialize import model_from_bytes
from ..protocol import messages as msg
from ..protocol.messages import INFERENCE, TRAINING, Message, MsgType
from ..protocol.payload import BatchPayload
from ..tmr import tmr_forward
from .config import StageTiming, TrainingConfig, data_rng
from .costs import device_timing

log = logging.getLogger(__name__)


class Laps:
    """Wall-clock stopwatch that charges every interval to exactly one stage."""

    def __init__(self):
        self.t = time.perf_counter()
        self.timing = StageTiming()

    def lap(self, stage):
        now = time.perf_counter()
        setattr(self.timing, stage, getattr(self.timing, stage) + now - self.t)
        self.t = now


def client_step(model, x, labels, sample_ids, cfg: TrainingConfig, execution=0, mode=TRAINING):
    """One device forward pass packaged as a BatchPayload, with its stage timing.

    ``x`` is the int8 network input. In training mode every layer gets a
    packet (Sparse when it qualifies, otherwise Raw copy-0 bytes); inference
    mode returns the final outputs only.
    """
    laps = Laps()
    cap = tmr_forward(model, x, cfg.fault, cfg.tmr, execution, cfg.designated)
    laps.lap("tmr")
    ids = np.asarray(sample_ids, dtype=np.uint64)
    labels = np.asarray(labels, dtype=np.uint16)
    final = np.ascontiguousarray(cap.voted[-1]).tobytes()
    if mode == INFERENCE:
        payload = BatchPayload(INFERENCE, ids, labels, outputs=final)
    else:
        comp = cfg.make_compressor()
        packets = [choose_encoding(cap, i, cfg.threshold, compressor=comp) for i in range(len(cap))]
        payload = BatchPayload(TRAINING, ids, labels, np.ascontiguousarray(x).tobytes(), packets, final)
    m = device_timing(model, payload, cfg.tmr, cfg.costs)
    if cfg.timing == "modeled":
        return payload, m
    # packaging is charged with encoding; then split the measured forward
    # wall time between fp and tmr in modeled proportion
    laps.lap("codec")
    t = laps.timing
    share = m.fp / (m.fp + m.tmr) if m.fp + m.tmr > 0 else 1.0
    t.fp, t.tmr = t.tmr * share, t.tmr * (1 - share)
    if m.increment + m.codec > 0:
        t.increment, t.codec = t.codec * m.increment / (m.increment + m.codec), \
            t.codec * m.codec / (m.increment + m.codec)
    return payload, t


class Device:
    """Request handler holding the device's mode, model and data cursor.

    Every request yields exactly one reply. A request that is invalid in the
    current state is answered with an Error message and changes nothing.
    SetMode(training) also starts a fresh pass over the local data.
    """

    def __init__(self, dataset, cfg: TrainingConfig, device_id=None):
        self.dataset = dataset
        self.cfg = cfg
        self.device_id = cfg.device_id if device_id is None else device_id
        self.mode = INFERENCE
        self.model = None
        self.executions = 0
        self.last_reply = None
        self.last_timing = StageTiming()
        self._rng = data_rng(cfg.seed)
        self._order = None
        self._pos = 0
        self._x = data.to_input(dataset.images) if len(dataset) else None

    def state(self):
        """Comparable snapshot of everything a request may change."""
        model = None if self.model is None else id(self.model)
        order = None if self._order is None else self._order.tobytes()
        return (self.mode, model, self.executions, self._pos, order,
                id(self.last_reply), self._rng.bit_generator.state["state"]["state"])

    def _error(self, reason):
        return msg.error(self.device_id, reason)

    def handle(self, m: Message) -> Message:
        try:
            handler = {MsgType.SET_MODE: self._set_mode,
                       MsgType.DEPLOY_MODEL: self._deploy,
                       MsgType.GET_DATA: self._get_data}.get(m.msg_type)
            if handler is None:
                return self._error(f"unexpected message type {m.msg_type.name}")
            if m.device_id != self.device_id:
                return self._error(f"message for device {m.device_id}")
            return handler(m.payload)
        except R2FError as exc:
            log.warning("device %d: %s", self.device_id, exc)
            return self._error(str(exc))

    def _set_mode(self, payload):
        if len(payload) != 1 or payload[0] not in (INFERENCE, TRAINING):
            return self._error(f"invalid mode {payload.hex()}")
        self.mode = payload[0]
        if self.mode == TRAINING:
            self._order, self._pos = None, 0
        return msg.ack(self.device_id)

    def _deploy(self, payload):
        try:
            model = model_from_bytes(payload)
        except DecodeError as exc:
            return self._error(f"model rejected ({exc}); previous model kept")
        if model.input_shape != (1, data.SIDE, data.SIDE):
            return self._error(f"model input {model.input_shape} does not fit local data")
        self.model = model
        return msg.ack(self.device_id)

    def _get_data(self, payload):
        if len(payload) != msg.GET_DATA.size:
            return self._error("GetData payload must be 3 bytes")
        bs, flags = msg.GET_DATA.unpack(payload)
        if flags & ~msg.RESEND:
            return self._error(f"unknown GetData flags {flags:#x}")
        if flags & msg.RESEND:
            return self.last_reply if self.last_reply is not None else self._error("nothing to resend")
        if self.model is None:
            return self._error("no model deployed")
        if bs == 0:
            return self._error("batch size must be positive")
        saved = (self._rng.bit_generator.state, self._order, self._pos)
        try:
            body, timing = self._next_batch(bs)
        except R2FError:
            self._rng.bit_generator.state, self._order, self._pos = saved
            raise
        self.last_timing = timing
        self.last_reply = Message(MsgType.DATA_RESPONSE, self.device_id, body.to_bytes())
        return self.last_reply

    def _next_batch(self, bs):
        if self._order is None:
            self._order = self._rng.permutation(len(self.dataset))
            self._pos = 0
        idx = self._order[self._pos:self._pos + bs]
        if len(idx) == 0:
            # end of pass: empty response, the next request starts a new permutation
            self._order = None
            return BatchPayload(self.mode, np.zeros(0, np.uint64), np.zeros(0, np.uint16)), StageTiming()
        out = client_step(self.model, self._x[idx], self.dataset.labels[idx], idx, self.cfg,
                          self.executions, self.mode)
        self._pos += len(idx)
        self.executions += 1
        return out
