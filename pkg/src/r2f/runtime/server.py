"""Server side: activation reconstruction, backward pass, update and redeploy."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import data
from ..codec import IDENTITY as NO_COMPRESSION
from ..codec import Encoding
from ..errors import DecodeError, ProtocolError, ShapeError
from ..nn import quant
from ..nn.forward import IDENTITY, layer_forward
from ..nn.model import Kind, quantize_model
from ..nn.serialize import model_to_bytes
from ..nn.train import SGD, backward
from ..protocol import messages as msg
from ..protocol.channel import DOWNLINK, UPLINK
from ..protocol.messages import TRAINING, MsgType
from ..protocol.payload import BatchPayload
from ..tmr import tmr_forward
from .config import StageTiming, TrainingConfig, data_rng
from .costs import device_timing, server_timing

log = logging.getLogger(__name__)


def decode_inputs(model, payload: BatchPayload):
    shape = (payload.batch_size,) + model.input_shape
    if len(payload.inputs) != int(np.prod(shape)):
        raise DecodeError("size", f"input blob of {len(payload.inputs)} bytes for shape {shape}")
    return np.frombuffer(payload.inputs, np.int8).reshape(shape).copy()


def reconstruct_activations(model, x, packets, compressor=NO_COMPRESSION):
    """Approximate the device's faulty layer outputs from its packets.

    Raw packets are taken as they are. A Sparse packet adds its increment to
    a clean recompute of the layer, fed by the previous layer's reference
    (the recompute for a Sparse predecessor, the received tensor for a Raw
    one) so that the chain mirrors the device's voted values.
    """
    n_layers = len(model.layers)
    ids = [p.layer_id for p in packets]
    if ids != list(range(n_layers)):
        raise DecodeError("packets", f"expected one packet per layer 0..{n_layers - 1}, got {ids}")
    batch = x.shape[0]
    approx, bases = [], []
    cur = x
    for i, (layer, pkt) in enumerate(zip(model.layers, packets)):
        shape = (batch,) + model.shapes[i]
        if pkt.encoding == Encoding.SPARSE:
            ref = bases[layer.ref] if layer.kind == Kind.RESIDUAL_ADD else None
            ref_exp = model.layers[layer.ref].out_exp if ref is not None else None
            clean = layer_forward(layer, cur, model.in_exp(i), IDENTITY, ref, ref_exp)
            try:
                a = pkt.tensor(reference=clean, compressor=compressor, saturate=True)
            except ShapeError as exc:
                raise DecodeError("size", f"layer {i}: {exc}") from None
            base = clean
        else:
            a = pkt.tensor(shape=shape)
            base = a
        approx.append(a)
        bases.append(base)
        cur = base
    return approx


def dequantize_activations(model, acts):
    return [quant.dequantize(a, layer.out_exp) for a, layer in zip(acts, model.layers)]


def server_step(fm, qm, payload: BatchPayload, cfg: TrainingConfig, opt: SGD):
    """Reconstruct, backpropagate and update; returns ``(fm, qm, loss, timing)``."""
    if payload.mode != TRAINING:
        raise ProtocolError("training step needs a training-mode payload")
    t0 = time.perf_counter()
    x = decode_inputs(qm, payload)
    acts = reconstruct_activations(qm, x, payload.packets, cfg.make_compressor())
    t1 = time.perf_counter()
    loss, grads = backward(fm, quant.dequantize(x, qm.input_exp),
                           dequantize_activations(qm, acts), payload.labels.astype(np.int64))
    fm = opt.step(fm, grads)
    qm = quantize_model(fm)
    t2 = time.perf_counter()
    if cfg.timing == "modeled":
        timing = server_timing(qm, payload, cfg.costs)
    else:
        timing = StageTiming(codec=t1 - t0, bp=t2 - t1)
    return fm, qm, loss, timing


@dataclass
class Iteration:
    epoch: int
    step: int
    batch_size: int
    loss: float
    timing: StageTiming
    raw_bytes: int = 0
    packet_bytes: int = 0
    n_sparse: int = 0
    n_raw: int = 0
    retransmits: int = 0

    def row(self):
        r = {"epoch": self.epoch, "step": self.step, "batch_size": self.batch_size,
             "loss": self.loss, "raw_bytes": self.raw_bytes, "packet_bytes": self.packet_bytes,
             "n_sparse": self.n_sparse, "n_raw": self.n_raw, "retransmits": self.retransmits}
        r.update(self.timing.as_dict())
        return r


@dataclass
class RetrainResult:
    qmodel: object
    fmodel: object
    iterations: list = field(default_factory=list)
    setup: StageTiming = field(default_factory=StageTiming)
    dropped: int = 0


def _expect(reply, kind, what):
    if reply.msg_type == MsgType.ERROR:
        raise ProtocolError(f"{what}: device error: {reply.payload.decode('utf-8', 'replace')}")
    if reply.msg_type != kind:
        raise ProtocolError(f"{what}: expected {kind.name}, got {reply.msg_type.name}")
    return reply


def _link_delta(link, before):
    after = {d: link.meter.total(d, "bytes") for d in (UPLINK, DOWNLINK)}
    secs = {d: link.meter.total(d, "seconds") for d in (UPLINK, DOWNLINK)}
    return after, secs, StageTiming(uplink=secs[UPLINK] - before[1][UPLINK],
                                    downlink=secs[DOWNLINK] - before[1][DOWNLINK],
                                    bytes_up=after[UPLINK] - before[0][UPLINK],
                                    bytes_down=after[DOWNLINK] - before[0][DOWNLINK])


def _mark(link):
    return ({d: link.meter.total(d, "bytes") for d in (UPLINK, DOWNLINK)},
            {d: link.meter.total(d, "seconds") for d in (UPLINK, DOWNLINK)})


def fetch_batch(link, cfg):
    """GetData with one retransmission on a malformed reply; ``None`` drops the batch."""
    dev = cfg.device_id
    reply = _expect(link.request(msg.get_data(dev, cfg.batch_size)), MsgType.DATA_RESPONSE, "GetData")
    for attempt in range(2):
        try:
            return BatchPayload.from_bytes(reply.payload), attempt
        except DecodeError as exc:
            log.warning("batch decode failed (%s)%s", exc, "; retransmitting" if attempt == 0 else "")
            if attempt == 0:
                reply = _expect(link.request(msg.get_data(dev, cfg.batch_size, resend=True)),
                                MsgType.DATA_RESPONSE, "GetData resend")
    return None, 2


def retrain(fm0, link, cfg: TrainingConfig, device=None, on_iteration=None):
    """Remote retraining over ``link``.

    Per iteration: GetData, reconstruct + backward + update on the server,
    DeployModel of the re-quantized master. ``device`` (in-process links
    only) supplies measured device timings; otherwise they are modeled from
    the payload.
    """
    dev = cfg.device_id
    opt = SGD(cfg.lr, cfg.momentum)
    fm, qm = fm0, quantize_model(fm0)
    result = RetrainResult(qm, fm)
    mark = _mark(link)
    _expect(link.request(msg.deploy_model(dev, model_to_bytes(qm))), MsgType.ACK, "DeployModel")
    step = 0
    for epoch in range(cfg.epochs):
        _expect(link.request(msg.set_mode(dev, TRAINING)), MsgType.ACK, "SetMode")
        if epoch == 0:
            mark, _, result.setup = _link_delta(link, mark)
            mark = _mark(link)
        done = 0
        while cfg.max_batches is None or done < cfg.max_batches:
            payload, retries = fetch_batch(link, cfg)
            if payload is None:
                result.dropped += 1
                done += 1
                continue
            if payload.batch_size == 0:
                break
            if device is not None and cfg.timing == "measured":
                t_dev = device.last_timing
            else:
                t_dev = device_timing(qm, payload, cfg.tmr, cfg.costs)
            fm, qm, loss, t_srv = server_step(fm, qm, payload, cfg, opt)
            _expect(link.request(msg.deploy_model(dev, model_to_bytes(qm))), MsgType.ACK, "DeployModel")
            _, _, t_link = _link_delta(link, mark)
            mark = _mark(link)
            it = Iteration(epoch, step, payload.batch_size, loss, t_dev + t_srv + t_link,
                           raw_bytes=sum(payload.batch_size * int(np.prod(s)) for s in qm.shapes),
                           packet_bytes=sum(p.size for p in payload.packets),
                           n_sparse=sum(p.encoding == Encoding.SPARSE for p in payload.packets),
                           n_raw=sum(p.encoding == Encoding.RAW for p in payload.packets),
                           retransmits=retries)
            result.iterations.append(it)
            if on_iteration is not None:
                on_iteration(it)
            step += 1
            done += 1
    result.qmodel, result.fmodel = qm, fm
    return result


def epoch_batches(n, batch_size, rng, max_batches=None):
    order = rng.permutation(n)
    starts = range(0, n, batch_size)
    if max_batches is not None:
        starts = list(starts)[:max_batches]
    for s in starts:
        yield order[s:s + batch_size]


def qat_finetune(fm0, dataset, cfg: TrainingConfig):
    """The same training loop in-process: no messages, no codec.

    Gradients flow through the device's designated faulty activations
    directly. Batch order and fault streams match :func:`retrain`.
    """
    rng = data_rng(cfg.seed)
    opt = SGD(cfg.lr, cfg.momentum)
    fm, qm = fm0, quantize_model(fm0)
    x_all = data.to_input(dataset.images) if len(dataset) else None
    execution = 0
    losses = []
    for _ in range(cfg.epochs):
        for idx in epoch_batches(len(dataset), cfg.batch_size, rng, cfg.max_batches):
            x = x_all[idx]
            cap = tmr_forward(qm, x, cfg.fault, cfg.tmr, execution, cfg.designated)
            execution += 1
            loss, grads = backward(fm, quant.dequantize(x, qm.input_exp),
                                   dequantize_activations(qm, cap.copy0),
                                   dataset.labels[idx].astype(np.int64))
            fm = opt.step(fm, grads)
            qm = quantize_model(fm)
            losses.append(loss)
    return fm, qm, losses
