"""Modeled per-stage compute time of one retraining iteration."""
import numpy as np

from ..codec import Encoding
from ..tmr import Variant
from .config import CostModel, StageTiming


def _elems(model, i, batch):
    return batch * int(np.prod(model.shapes[i]))


def device_timing(model, payload, policy, costs: CostModel):
    """FP, TMR, increment and device-side encoding cost of one DataResponse."""
    b = payload.batch_size
    macs = np.asarray(model.mac_counts, dtype=np.float64)
    t = StageTiming(fp=b * macs.sum() / costs.device_macs)
    protected = [i for i in range(len(model.layers)) if policy.protects(i)]
    if policy.variant != Variant.NONE:
        votes = sum(_elems(model, i, b) for i in protected)
        t.tmr = 2 * b * macs[protected].sum() / costs.device_macs + 3 * votes / costs.device_elems
    if payload.packets:
        cand = sum(_elems(model, i, b) for i in protected)
        t.increment = cand / costs.device_elems
        t.codec = sum(_elems(model, p.layer_id, b) for p in payload.packets
                      if p.encoding == Encoding.SPARSE) / costs.device_elems
    return t


def server_timing(model, payload, costs: CostModel):
    """Reference recompute + decode (codec) and backward + update (bp)."""
    b = payload.batch_size
    macs = np.asarray(model.mac_counts, dtype=np.float64)
    sparse = [p.layer_id for p in payload.packets if p.encoding == Encoding.SPARSE]
    t = StageTiming()
    if sparse:
        t.codec = (b * macs[sparse].sum() / costs.server_macs
                   + sum(_elems(model, i, b) for i in sparse) / costs.server_elems)
    if payload.packets:
        params = sum(l.weight.size + l.bias.size for l in model.layers if l.weighted)
        t.bp = costs.bp_factor * b * macs.sum() / costs.server_macs + 2 * params / costs.server_elems
    return t
