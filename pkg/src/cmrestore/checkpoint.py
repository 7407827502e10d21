"""Binary checkpoint format.

Layout (little-endian)::

    b"CSKR" | u32 version (=1) | 32-byte config hash
    | u32 n | n bytes of UTF-8 JSON (topology block)
    | float64 arrays, in the order listed by the topology block
    | u64 byte count of everything before this field

The topology block carries network shapes, the restore-level bridge, the
scorer state, the step counter and the training mode; the arrays carry
the prior and denoiser parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .nnet import DenseNet, Denoiser
from .prior import PriorBridge, PriorNet
from .scorer import ScorerState

MAGIC = b"CSKR"
VERSION = 1


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint."""


class CheckpointMismatch(CheckpointError):
    """Checkpoint does not belong to the supplied config, or lacks what a mode needs."""


@dataclass
class Checkpoint:
    config_hash: bytes
    mode: str
    step: int = 0
    prior: PriorNet | None = None
    denoiser: Denoiser | None = None
    bridge: PriorBridge | None = None
    scorer: ScorerState | None = None

    def supports(self, mode: str) -> bool:
        if mode == "v1":
            return self.denoiser is not None
        if mode == "prior":
            return self.prior is not None
        if mode == "v2":
            return self.denoiser is not None and self.prior is not None and self.bridge is not None
        if mode == "v3":
            return self.supports("v2") and self.scorer is not None
        if mode == "direct":
            return self.denoiser is not None and self.prior is not None
        return False


def _net_block(net: DenseNet) -> dict:
    return {"n_in": net.n_in, "n_out": net.n_out, "width": net.width, "depth": net.depth,
            "squash": net.squash}


def _arrays(prefix: str, net: DenseNet):
    for name, arr in net.params.items():
        yield f"{prefix}.{name}", arr


def to_bytes(ckpt: Checkpoint) -> bytes:
    if len(ckpt.config_hash) != 32:
        raise CheckpointError("config hash must be 32 bytes")
    topo: dict = {"mode": ckpt.mode, "step": int(ckpt.step)}
    arrays = []
    if ckpt.prior is not None:
        topo["prior"] = {"x_shape": list(ckpt.prior.x_shape), "cond_dim": ckpt.prior.cond_dim,
                         "net": _net_block(ckpt.prior.net)}
        arrays += list(_arrays("prior", ckpt.prior.net))
    if ckpt.denoiser is not None:
        d = ckpt.denoiser
        topo["denoiser"] = {"x_shape": list(d.x_shape), "cond_dim": d.cond_dim,
                            "sigma_data": d.sigma_data, "time_dim": d.time_dim,
                            "net": _net_block(d.net)}
        arrays += list(_arrays("denoiser", d.net))
    if ckpt.bridge is not None:
        topo["bridge"] = {"k": ckpt.bridge.k, "ratio": ckpt.bridge.ratio}
    if ckpt.scorer is not None:
        s = ckpt.scorer
        topo["scorer"] = {"op": s.op, "candidates": list(s.candidates), "cadence": s.cadence,
                          "scores": [[int(n), float(v)] for n, v in s.scores]}
    topo["arrays"] = [[name, list(arr.shape)] for name, arr in arrays]
    block = json.dumps(topo, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), bytes(ckpt.config_hash),
             struct.pack("<I", len(block)), block]
    parts += [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays]
    body = b"".join(parts)
    return body + struct.pack("<Q", len(body))


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 52 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (guard,) = struct.unpack_from("<Q", buf, len(buf) - 8)
    if guard != len(buf) - 8:
        raise CheckpointError("length guard mismatch (truncated or corrupted checkpoint)")
    config_hash = buf[8:40]
    (n,) = struct.unpack_from("<I", buf, 40)
    topo = json.loads(buf[44:44 + n].decode("utf-8"))
    offset = 44 + n
    arrays = {}
    for name, shape in topo["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(buf) - 8:
            raise CheckpointError("array data shorter than the topology block declares")
        arrays[name] = np.frombuffer(buf[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(buf) - 8:
        raise CheckpointError("trailing bytes after the declared arrays")

    def net(prefix: str, block: dict) -> DenseNet:
        params = {key.split(".", 1)[1]: arr for key, arr in arrays.items() if key.startswith(prefix + ".")}
        return DenseNet(block["n_in"], block["n_out"], block["width"], block["depth"],
                        block["squash"], params)

    ckpt = Checkpoint(config_hash, topo["mode"], topo["step"])
    if "prior" in topo:
        p = topo["prior"]
        pnet = net("prior", p["net"])
        ckpt.prior = PriorNet(tuple(p["x_shape"]), p["cond_dim"], pnet.width, pnet.depth, pnet)
    if "denoiser" in topo:
        d = topo["denoiser"]
        dnet = net("denoiser", d["net"])
        ckpt.denoiser = Denoiser(tuple(d["x_shape"]), d["cond_dim"], d["sigma_data"], d["time_dim"],
                                 dnet.width, dnet.depth, dnet)
    if "bridge" in topo:
        ckpt.bridge = PriorBridge(topo["bridge"]["k"], topo["bridge"]["ratio"])
    if "scorer" in topo:
        s = topo["scorer"]
        ckpt.scorer = ScorerState(s["op"], s["candidates"], [(n, v) for n, v in s["scores"]],
                                  s["cadence"])
    return ckpt


def save(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path, expected_hash: bytes | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        ckpt = from_bytes(fh.read())
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise CheckpointMismatch(f"{path} was written with a different config")
    return ckpt
