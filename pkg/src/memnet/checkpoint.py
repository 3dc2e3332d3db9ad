"""Binary checkpoints.

Layout (all integers little-endian u32):

  magic   b"MEMN"
  version (currently 1)
  arch    length-prefixed UTF-8 canonical architecture block
  epoch   number of completed epochs
  count   number of records that follow
  records ndim, dims..., then <f4 payload

Records appear in a frozen canonical order: network state first (conv
weights and biases, BN gamma/beta and running stats, ensemble weights),
then one momentum buffer per trainable parameter.  Order is structural,
so no names are stored; saving, loading, and saving again is
byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import emit_arch, parse_arch
from .network import MemNet, MemNetConfig

MAGIC = b"MEMN"
VERSION = 1


def _bn_state(bn) -> list[np.ndarray]:
    return [bn.gamma.data, bn.beta.data, bn.running_mean, bn.running_var]


def _state_arrays(net: MemNet) -> list[np.ndarray]:
    """Live views of every state array, in the serialization order."""
    arrs = [net.fenet.weight.data, net.fenet.bias.data]
    for block in net.blocks:
        rec = block.recursion
        arrs += [rec.conv1.weight.data, rec.conv1.bias.data,
                 rec.conv2.weight.data, rec.conv2.bias.data]
        arrs += _bn_state(rec.bn1) + _bn_state(rec.bn2)
        arrs += [block.gate_conv.weight.data, block.gate_conv.bias.data]
        arrs += _bn_state(block.gate_bn)
    arrs += [net.reconnet.weight.data, net.reconnet.bias.data]
    if net.ensemble is not None:
        arrs.append(net.ensemble.data)
    return arrs


def _all_arrays(net: MemNet) -> list[np.ndarray]:
    return _state_arrays(net) + [p.momentum for p in net.parameters()]


def _write_record(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("checkpoint truncated")
    return buf


def _read_record(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    if ndim > 8:
        raise ValueError(f"implausible record rank {ndim}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def save_checkpoint(net: MemNet, epoch: int, path) -> None:
    arch_text = emit_arch(net.config).encode("utf-8")
    arrays = _all_arrays(net)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(arch_text)))
        fh.write(arch_text)
        fh.write(struct.pack("<I", epoch))
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            _write_record(fh, arr)


def read_arch(path) -> tuple[MemNetConfig, int]:
    """Peek at a checkpoint's architecture and epoch without loading weights."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (arch_len,) = struct.unpack("<I", _read_exact(fh, 4))
        arch = parse_arch(_read_exact(fh, arch_len).decode("utf-8"))
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4))
    return arch, epoch


def load_checkpoint(path, net: MemNet | None = None) -> tuple[MemNet, int]:
    """Restore a network (and its optimizer momentum) from ``path``.

    When ``net`` is given its architecture must match the stored one and
    the arrays are filled in place; otherwise a fresh network is built.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (arch_len,) = struct.unpack("<I", _read_exact(fh, 4))
        arch = parse_arch(_read_exact(fh, arch_len).decode("utf-8"))
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))

        if net is None:
            # weights are overwritten below, so the init seed is irrelevant
            net = MemNet(arch, np.random.default_rng(0))
        elif net.config != arch:
            raise ValueError(
                f"{path}: stored architecture {arch} does not match requested {net.config}")

        targets = _all_arrays(net)
        if count != len(targets):
            raise ValueError(
                f"{path}: expected {len(targets)} records, file has {count}")
        for arr in targets:
            stored = _read_record(fh)
            if stored.shape != arr.shape:
                raise ValueError(
                    f"{path}: record shape {stored.shape} does not match {arr.shape}")
            arr[...] = stored
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last record")
    return net, epoch
