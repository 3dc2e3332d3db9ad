"""Checkpoint format: round trips, byte identity, validation."""

import struct

import numpy as np
import pytest

from memnet.checkpoint import (
    MAGIC,
    _all_arrays,
    load_checkpoint,
    read_arch,
    save_checkpoint,
)
from memnet.network import MemNet, MemNetConfig

CFG = MemNetConfig(m=2, r=2, f=4)


def make_net(seed=0, cfg=CFG):
    return MemNet(cfg, np.random.default_rng(seed))


def scramble(net, seed=99):
    """Give every array a distinct random value so copies are detectable."""
    rng = np.random.default_rng(seed)
    for arr in _all_arrays(net):
        arr[...] = rng.normal(size=arr.shape).astype(np.float32)


class TestRoundTrip:
    def test_fresh_net_round_trip(self, tmp_path):
        net = make_net()
        path = tmp_path / "a.memn"
        save_checkpoint(net, 7, path)
        loaded, epoch = load_checkpoint(path)
        assert epoch == 7
        assert loaded.config == CFG
        for a, b in zip(_all_arrays(net), _all_arrays(loaded)):
            np.testing.assert_array_equal(a, b)

    def test_scrambled_state_survives(self, tmp_path):
        net = make_net()
        scramble(net)
        path = tmp_path / "a.memn"
        save_checkpoint(net, 3, path)
        loaded, _ = load_checkpoint(path)
        for a, b in zip(_all_arrays(net), _all_arrays(loaded)):
            np.testing.assert_array_equal(a, b)

    def test_load_into_existing_net(self, tmp_path):
        src = make_net(seed=1)
        scramble(src, seed=5)
        path = tmp_path / "a.memn"
        save_checkpoint(src, 2, path)
        dst = make_net(seed=2)
        before = [arr.copy() for arr in _all_arrays(dst)]
        out, epoch = load_checkpoint(path, dst)
        assert out is dst and epoch == 2
        after = _all_arrays(dst)
        assert any(not np.array_equal(x, y) for x, y in zip(before, after))
        for a, b in zip(_all_arrays(src), after):
            np.testing.assert_array_equal(a, b)

    def test_load_fills_in_place(self, tmp_path):
        # layer attributes must keep their array identity after a load
        src = make_net(seed=1)
        path = tmp_path / "a.memn"
        save_checkpoint(src, 1, path)
        dst = make_net(seed=2)
        weight_ref = dst.fenet.weight.data
        running_ref = dst.blocks[0].gate_bn.running_mean
        load_checkpoint(path, dst)
        assert dst.fenet.weight.data is weight_ref
        assert dst.blocks[0].gate_bn.running_mean is running_ref

    def test_momentum_included(self, tmp_path):
        net = make_net()
        for p in net.parameters():
            p.momentum[...] = 0.5
        path = tmp_path / "a.memn"
        save_checkpoint(net, 1, path)
        loaded, _ = load_checkpoint(path)
        for p in loaded.parameters():
            np.testing.assert_array_equal(p.momentum, np.full_like(p.momentum, 0.5))

    def test_running_stats_included(self, tmp_path):
        net = make_net()
        net.blocks[1].recursion.bn2.running_var[...] = 9.0
        path = tmp_path / "a.memn"
        save_checkpoint(net, 1, path)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(
            loaded.blocks[1].recursion.bn2.running_var,
            net.blocks[1].recursion.bn2.running_var)

    def test_multi_supervised_ensemble_round_trip(self, tmp_path):
        cfg = MemNetConfig(m=3, r=1, f=4, multi_supervised=True)
        net = MemNet(cfg, np.random.default_rng(0))
        net.ensemble.data[...] = [[[[0.2]]], [[[0.3]]], [[[0.5]]]]
        path = tmp_path / "a.memn"
        save_checkpoint(net, 1, path)
        loaded, _ = load_checkpoint(path)
        assert loaded.config.multi_supervised
        np.testing.assert_array_equal(loaded.ensemble.data, net.ensemble.data)


class TestByteIdentity:
    def test_save_load_save_identical(self, tmp_path):
        net = make_net()
        scramble(net)
        p1, p2 = tmp_path / "a.memn", tmp_path / "b.memn"
        save_checkpoint(net, 4, p1)
        loaded, epoch = load_checkpoint(p1)
        save_checkpoint(loaded, epoch, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_same_state_same_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.memn", tmp_path / "b.memn"
        save_checkpoint(make_net(seed=3), 1, p1)
        save_checkpoint(make_net(seed=3), 1, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestValidation:
    def test_read_arch(self, tmp_path):
        path = tmp_path / "a.memn"
        save_checkpoint(make_net(), 9, path)
        arch, epoch = read_arch(path)
        assert arch == CFG and epoch == 9

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.memn"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "a.memn"
        path.write_bytes(MAGIC + struct.pack("<I", 999) + b"\x00" * 16)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "a.memn"
        save_checkpoint(make_net(), 1, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "a.memn"
        save_checkpoint(make_net(), 1, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)

    def test_architecture_mismatch(self, tmp_path):
        path = tmp_path / "a.memn"
        save_checkpoint(make_net(), 1, path)
        other = MemNet(MemNetConfig(m=2, r=3, f=4), np.random.default_rng(0))
        with pytest.raises(ValueError, match="does not match"):
            load_checkpoint(path, other)

    def test_record_count_checked(self, tmp_path):
        net = make_net()
        path = tmp_path / "a.memn"
        save_checkpoint(net, 1, path)
        raw = bytearray(path.read_bytes())
        # count field sits right after magic, version, arch block, epoch
        arch_len = struct.unpack_from("<I", raw, 8)[0]
        off = 8 + 4 + arch_len + 4
        struct.pack_into("<I", raw, off, 5)
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="records"):
            load_checkpoint(path)

    def test_expected_record_count(self):
        # per block: 2 convs (w+b) + 3 BN sets of 4 + gate conv (w+b); plus
        # fenet/recon (w+b each) and one momentum per trainable parameter
        net = make_net()
        state = 2 + 2 * (4 + 12 + 2) + 2
        assert len(_all_arrays(net)) == state + len(net.parameters())
