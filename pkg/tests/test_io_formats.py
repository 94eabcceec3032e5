"""Head dump byte layout and report round-trips."""

import os
import struct

import numpy as np
import pytest

from kvtriage.io_formats import (
    FORMAT_VERSION,
    HeadDumpError,
    MAGIC,
    dump_path,
    iter_dump_paths,
    read_dump_tree,
    read_head_dump,
    read_report,
    write_dump_tree,
    write_head_dump,
    write_report,
)
from kvtriage.pipeline import HeadSnapshot
from kvtriage.synthetic import SyntheticSpec, generate_head


def random_snapshot(rng, layer=0, head=0):
    n = int(rng.integers(2, 24))
    n_window = int(rng.integers(1, n + 1))
    d_h = int(rng.integers(1, 9))
    d = int(rng.integers(1, 7))
    return HeadSnapshot(
        layer=layer,
        head=head,
        q_window=rng.normal(0, 1, (n_window, d_h)),
        keys=rng.normal(0, 1, (n, d_h)),
        values=rng.normal(0, 1, (n, d_h)),
        w_o_slice=rng.normal(0, 1, (d_h, d)),
    )


class TestRoundTrip:
    def test_bit_identical_cycles(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(100):
            snap = random_snapshot(rng, layer=i % 3, head=i)
            path = tmp_path / f"h{i}.kvhd"
            write_head_dump(snap, path)
            back = read_head_dump(path)
            assert back.layer == snap.layer and back.head == snap.head
            np.testing.assert_array_equal(back.q_window, snap.q_window)
            np.testing.assert_array_equal(back.keys, snap.keys)
            np.testing.assert_array_equal(back.values, snap.values)
            np.testing.assert_array_equal(back.w_o_slice, snap.w_o_slice)
            second = tmp_path / f"h{i}-again.kvhd"
            write_head_dump(back, second)
            assert path.read_bytes() == second.read_bytes()

    def test_minimal_file_length(self, tmp_path):
        snap = HeadSnapshot(0, 0, [[1.0]], [[2.0]], [[3.0]], [[4.0]])
        path = tmp_path / "tiny.kvhd"
        write_head_dump(snap, path)
        assert path.stat().st_size == 32 + 16

    def test_header_fields(self, tmp_path):
        snap = generate_head(SyntheticSpec(n=16, d_h=4, d=2, seed=0), head=5, layer=3,
                             window=2)
        path = tmp_path / "h.kvhd"
        write_head_dump(snap, path)
        blob = path.read_bytes()
        magic, version, n, n_window, d_h, d, layer, head = struct.unpack_from("<4s7I", blob)
        assert magic == MAGIC
        assert version == FORMAT_VERSION
        assert (n, n_window, d_h, d, layer, head) == (16, 2, 4, 2, 3, 5)


def write_valid(tmp_path):
    snap = HeadSnapshot(1, 2, [[1.0, 2.0]], [[0.5, 0.5], [1.5, -0.5]],
                        [[1.0, 0.0], [0.0, 1.0]], [[1.0], [2.0]])
    path = tmp_path / "valid.kvhd"
    write_head_dump(snap, path)
    return path


class TestRejection:
    def test_bad_magic(self, tmp_path):
        path = write_valid(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadDumpError, match="not a HeadDump"):
            read_head_dump(path)

    def test_unsupported_version_lists_supported(self, tmp_path):
        path = write_valid(tmp_path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadDumpError, match=r"unsupported format_version 99.*\(1,\)"):
            read_head_dump(path)

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = write_valid(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(HeadDumpError, match=f"expected {len(blob)} bytes.*got {len(blob) - 5}"):
            read_head_dump(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "stub.kvhd"
        path.write_bytes(b"KVHD\x01")
        with pytest.raises(HeadDumpError, match="truncated header"):
            read_head_dump(path)

    def test_header_dims_disagreeing_with_length(self, tmp_path):
        path = write_valid(tmp_path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 8, 7)  # claim n=7 without payload to match
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadDumpError, match="length mismatch"):
            read_head_dump(path)

    def test_zero_dims_rejected(self, tmp_path):
        path = write_valid(tmp_path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 16, 0)  # head_dim = 0
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadDumpError, match="invalid dims"):
            read_head_dump(path)

    def test_nonfinite_payload_rejected(self, tmp_path):
        path = write_valid(tmp_path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<f", blob, 32, float("nan"))
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadDumpError, match="non-finite"):
            read_head_dump(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(HeadDumpError):
            read_head_dump(tmp_path / "absent.kvhd")


class TestTree:
    def test_tree_layout_and_ordering(self, tmp_path):
        rng = np.random.default_rng(1)
        snaps = [random_snapshot(rng, layer=l, head=h) for l in range(2) for h in range(3)]
        paths = write_dump_tree(snaps, tmp_path)
        assert paths[0].endswith(os.path.join("layer_00", "head_000.kvhd"))
        assert iter_dump_paths(tmp_path) == sorted(paths)
        back = read_dump_tree(tmp_path)
        assert [(s.layer, s.head) for s in back] == [(l, h) for l in range(2) for h in range(3)]

    def test_dump_path_shape(self):
        assert dump_path("root", 3, 12).endswith(os.path.join("layer_03", "head_012.kvhd"))

    def test_empty_tree_rejected(self, tmp_path):
        with pytest.raises(HeadDumpError, match="no .kvhd files"):
            read_dump_tree(tmp_path)


class TestReports:
    def test_round_trip_with_config(self, tmp_path):
        path = tmp_path / "r.csv"
        rows = [(0, 1, 0.5, True), (1, 2, 1.25e-7, False)]
        write_report(path, ("layer", "head", "value", "flag"), rows,
                     config={"alpha": 0.5, "selector": "perturbation_constrained"})
        config, columns, back = read_report(path)
        assert config["alpha"] == 0.5
        assert config["selector"] == "perturbation_constrained"
        assert columns == ["layer", "head", "value", "flag"]
        assert back[0] == [0, 1, 0.5, 1]
        assert back[1][2] == pytest.approx(1.25e-7)

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError, match="row width"):
            write_report(tmp_path / "bad.csv", ("a", "b"), [(1,)], config={})
