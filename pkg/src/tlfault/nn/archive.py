"""Portable weight archive.

Layout, all little endian::

    b"TLXD"  u16 version  u32 entry count
    per entry:  u16 name length, name (utf-8, "<layer>.<param>"),
                u8 rank, u32 dims[rank], u8 frozen, f64 values[prod(dims)]
    u32 CRC-32 of every preceding byte

The trailing checksum makes any flipped or missing byte detectable.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ArchiveError
from .network import CLASSIFY, LOCATE, NetSpec, Network

MAGIC = b"TLXD"
VERSION = 1


@dataclass
class ArchiveEntry:
    name: str
    values: np.ndarray
    frozen: bool = False

    @property
    def layer(self) -> str:
        return self.name.split(".", 1)[0]


@dataclass
class WeightArchive:
    entries: list[ArchiveEntry] = field(default_factory=list)
    version: int = VERSION

    @classmethod
    def from_network(cls, net: Network) -> "WeightArchive":
        entries = []
        for layer in net.layers:
            for key, arr in layer.params.items():
                entries.append(ArchiveEntry(f"{layer.name}.{key}", np.array(arr, dtype=np.float64), layer.frozen))
        return cls(entries)

    def layer_names(self) -> list[str]:
        seen = []
        for e in self.entries:
            if e.layer not in seen:
                seen.append(e.layer)
        return seen

    def get(self, name: str) -> ArchiveEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    # ------------------------------------------------------------ bytes

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack("<4sHI", MAGIC, self.version, len(self.entries)))
        for e in self.entries:
            name = e.name.encode("utf-8")
            arr = np.ascontiguousarray(e.values, dtype="<f8")
            out += struct.pack("<H", len(name)) + name
            out += struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
            out += struct.pack("<B", int(bool(e.frozen)))
            out += arr.tobytes()
        out += struct.pack("<I", zlib.crc32(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightArchive":
        if len(data) < 14:
            raise ArchiveError("archive truncated")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        magic, version, count = struct.unpack_from("<4sHI", body, 0)
        if magic != MAGIC:
            raise ArchiveError("not a weight archive (bad magic)")
        if version != VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        if zlib.crc32(body) != crc:
            raise ArchiveError("archive checksum mismatch (corrupt or truncated)")
        off = 10
        entries = []
        try:
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", body, off)
                off += 2
                name = body[off : off + nlen].decode("utf-8")
                off += nlen
                (rank,) = struct.unpack_from("<B", body, off)
                off += 1
                dims = struct.unpack_from(f"<{rank}I", body, off)
                off += 4 * rank
                (frozen,) = struct.unpack_from("<B", body, off)
                off += 1
                size = int(np.prod(dims)) if rank else 1
                if off + 8 * size > len(body):
                    raise ArchiveError(f"entry {name!r} truncated")
                values = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
                off += 8 * size
                entries.append(ArchiveEntry(name, values, bool(frozen)))
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise ArchiveError(f"malformed archive: {exc}") from None
        if off != len(body):
            raise ArchiveError("trailing bytes after last entry")
        return cls(entries, version)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "WeightArchive":
        return cls.from_bytes(Path(path).read_bytes())

    # -------------------------------------------------------- transfer

    def mismatched_layers(self, net: Network, layers=None) -> list[str]:
        bad = []
        for layer in net.layers:
            if not layer.has_params or (layers is not None and layer.name not in layers):
                continue
            for key, arr in layer.params.items():
                try:
                    e = self.get(f"{layer.name}.{key}")
                except KeyError:
                    bad.append(layer.name)
                    break
                if e.values.shape != arr.shape:
                    bad.append(layer.name)
                    break
        return bad

    def apply(self, net: Network, layers=None, frozen: bool | None = None) -> list[str]:
        """Copy parameters into ``net`` (all layers, or just ``layers``).

        Nothing is written unless every requested layer matches. ``frozen``
        overrides the stored flags; ``None`` keeps them. Returns the loaded
        layer names.
        """
        bad = self.mismatched_layers(net, layers)
        if bad:
            raise ArchiveError(f"shape mismatch in layer(s): {', '.join(bad)}", )
        loaded = []
        for layer in net.layers:
            if not layer.has_params or (layers is not None and layer.name not in layers):
                continue
            for key in layer.params:
                e = self.get(f"{layer.name}.{key}")
                layer.params[key][...] = e.values
                layer.frozen = e.frozen if frozen is None else frozen
            loaded.append(layer.name)
        return loaded


def spec_from_archive(archive: WeightArchive) -> NetSpec:
    try:
        c1 = archive.get("C1.W").values.shape
        c3 = archive.get("C3.W").values.shape
        f5 = archive.get("F5.W").values.shape
        f6 = archive.get("F6.W").values.shape
        head = archive.get("head.W").values.shape
    except KeyError as exc:
        raise ArchiveError(f"archive lacks layer {exc}") from None
    task = LOCATE if head[1] == 1 else CLASSIFY
    return NetSpec(
        task=task,
        n_classes=head[1] if task == CLASSIFY else 11,
        c1=c1[0], c3=c3[0], kernel=c1[2], f5=f5[1], f6=f6[1], in_shape=(c1[1], 7, 7),
    )


def save_weights(net: Network, path: str | Path) -> Path:
    return WeightArchive.from_network(net).save(path)


def load_weights(path: str | Path, spec: NetSpec | None = None) -> Network:
    archive = WeightArchive.load(path)
    spec = spec or spec_from_archive(archive)
    net = spec.build(seed=None)
    archive.apply(net)
    return net
