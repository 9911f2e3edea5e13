"""Binary tensor container and dataset directory layout.

Tensor file: magic "SWED", format version u32, rank u32, one u32 per dim,
payload of little-endian float32, trailing CRC32 over everything before it.
A dataset directory holds a JSON manifest plus one tensor file per sample
(the stacked region volumes, rank 4: regions x frames x axial x lateral);
phantom truths are re-rasterized from the manifest specs.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .phantoms import PhantomSpec, PhantomTruth, make_phantom
from .simulate import ArfConfig, RegionLayout

MAGIC = b"SWED"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class BadVersionError(DatasetError):
    pass


class TruncatedTensorError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class SplitLeakError(DatasetError):
    """Inclusion stiffness values intersect across splits."""


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)  # keeps rank-0 arrays rank 0
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    body = header + a.tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise TruncatedTensorError("tensor blob shorter than its fixed header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    version, rank = struct.unpack("<II", buf[4:12])
    if version != FORMAT_VERSION:
        raise BadVersionError(f"unsupported format version {version}")
    dims_end = 12 + 4 * rank
    if len(buf) < dims_end:
        raise TruncatedTensorError("tensor blob ends inside the dims header")
    dims = struct.unpack(f"<{rank}I", buf[12:dims_end])
    n = int(np.prod(dims)) if rank else 1
    payload_end = dims_end + 4 * n
    if len(buf) < payload_end + 4:
        raise TruncatedTensorError(
            f"payload for dims {dims} needs {4 * n} bytes, blob has "
            f"{len(buf) - dims_end - 4}"
        )
    (crc_stored,) = struct.unpack("<I", buf[payload_end : payload_end + 4])
    if zlib.crc32(buf[:payload_end]) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError("CRC32 mismatch")
    arr = np.frombuffer(buf[dims_end:payload_end], dtype="<f4").reshape(dims)
    return arr.copy()


def tensor_blob_size(buf: bytes, offset: int = 0) -> int:
    """Byte length of the tensor blob starting at offset (header inspect only)."""
    if len(buf) < offset + 12:
        raise TruncatedTensorError("tensor blob shorter than its fixed header")
    rank = struct.unpack("<I", buf[offset + 8 : offset + 12])[0]
    dims_end = offset + 12 + 4 * rank
    if len(buf) < dims_end:
        raise TruncatedTensorError("tensor blob ends inside the dims header")
    dims = struct.unpack(f"<{rank}I", buf[offset + 12 : dims_end])
    return 12 + 4 * rank + 4 * int(np.prod(dims) if rank else 1) + 4


def write_tensor(path: Path | str, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path: Path | str) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def _snr_to_json(snr: float):
    return "inf" if math.isinf(snr) else snr


def _snr_from_json(v) -> float:
    return math.inf if v == "inf" else float(v)


@dataclass
class Sample:
    """One phantom with its stacked per-region motion volumes."""

    spec: PhantomSpec
    volumes: np.ndarray  # (R, T, A, L) float32, raw um (post-noise)
    seed: int
    snr_db: float
    split: str  # train | val | test

    def truth(self) -> PhantomTruth:
        return make_phantom(self.spec)


@dataclass
class Dataset:
    layout: RegionLayout
    arf: ArfConfig
    samples: list[Sample] = field(default_factory=list)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]


def validate_split_disjointness(samples: list[Sample]) -> None:
    pools: dict[str, set[float]] = {}
    for s in samples:
        pools.setdefault(s.split, set()).add(s.spec.e_inclusion_kpa)
    names = sorted(pools)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            common = pools[a] & pools[b]
            if common:
                raise SplitLeakError(
                    f"inclusion stiffness values shared between {a} and {b}: "
                    f"{sorted(common)[:5]}"
                )


def write_dataset(ds: Dataset, path: Path | str) -> None:
    validate_split_disjointness(ds.samples)
    root = Path(path)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(ds.samples):
        rel = f"samples/sample_{i:05d}.swed"
        write_tensor(root / rel, s.volumes)
        entries.append(
            {
                "id": i,
                "file": rel,
                "seed": s.seed,
                "snr_db": _snr_to_json(s.snr_db),
                "split": s.split,
                "spec": s.spec.to_dict(),
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "layout": ds.layout.to_dict(),
        "arf": ds.arf.to_dict(),
        "samples": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1))


def read_dataset(path: Path | str) -> Dataset:
    root = Path(path)
    mf_path = root / MANIFEST_NAME
    if not mf_path.exists():
        raise DatasetError(f"no manifest at {mf_path}")
    manifest = json.loads(mf_path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise BadVersionError(f"unsupported manifest version {manifest.get('version')}")
    layout = RegionLayout.from_dict(manifest["layout"])
    arf = ArfConfig.from_dict(manifest["arf"])
    samples = []
    for e in manifest["samples"]:
        vols = read_tensor(root / e["file"])
        expected = (
            layout.r_regions,
            layout.frames_t,
            layout.region_axial_px,
            layout.region_lateral_px,
        )
        if vols.shape != expected:
            raise DatasetError(
                f"sample {e['id']} has shape {vols.shape}, manifest layout "
                f"implies {expected}"
            )
        samples.append(
            Sample(
                spec=PhantomSpec.from_dict(e["spec"]),
                volumes=vols,
                seed=e["seed"],
                snr_db=_snr_from_json(e["snr_db"]),
                split=e["split"],
            )
        )
    validate_split_disjointness(samples)
    return Dataset(layout=layout, arf=arf, samples=samples)


def stiffness_pools(
    rng: np.random.Generator,
    lo: float = 8.0,
    hi: float = 100.0,
    step: float = 0.5,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> dict[str, np.ndarray]:
    """Disjoint per-split inclusion stiffness values from a shuffled grid."""
    grid = np.round(np.arange(lo, hi + step / 2, step), 3)
    perm = rng.permutation(grid)
    n = len(perm)
    n_train = max(int(round(fractions[0] * n)), 1)
    n_val = max(int(round(fractions[1] * n)), 1)
    return {
        "train": perm[:n_train],
        "val": perm[n_train : n_train + n_val],
        "test": perm[n_train + n_val :],
    }
