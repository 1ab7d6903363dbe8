"""Node embedding tables: TSV/binary exchange and cosine similarity."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

BIN_MAGIC = b"PEMB"


class Provenance(str, enum.Enum):
    TOY_MODEL = "toy_model"
    EXTERNAL = "external"


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[int, np.ndarray]
    provenance: Provenance = Provenance.EXTERNAL

    def __post_init__(self):
        for node, vec in self.vectors.items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (self.dim,):
                raise EmbeddingFormatError(f"node {node}: expected {self.dim} values, got {vec.size}")
            if not np.isfinite(vec).all():
                raise EmbeddingFormatError(f"node {node}: non-finite entry")
            self.vectors[node] = vec

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, provenance: Provenance = Provenance.EXTERNAL) -> "EmbeddingTable":
        matrix = np.asarray(matrix)
        return cls(matrix.shape[1], {i: row for i, row in enumerate(matrix)}, provenance)

    def __getitem__(self, node: int) -> np.ndarray:
        return self.vectors[node]

    def __contains__(self, node: int) -> bool:
        return node in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def matrix(self, nodes) -> np.ndarray:
        return np.stack([self.vectors[v] for v in nodes]).astype(np.float64)


def export_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write ``embeddings.tsv``; floats use ``repr`` of float32 so they round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node in sorted(table.vectors):
            vals = ",".join(repr(float(x)) for x in table.vectors[node].tolist())
            fh.write(f"{node}\t{vals}\n")


def import_embeddings(path: str | Path, provenance: Provenance = Provenance.EXTERNAL) -> EmbeddingTable:
    vectors: dict[int, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                node_s, vals = line.split("\t")
                node = int(node_s)
                vec = np.array([float(x) for x in vals.split(",")], dtype=np.float32)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}: malformed line {lineno}: {exc}") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise EmbeddingFormatError(f"{path}: node {node} has {vec.size} values, expected {dim}")
            if not np.isfinite(vec).all():
                raise EmbeddingFormatError(f"{path}: node {node} has a non-finite entry")
            vectors[node] = vec
    if dim is None:
        raise EmbeddingFormatError(f"{path}: no embeddings")
    return EmbeddingTable(dim, vectors, provenance)


def export_embeddings_bin(table: EmbeddingTable, path: str | Path) -> None:
    nodes = sorted(table.vectors)
    if nodes != list(range(len(nodes))):
        raise EmbeddingFormatError("binary export needs dense node ids 0..n-1")
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC + struct.pack("<2I", len(nodes), table.dim))
        for node in nodes:
            fh.write(table.vectors[node].astype("<f4").tobytes())


def import_embeddings_bin(path: str | Path, provenance: Provenance = Provenance.EXTERNAL) -> EmbeddingTable:
    data = Path(path).read_bytes()
    if data[:4] != BIN_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic")
    n, d = struct.unpack_from("<2I", data, 4)
    if len(data) != 12 + 4 * n * d:
        raise EmbeddingFormatError(f"{path}: expected {n}x{d} floats")
    mat = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, d)
    return EmbeddingTable(d, {i: mat[i].copy() for i in range(n)}, provenance)


def cosine_similarity(x, y) -> float:
    """Cosine of the angle between x and y; 0 when either vector is zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx2 = math.fsum(x * x)
    ny2 = math.fsum(y * y)
    if nx2 == 0.0 or ny2 == 0.0:
        return 0.0
    # sqrt of the rounded product keeps psi(x, x) == 1 exact
    return min(1.0, max(-1.0, math.fsum(x * y) / math.sqrt(nx2 * ny2)))


def table_from_mapping(vectors: Mapping[int, np.ndarray], provenance=Provenance.EXTERNAL) -> EmbeddingTable:
    first = next(iter(vectors.values()))
    return EmbeddingTable(len(first), dict(vectors), provenance)
