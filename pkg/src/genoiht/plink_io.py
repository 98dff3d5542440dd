"""Bit-exact reader and writer for PLINK binary genotype triples.

A BED file is a 3-byte header (0x6C, 0x1B, then a storage-mode byte that
must be 0x01 for variant-major order) followed by one block of
``ceil(n_samples / 4)`` bytes per variant. Within a byte, samples occupy
bit pairs from the least-significant end upward, coded

    0b00  homozygous A1 (dosage 0)
    0b01  missing
    0b10  heterozygous (dosage 1)
    0b11  homozygous A2 (dosage 2)

so the stored value counts copies of the A2 allele. BIM and FAM sidecars
are whitespace-delimited text with six columns per line; FAM column six is
the phenotype, with -9 or NA meaning missing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geno_matrix import PackedGenotypeMatrix

BED_MAGIC = bytes([0x6C, 0x1B])
BED_MODE_VARIANT_MAJOR = 0x01


class PlinkFormatError(ValueError):
    """Raised for malformed BED/BIM/FAM content."""


@dataclass(frozen=True)
class BedHeader:
    """Parsed 3-byte BED header. Only variant-major files are accepted."""

    mode: int

    @classmethod
    def parse(cls, raw: bytes) -> "BedHeader":
        if len(raw) < 3:
            raise PlinkFormatError("BED file shorter than its 3-byte header")
        if raw[:2] != BED_MAGIC:
            raise PlinkFormatError(
                f"bad BED magic bytes {raw[0]:#04x} {raw[1]:#04x}; expected 0x6c 0x1b")
        mode = raw[2]
        if mode == 0x00:
            raise PlinkFormatError(
                "sample-major BED files (mode 0x00) are not supported; "
                "re-export in variant-major order")
        if mode != BED_MODE_VARIANT_MAJOR:
            raise PlinkFormatError(f"unknown BED storage mode byte {mode:#04x}")
        return cls(mode=mode)


@dataclass(frozen=True)
class VariantRecord:
    """One BIM line: marker identifier, chromosome, position, allele pair."""

    identifier: str
    chromosome: str
    position: int
    alleles: tuple[str, str]


@dataclass(frozen=True)
class SampleRecord:
    """One FAM line: family/individual identifiers and optional phenotype."""

    family_id: str
    individual_id: str
    phenotype: float | None


def bed_record_bytes(n_samples: int) -> int:
    """Bytes per variant block."""
    return (n_samples + 3) // 4


def read_bed(path, n_samples: int, n_variants: int) -> PackedGenotypeMatrix:
    """Read a variant-major BED file into a packed genotype matrix.

    ``n_samples`` and ``n_variants`` come from the FAM and BIM sidecars;
    a byte-length mismatch signals an inconsistent file triple.
    """
    if n_samples < 1:
        raise PlinkFormatError("BED files need at least one sample")
    raw = Path(path).read_bytes()
    BedHeader.parse(raw)
    nb = bed_record_bytes(n_samples)
    expected = n_variants * nb
    found = len(raw) - 3
    if found != expected:
        raise PlinkFormatError(
            f"{path}: expected {expected} data bytes for {n_variants} variants x "
            f"{n_samples} samples, found {found}; BED disagrees with BIM/FAM counts")
    data = np.frombuffer(raw, dtype=np.uint8, offset=3).reshape(n_variants, nb).copy()
    return PackedGenotypeMatrix.from_bed_buffer(data, n_samples)


def write_bed(matrix: PackedGenotypeMatrix, path) -> None:
    """Write the packed matrix as a variant-major BED file.

    Each variant block is padded to a byte boundary with zero bits.
    """
    if matrix.n < 1:
        raise ValueError("cannot write a genotype matrix with no samples")
    with open(path, "wb") as fh:
        fh.write(BED_MAGIC + bytes([BED_MODE_VARIANT_MAJOR]))
        fh.write(np.ascontiguousarray(matrix.data).tobytes())


def read_bim(path) -> list[VariantRecord]:
    """Parse a BIM sidecar; malformed lines report their line number."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise PlinkFormatError(
                    f"{path}:{lineno}: expected 6 whitespace-separated fields, "
                    f"found {len(fields)}")
            identifier = fields[1]
            if not identifier:
                raise PlinkFormatError(f"{path}:{lineno}: empty variant identifier")
            try:
                position = int(fields[3])
            except ValueError as exc:
                raise PlinkFormatError(
                    f"{path}:{lineno}: bad base-pair position {fields[3]!r}") from exc
            if position < 0:
                raise PlinkFormatError(f"{path}:{lineno}: negative position {position}")
            records.append(VariantRecord(identifier=identifier, chromosome=fields[0],
                                         position=position, alleles=(fields[4], fields[5])))
    return records


def _parse_phenotype(token: str) -> float | None:
    if token.upper() in ("-9", "NA"):
        return None
    return float(token)


def read_fam(path) -> list[SampleRecord]:
    """Parse a FAM sidecar; (family, individual) pairs must be unique."""
    records = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise PlinkFormatError(
                    f"{path}:{lineno}: expected 6 whitespace-separated fields, "
                    f"found {len(fields)}")
            key = (fields[0], fields[1])
            if key in seen:
                raise PlinkFormatError(
                    f"{path}:{lineno}: duplicate sample {fields[0]} {fields[1]}")
            seen.add(key)
            try:
                phenotype = _parse_phenotype(fields[5])
            except ValueError as exc:
                raise PlinkFormatError(
                    f"{path}:{lineno}: bad phenotype value {fields[5]!r}") from exc
            records.append(SampleRecord(family_id=fields[0], individual_id=fields[1],
                                        phenotype=phenotype))
    return records


def read_plink_triple(bed_path, bim_path, fam_path):
    """Read a BED/BIM/FAM triple, checking that the three files agree.

    Returns ``(matrix, variants, samples)``.
    """
    variants = read_bim(bim_path)
    samples = read_fam(fam_path)
    matrix = read_bed(bed_path, len(samples), len(variants))
    return matrix, variants, samples
