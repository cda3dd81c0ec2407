"""Load labeled corpora from disk.

Sample files come in two flavors: ``.bytes`` hex dumps (one address token
followed by two-digit byte tokens per line, ``??`` marking unreadable bytes)
and raw binaries. A comma-separated labels table with header ``Id,Class``
(Class in 1..9) joins samples to the nine malware families.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import EmptySampleError, ParseError, ReconciliationError, SchemaError

log = logging.getLogger(__name__)

#: Family names in class-index order; labels table Class value = index + 1.
FAMILY_NAMES = (
    "Ramnit",
    "Lollipop",
    "Kelihos_ver3",
    "Vundo",
    "Simda",
    "Tracur",
    "Kelihos_ver1",
    "Obfuscator.ACY",
    "Gatak",
)
NUM_CLASSES = len(FAMILY_NAMES)

# ADDRESS (8+ hex digits) then whitespace-separated byte tokens, each two hex
# digits or the literal "??".
_HEX_LINE = re.compile(r"([0-9A-Fa-f]{8,})((?:[ \t]+(?:[0-9A-Fa-f]{2}|\?\?))*)[ \t]*")

SAMPLE_EXTENSIONS = (".bytes", ".bin")


@dataclass
class ByteSequence:
    """Raw byte content of one sample plus provenance."""

    sample_id: str
    data: np.ndarray  # uint8, 1-D
    original_length: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim != 1:
            raise ValueError("byte data must be one-dimensional")
        if self.original_length != self.data.size:
            raise ValueError("original_length must equal the byte count")
        if self.original_length < 1:
            raise EmptySampleError(f"sample {self.sample_id!r} has no bytes")


@dataclass
class LabeledSample:
    """A sample (raw or resampled) together with its class index in 0..8."""

    sequence: object
    label: int


@dataclass
class CorpusStats:
    per_class_counts: dict = field(default_factory=dict)
    size_histogram: dict = field(default_factory=dict)  # KB bucket -> count

    @property
    def total(self) -> int:
        return sum(self.per_class_counts.values())


def parse_hex_dump(
    text: Union[str, Iterable[str]],
    sample_id: str = "",
    unknown_byte: str = "zero",
) -> ByteSequence:
    """Decode a hex-dump character stream into a ByteSequence.

    Address tokens are stripped; byte tokens are taken in file order. ``??``
    tokens decode to 0x00 by default (``unknown_byte="drop"`` removes them
    instead). Malformed lines raise ParseError naming the line number; an
    input with zero decoded bytes raises EmptySampleError.
    """
    if unknown_byte not in ("zero", "drop"):
        raise ValueError(f"unknown_byte must be 'zero' or 'drop', got {unknown_byte!r}")
    lines = text.splitlines() if isinstance(text, str) else text
    chunks = []
    total = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        m = _HEX_LINE.fullmatch(line)
        if m is None:
            raise ParseError(f"line {lineno}: malformed hex-dump line {line[:60]!r}")
        tokens = m.group(2)
        if unknown_byte == "drop":
            tokens = tokens.replace("??", "")
        else:
            tokens = tokens.replace("??", "00")
        decoded = bytes.fromhex(tokens)
        if decoded:
            chunks.append(decoded)
            total += len(decoded)
    if total == 0:
        raise EmptySampleError(f"sample {sample_id!r}: hex dump decoded to zero bytes")
    buf = b"".join(chunks)
    return ByteSequence(sample_id, np.frombuffer(buf, dtype=np.uint8), total)


def format_hex_dump(seq: ByteSequence, bytes_per_line: int = 16, base_address: int = 0) -> str:
    """Render a ByteSequence in the hex-dump file format (round-trips parse_hex_dump)."""
    if bytes_per_line < 1:
        raise ValueError("bytes_per_line must be positive")
    out = []
    data = seq.data
    for off in range(0, data.size, bytes_per_line):
        row = data[off : off + bytes_per_line]
        out.append(f"{base_address + off:08X} " + " ".join(f"{b:02X}" for b in row))
    return "\n".join(out) + "\n"


def read_raw_binary(path) -> ByteSequence:
    """Read a file's exact content as a ByteSequence (no interpretation)."""
    path = Path(path)
    data = np.fromfile(path, dtype=np.uint8)
    if data.size == 0:
        raise EmptySampleError(f"file {path} is empty")
    return ByteSequence(path.stem, data, data.size)


def read_sample_file(path) -> ByteSequence:
    """Read one sample file, hex-decoding ``.bytes`` and raw-reading anything else."""
    path = Path(path)
    if path.suffix == ".bytes":
        return parse_hex_dump(path.read_text(), sample_id=path.stem)
    return read_raw_binary(path)


def read_labels(labels_path) -> dict:
    """Parse the Id,Class table into {sample_id: class index 0..8}."""
    labels_path = Path(labels_path)
    with labels_path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{labels_path}: empty labels table (missing header)")
        if [h.strip().strip('"') for h in header] != ["Id", "Class"]:
            raise SchemaError(f"{labels_path}: expected header 'Id,Class', got {header!r}")
        labels = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise SchemaError(f"{labels_path} row {rowno}: expected 2 columns, got {len(row)}")
            sample_id = row[0].strip().strip('"')
            try:
                cls = int(row[1])
            except ValueError:
                raise SchemaError(f"{labels_path} row {rowno}: non-integer class {row[1]!r}")
            if not 1 <= cls <= NUM_CLASSES:
                raise SchemaError(f"{labels_path} row {rowno}: class {cls} outside 1..{NUM_CLASSES}")
            if sample_id in labels:
                raise SchemaError(f"{labels_path} row {rowno}: duplicate id {sample_id!r}")
            labels[sample_id] = cls - 1
    return labels


def find_sample_files(data_dir) -> dict:
    """Map sample_id -> path for every sample file under data_dir (non-recursive).

    When both a ``.bytes`` dump and a raw binary exist for one id, the hex
    dump wins.
    """
    data_dir = Path(data_dir)
    found = {}
    for ext in reversed(SAMPLE_EXTENSIONS):  # .bytes processed last, overrides .bin
        for path in sorted(data_dir.glob(f"*{ext}")):
            found[path.stem] = path
    return found


def load_corpus(data_dir, labels_path) -> list:
    """Load every labeled sample, sorted by sample_id.

    Raises ReconciliationError when a labeled id has no file or a sample file
    has no label, and SchemaError for bad label rows.
    """
    labels = read_labels(labels_path)
    files = find_sample_files(data_dir)
    missing = set(labels) - set(files)
    unlabeled = set(files) - set(labels)
    if missing or unlabeled:
        raise ReconciliationError(missing, unlabeled)
    samples = []
    for sample_id in sorted(labels):
        seq = read_sample_file(files[sample_id])
        samples.append(LabeledSample(seq, labels[sample_id]))
    return samples


def corpus_stats(samples) -> CorpusStats:
    """Per-class counts and a KB-bucketed histogram of original sizes."""
    stats = CorpusStats()
    for s in samples:
        stats.per_class_counts[s.label] = stats.per_class_counts.get(s.label, 0) + 1
        bucket = s.sequence.original_length // 1024
        stats.size_histogram[bucket] = stats.size_histogram.get(bucket, 0) + 1
    return stats
