"""Minimal DICOM reader for uncompressed single-frame CT slices.

Supports the two uncompressed little-endian transfer syntaxes (implicit
and explicit VR) that cover the standard CT Grand Challenge exports.
Compressed syntaxes are rejected with a clear error. Only the handful of
tags needed for HU conversion and slice ordering are decoded; everything
else is skipped structurally (including nested sequences).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"DICM"

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

# VRs that use the 12-byte (reserved + 32-bit length) header in explicit mode.
_LONG_VRS = {b"OB", b"OW", b"OF", b"OD", b"OL", b"SQ", b"UC", b"UR", b"UT", b"UN"}

_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)

TAG_PATIENT_ID = (0x0010, 0x0020)
TAG_INSTANCE_NUMBER = (0x0020, 0x0013)
TAG_IMAGE_POSITION = (0x0020, 0x0032)
TAG_SAMPLES_PER_PIXEL = (0x0028, 0x0002)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLS = (0x0028, 0x0011)
TAG_PIXEL_SPACING = (0x0028, 0x0030)
TAG_BITS_ALLOCATED = (0x0028, 0x0100)
TAG_PIXEL_REPRESENTATION = (0x0028, 0x0103)
TAG_RESCALE_INTERCEPT = (0x0028, 0x1052)
TAG_RESCALE_SLOPE = (0x0028, 0x1053)
TAG_PIXEL_DATA = (0x7FE0, 0x0010)

# Tags we decode; used to infer value handling in implicit-VR files.
_WANTED = {
    TAG_PATIENT_ID,
    TAG_INSTANCE_NUMBER,
    TAG_IMAGE_POSITION,
    TAG_SAMPLES_PER_PIXEL,
    TAG_ROWS,
    TAG_COLS,
    TAG_PIXEL_SPACING,
    TAG_BITS_ALLOCATED,
    TAG_PIXEL_REPRESENTATION,
    TAG_RESCALE_INTERCEPT,
    TAG_RESCALE_SLOPE,
    TAG_PIXEL_DATA,
}
_US_TAGS = {
    TAG_SAMPLES_PER_PIXEL,
    TAG_ROWS,
    TAG_COLS,
    TAG_BITS_ALLOCATED,
    TAG_PIXEL_REPRESENTATION,
}


@dataclass
class SliceRecord:
    """Decoded fields of one CT DICOM file."""

    path: Path
    pixels: np.ndarray  # HU, float32
    patient_id: str
    instance_number: int | None
    position_z: float | None
    pixel_spacing: tuple[float, float]
    raw: dict = field(repr=False, default_factory=dict)


class _Cursor:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("truncated DICOM element")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _read_header(cur: _Cursor, explicit: bool) -> tuple[tuple[int, int], bytes | None, int]:
    tag = (cur.u16(), cur.u16())
    if tag[0] == 0xFFFE:
        # delimiter items never carry a VR
        return tag, None, cur.u32()
    if explicit:
        vr = cur.read(2)
        if vr in _LONG_VRS:
            cur.read(2)
            length = cur.u32()
        else:
            length = cur.u16()
        return tag, vr, length
    return tag, None, cur.u32()


def _skip_undefined_sequence(cur: _Cursor, explicit: bool) -> None:
    # Walk items until the sequence delimitation item.
    while True:
        tag, _, length = _read_header(cur, explicit)
        if tag == _SEQ_DELIM:
            return
        if tag != _ITEM:
            raise DataError(f"malformed sequence: unexpected tag {tag}")
        if length == 0xFFFFFFFF:
            _skip_undefined_item(cur, explicit)
        else:
            cur.read(length)


def _skip_undefined_item(cur: _Cursor, explicit: bool) -> None:
    while True:
        tag, vr, length = _read_header(cur, explicit)
        if tag == _ITEM_DELIM:
            return
        if length == 0xFFFFFFFF:
            _skip_undefined_sequence(cur, explicit)
        else:
            cur.read(length)


def _decode_text(value: bytes) -> str:
    return value.decode("ascii", errors="replace").strip().strip("\x00").strip()


def _parse_dataset(cur: _Cursor, explicit: bool) -> dict:
    elements: dict[tuple[int, int], bytes] = {}
    while not cur.exhausted:
        tag, vr, length = _read_header(cur, explicit)
        if vr == b"SQ" or length == 0xFFFFFFFF:
            if tag == TAG_PIXEL_DATA:
                raise DataError("encapsulated (compressed) pixel data is not supported")
            if length == 0xFFFFFFFF:
                _skip_undefined_sequence(cur, explicit)
            else:
                cur.read(length)
            continue
        value = cur.read(length)
        if tag in _WANTED:
            elements[tag] = value
        if tag == TAG_PIXEL_DATA:
            break
    return elements


def _read_meta(cur: _Cursor) -> str:
    """Parse the explicit-VR file meta group; return the transfer syntax UID."""
    transfer_syntax = EXPLICIT_VR_LE
    meta_end = None
    while not cur.exhausted:
        if meta_end is not None and cur.pos >= meta_end:
            break
        start = cur.pos
        tag, vr, length = _read_header(cur, explicit=True)
        if tag[0] != 0x0002:
            cur.pos = start
            break
        value = cur.read(length)
        if tag == (0x0002, 0x0000):
            meta_end = cur.pos + struct.unpack("<I", value)[0]
        elif tag == (0x0002, 0x0010):
            transfer_syntax = _decode_text(value)
    return transfer_syntax


def read_ct_slice(path: str | Path) -> SliceRecord:
    """Read one uncompressed CT DICOM file and convert pixels to HU."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) > 132 and data[128:132] == MAGIC:
        cur = _Cursor(data, 132)
        transfer_syntax = _read_meta(cur)
    else:
        # Preamble-less files are assumed implicit VR little endian.
        cur = _Cursor(data, 0)
        transfer_syntax = IMPLICIT_VR_LE
    if transfer_syntax == EXPLICIT_VR_LE:
        explicit = True
    elif transfer_syntax == IMPLICIT_VR_LE:
        explicit = False
    else:
        raise DataError(
            f"{path.name}: unsupported transfer syntax {transfer_syntax} "
            "(only uncompressed little endian is readable)"
        )

    elements = _parse_dataset(cur, explicit)

    def _missing(name: str):
        return DataError(f"{path.name}: missing required DICOM attribute {name}")

    if TAG_ROWS not in elements or TAG_COLS not in elements:
        raise _missing("Rows/Columns")
    if TAG_RESCALE_SLOPE not in elements or TAG_RESCALE_INTERCEPT not in elements:
        raise _missing("RescaleSlope/RescaleIntercept")
    if TAG_PIXEL_DATA not in elements:
        raise _missing("PixelData")

    def _us(tag, default=None):
        if tag not in elements:
            return default
        return struct.unpack("<H", elements[tag][:2])[0]

    rows, cols = _us(TAG_ROWS), _us(TAG_COLS)
    samples = _us(TAG_SAMPLES_PER_PIXEL, default=1)
    if samples != 1:
        raise DataError(f"{path.name}: expected single-sample CT data, got {samples} samples/pixel")
    bits = _us(TAG_BITS_ALLOCATED, default=16)
    signed = _us(TAG_PIXEL_REPRESENTATION, default=0) == 1
    if bits == 16:
        dtype = np.int16 if signed else np.uint16
    elif bits == 8:
        dtype = np.int8 if signed else np.uint8
    else:
        raise DataError(f"{path.name}: unsupported BitsAllocated={bits}")

    stored = np.frombuffer(elements[TAG_PIXEL_DATA], dtype=dtype, count=rows * cols)
    if stored.size != rows * cols:
        raise DataError(f"{path.name}: pixel data shorter than Rows*Columns")
    stored = stored.reshape(rows, cols)

    slope = float(_decode_text(elements[TAG_RESCALE_SLOPE]))
    intercept = float(_decode_text(elements[TAG_RESCALE_INTERCEPT]))
    hu = stored.astype(np.float32) * slope + intercept

    patient_id = _decode_text(elements.get(TAG_PATIENT_ID, b"")) or path.parent.name
    instance = None
    if TAG_INSTANCE_NUMBER in elements:
        text = _decode_text(elements[TAG_INSTANCE_NUMBER])
        if text:
            instance = int(float(text))
    position_z = None
    if TAG_IMAGE_POSITION in elements:
        parts = _decode_text(elements[TAG_IMAGE_POSITION]).split("\\")
        if len(parts) == 3:
            position_z = float(parts[2])
    spacing = (1.0, 1.0)
    if TAG_PIXEL_SPACING in elements:
        parts = _decode_text(elements[TAG_PIXEL_SPACING]).split("\\")
        if len(parts) == 2:
            spacing = (float(parts[0]), float(parts[1]))

    return SliceRecord(
        path=path,
        pixels=hu,
        patient_id=patient_id,
        instance_number=instance,
        position_z=position_z,
        pixel_spacing=spacing,
    )


def is_dicom_file(path: str | Path) -> bool:
    """Cheap magic-number check; preamble-less files are not auto-detected."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(132)
    except OSError:
        return False
    return len(head) == 132 and head[128:132] == MAGIC
