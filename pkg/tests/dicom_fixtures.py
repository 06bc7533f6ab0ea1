"""Test-only writer for minimal explicit-VR little-endian DICOM files."""

import struct
from pathlib import Path

import numpy as np

_LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}


def _element(group, elem, vr, value: bytes) -> bytes:
    if len(value) % 2:
        value += b"\x00"
    head = struct.pack("<HH", group, elem) + vr
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + struct.pack("<H", len(value)) + value


def write_ct_dicom(
    path,
    stored: np.ndarray,
    slope: float = 1.0,
    intercept: float = -1024.0,
    patient_id: str = "P0",
    instance_number: int | None = 1,
    position_z: float | None = 0.0,
    pixel_spacing=(0.7, 0.7),
    omit_rescale: bool = False,
) -> Path:
    stored = np.ascontiguousarray(stored, dtype=np.int16)
    rows, cols = stored.shape

    meta_elems = _element(0x0002, 0x0010, b"UI", b"1.2.840.10008.1.2.1")
    meta = _element(0x0002, 0x0000, b"UL", struct.pack("<I", len(meta_elems))) + meta_elems

    body = b""
    body += _element(0x0010, 0x0020, b"LO", patient_id.encode())
    if instance_number is not None:
        body += _element(0x0020, 0x0013, b"IS", str(instance_number).encode())
    if position_z is not None:
        body += _element(0x0020, 0x0032, b"DS", f"0\\0\\{position_z}".encode())
    body += _element(0x0028, 0x0002, b"US", struct.pack("<H", 1))
    body += _element(0x0028, 0x0010, b"US", struct.pack("<H", rows))
    body += _element(0x0028, 0x0011, b"US", struct.pack("<H", cols))
    body += _element(0x0028, 0x0030, b"DS", f"{pixel_spacing[0]}\\{pixel_spacing[1]}".encode())
    body += _element(0x0028, 0x0100, b"US", struct.pack("<H", 16))
    body += _element(0x0028, 0x0103, b"US", struct.pack("<H", 1))
    if not omit_rescale:
        body += _element(0x0028, 0x1052, b"DS", str(intercept).encode())
        body += _element(0x0028, 0x1053, b"DS", str(slope).encode())
    body += _element(0x7FE0, 0x0010, b"OW", stored.tobytes())

    path = Path(path)
    path.write_bytes(b"\x00" * 128 + b"DICM" + meta + body)
    return path
