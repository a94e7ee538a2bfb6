"""Volume file I/O: the native ``.rawvol`` format and read-only NIfTI-1."""

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import VolumeFormatError
from .volume import VoxelGrid

RAWVOL_DTYPES = {"u8": "<u1", "i16": "<i2", "f32": "<f4"}
MAX_VOXELS = 2**31

NIFTI_DTYPES = {2: ("<u1", "u8"), 4: ("<i2", "i16"), 16: ("<f4", "f32")}


def _dtype_code(arr):
    for code, np_dtype in RAWVOL_DTYPES.items():
        if arr.dtype == np.dtype(np_dtype):
            return code
    if arr.dtype == np.bool_:
        return "u8"
    raise VolumeFormatError(f"unsupported dtype for .rawvol: {arr.dtype}")


def payload_path(header_path):
    return Path(header_path).with_suffix(".raw")


def write_volume(grid, path):
    """Write ``path`` (JSON header) and its sibling ``.raw`` payload, x fastest."""
    path = Path(path)
    code = _dtype_code(grid.data)
    data = np.asarray(grid.data).astype(RAWVOL_DTYPES[code], copy=False)
    raw = payload_path(path)
    header = {
        "dims": [int(d) for d in grid.dims],
        "spacing": list(grid.spacing),
        "origin": list(grid.origin),
        "dtype": code,
        "byte_order": "little",
        "payload": raw.name,
    }
    raw.write_bytes(data.ravel(order="F").tobytes())
    path.write_text(json.dumps(header, indent=2) + "\n")


def _read_rawvol(path):
    try:
        header = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VolumeFormatError(f"{path}: header is not valid JSON: {exc}") from None
    for key in ("dims", "spacing", "origin", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"{path}: header field '{key}' missing")
    if header.get("byte_order", "little") != "little":
        raise VolumeFormatError(f"{path}: field 'byte_order' must be 'little'")
    code = header["dtype"]
    if code not in RAWVOL_DTYPES:
        raise VolumeFormatError(f"{path}: field 'dtype' has unsupported value {code!r}")
    dims = [int(d) for d in header["dims"]]
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise VolumeFormatError(f"{path}: field 'dims' must be three positive integers, got {dims}")
    n = int(np.prod(dims, dtype=object))
    if n > MAX_VOXELS:
        raise VolumeFormatError(f"{path}: field 'dims' overflows ({n} voxels)")
    raw = path.parent / header.get("payload", payload_path(path).name)
    if not raw.exists():
        raise VolumeFormatError(f"{path}: payload file {raw} not found")
    blob = raw.read_bytes()
    dtype = np.dtype(RAWVOL_DTYPES[code])
    expected = n * dtype.itemsize
    if len(blob) != expected:
        raise VolumeFormatError(
            f"{raw}: payload size mismatch, expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype=dtype).reshape(dims, order="F").astype(dtype.newbyteorder("="))
    try:
        return VoxelGrid(data, header["spacing"], header["origin"])
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from None


# -- NIfTI-1 ------------------------------------------------------------

_NIFTI_FIELDS = [
    ("sizeof_hdr", 0, "i"),
    ("dim", 40, "8h"),
    ("datatype", 70, "h"),
    ("bitpix", 72, "h"),
    ("pixdim", 76, "8f"),
    ("vox_offset", 108, "f"),
    ("scl_slope", 112, "f"),
    ("scl_inter", 116, "f"),
    ("qform_code", 252, "h"),
    ("sform_code", 254, "h"),
    ("quatern", 256, "3f"),
    ("qoffset", 268, "3f"),
    ("srow_x", 280, "4f"),
    ("srow_y", 296, "4f"),
    ("srow_z", 312, "4f"),
    ("magic", 344, "4s"),
]


def parse_nifti_header(blob, name="<nifti>"):
    """Decode the fields of a little-endian 348-byte NIfTI-1 header we use."""
    if len(blob) < 348:
        raise VolumeFormatError(f"{name}: header truncated ({len(blob)} < 348 bytes)")
    (size,) = struct.unpack_from("<i", blob, 0)
    if size != 348:
        if struct.unpack_from(">i", blob, 0)[0] == 348:
            raise VolumeFormatError(f"{name}: big-endian NIfTI is not supported")
        raise VolumeFormatError(f"{name}: field 'sizeof_hdr' is {size}, expected 348")
    hdr = {}
    for key, off, fmt in _NIFTI_FIELDS:
        vals = struct.unpack_from("<" + fmt, blob, off)
        hdr[key] = vals if len(vals) > 1 else vals[0]
    if hdr["magic"] not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeFormatError(f"{name}: field 'magic' is {hdr['magic']!r}, expected b'n+1\\0' or b'ni1\\0'")
    return hdr


def _quaternion_affine(hdr):
    b, c, d = (float(x) for x in hdr["quatern"])
    a = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a) if a > 0 else 0.0
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    pix = np.array(hdr["pixdim"][1:4], dtype=np.float64)
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    pix[2] *= qfac
    return rot * pix[None, :], np.array(hdr["qoffset"], dtype=np.float64)


def _nifti_affine(hdr):
    if hdr["sform_code"] > 0:
        m = np.array([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]], dtype=np.float64)
        return m[:, :3], m[:, 3]
    if hdr["qform_code"] > 0:
        return _quaternion_affine(hdr)
    return np.diag(np.array(hdr["pixdim"][1:4], dtype=np.float64)), np.zeros(3)


def read_nifti(path):
    """Read a single-file (``n+1``) or paired (``ni1`` .hdr/.img) NIfTI-1 volume.

    Only axis-aligned affines are accepted; negative axis directions are
    handled by flipping the array so spacing stays positive.
    """
    path = Path(path)
    blob = path.read_bytes()
    hdr = parse_nifti_header(blob, path)
    dim = hdr["dim"]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeFormatError(f"{path}: field 'dim[0]' = {ndim} out of range")
    shape = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if any(s <= 0 for s in shape):
        raise VolumeFormatError(f"{path}: field 'dim' has non-positive extent {shape}")
    if any(s != 1 for s in shape[3:]):
        raise VolumeFormatError(f"{path}: field 'dim' describes a {ndim}-D image; only 3-D volumes are supported")
    dims = shape[:3]
    n = int(np.prod(dims, dtype=object))
    if n > MAX_VOXELS:
        raise VolumeFormatError(f"{path}: field 'dim' overflows ({n} voxels)")
    if hdr["datatype"] not in NIFTI_DTYPES:
        raise VolumeFormatError(f"{path}: field 'datatype' code {hdr['datatype']} unsupported (u8=2, i16=4, f32=16)")
    np_dtype = np.dtype(NIFTI_DTYPES[hdr["datatype"]][0])

    if hdr["magic"] == b"n+1\x00":
        offset = int(hdr["vox_offset"])
        payload = blob[offset:]
        source = path
    else:
        source = path.with_suffix(".img")
        if not source.exists():
            raise VolumeFormatError(f"{path}: paired image file {source} not found")
        payload = source.read_bytes()
        offset = int(hdr["vox_offset"])
        payload = payload[offset:]
    expected = n * np_dtype.itemsize
    if len(payload) < expected:
        raise VolumeFormatError(
            f"{source}: payload truncated, expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload[:expected], dtype=np_dtype).reshape(dims, order="F")
    data = data.astype(np_dtype.newbyteorder("="))

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0 and np.isfinite(slope) and (slope != 1 or inter != 0):
        data = data.astype(np.float64) * slope + inter

    lin, offset_xyz = _nifti_affine(hdr)
    off_diag = lin - np.diag(np.diag(lin))
    if np.any(np.abs(off_diag) > 1e-6 * np.abs(lin).max()):
        raise VolumeFormatError(f"{path}: oblique orientation (rotated affine) is not supported")
    diag = np.diag(lin).copy()
    if np.any(diag == 0):
        raise VolumeFormatError(f"{path}: affine has a zero voxel size")
    origin = offset_xyz.copy()
    for axis in range(3):
        if diag[axis] < 0:
            data = np.flip(data, axis=axis)
            origin[axis] += diag[axis] * (dims[axis] - 1)
            diag[axis] = -diag[axis]
    return VoxelGrid(np.ascontiguousarray(data), tuple(diag), tuple(origin))


def read_volume(path):
    """Dispatch on extension: ``.rawvol`` or ``.nii`` / ``.hdr``."""
    path = Path(path)
    if not path.exists():
        raise VolumeFormatError(f"{path}: file not found")
    suffix = path.suffix.lower()
    if suffix == ".rawvol":
        return _read_rawvol(path)
    if suffix in (".nii", ".hdr"):
        return read_nifti(path)
    if suffix == ".gz":
        raise VolumeFormatError(f"{path}: gzipped NIfTI is not supported")
    raise VolumeFormatError(f"{path}: unknown volume extension {suffix!r}")
