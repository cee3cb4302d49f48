"""Binary and text file formats for datasets, models, and rendered images.

Dataset files (``.umi``) hold a complex frame stack plus acquisition
metadata. Layout: 4-byte magic ``UMI1``, four little-endian uint32 fields
(version, nz, nx, nt), three little-endian float64 fields (frame_rate,
center_freq, prf), then the voxels as little-endian complex64, frame-major
with the axial index fastest within each frame.

Model files (``.u2m``) hold the unconstrained parameters of an unfolded
network: magic ``U2M1``, uint32 version / layer count / subspace dimension,
float64 epsilon, then per layer one float64 theta_lambda followed by d
float64 theta_w entries.

Rendered images go out either as 16-bit binary PGM (log-compressed with a
configurable dynamic range) or as headerless CSV with full float64
precision.
"""

import struct

import numpy as np

from .casorati import FrameSequence
from .unfolded import LayerParams, UnfoldedNetwork

_DATASET_MAGIC = b"UMI1"
_MODEL_MAGIC = b"U2M1"
_DATASET_VERSION = 1
_MODEL_VERSION = 1
_HEADER_SIZE = 44  # magic + 4 uint32 + 3 float64
_MAX_DIM = 2 ** 32 - 1


def write_dataset(seq, path, meta=None):
    """Write a frame stack to a UMI1 file.

    ``seq`` is either a FrameSequence or a bare (nz, nx, nt) complex array;
    in the latter case ``meta`` must supply frame_rate, center_freq, and
    prf. Voxels are stored as complex64, so reading back reproduces the
    32-bit payload exactly but not float64 inputs.
    """
    if isinstance(seq, FrameSequence):
        voxels = seq.voxels
        fields = {"frame_rate": seq.frame_rate, "center_freq": seq.center_freq,
                  "prf": seq.prf}
        if meta:
            fields.update(meta)
    else:
        voxels = np.asarray(seq)
        if meta is None:
            raise ValueError("meta with frame_rate/center_freq/prf is "
                             "required when writing a bare array")
        fields = dict(meta)
    if voxels.ndim != 3:
        raise ValueError(f"expected (nz, nx, nt) voxels, got {voxels.shape}")
    nz, nx, nt = voxels.shape
    for n in (nz, nx, nt):
        if not 0 < n <= _MAX_DIM:
            raise ValueError(f"dimension {n} does not fit the header")
    header = _DATASET_MAGIC
    header += struct.pack("<4I", _DATASET_VERSION, nz, nx, nt)
    header += struct.pack("<3d", float(fields["frame_rate"]),
                          float(fields["center_freq"]), float(fields["prf"]))
    payload = voxels.astype(np.complex64).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_dataset(path):
    """Read a UMI1 file back into a FrameSequence (complex128 voxels)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_SIZE:
        raise ValueError("truncated header: file shorter than 44 bytes")
    if raw[:4] != _DATASET_MAGIC:
        raise ValueError(f"bad magic {raw[:4]!r}, expected {_DATASET_MAGIC!r}")
    version, nz, nx, nt = struct.unpack_from("<4I", raw, 4)
    if version != _DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    frame_rate, center_freq, prf = struct.unpack_from("<3d", raw, 20)
    count = nz * nx * nt
    expected = _HEADER_SIZE + 8 * count
    if len(raw) < expected:
        raise ValueError(
            f"truncated payload: header claims {count} voxels "
            f"({expected} bytes) but file has {len(raw)}")
    if len(raw) > expected:
        raise ValueError(f"trailing bytes: expected {expected}, "
                         f"got {len(raw)}")
    flat = np.frombuffer(raw, dtype="<c8", count=count, offset=_HEADER_SIZE)
    voxels = flat.reshape((nz, nx, nt), order="F").astype(np.complex128)
    return FrameSequence(voxels=voxels, frame_rate=frame_rate,
                         center_freq=center_freq, prf=prf)


def write_model(net, path):
    """Write an unfolded network's parameters to a U2M1 file."""
    d = net.d
    blob = _MODEL_MAGIC
    blob += struct.pack("<3I", _MODEL_VERSION, len(net.layers), d)
    blob += struct.pack("<d", float(net.epsilon))
    for layer in net.layers:
        theta_w = np.asarray(layer.theta_w, dtype=float)
        if theta_w.shape != (d,):
            raise ValueError(f"layer theta_w has shape {theta_w.shape}, "
                             f"expected ({d},)")
        blob += struct.pack("<d", float(layer.theta_lambda))
        blob += theta_w.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def read_model(path):
    """Read a U2M1 file back into an UnfoldedNetwork."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24:
        raise ValueError("truncated header: file shorter than 24 bytes")
    if raw[:4] != _MODEL_MAGIC:
        raise ValueError(f"bad magic {raw[:4]!r}, expected {_MODEL_MAGIC!r}")
    version, k, d = struct.unpack_from("<3I", raw, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    (epsilon,) = struct.unpack_from("<d", raw, 16)
    expected = 24 + k * (1 + d) * 8
    if len(raw) < expected:
        raise ValueError(f"truncated payload: expected {expected} bytes, "
                         f"got {len(raw)}")
    if len(raw) != expected:
        raise ValueError(f"trailing bytes: expected {expected}, "
                         f"got {len(raw)}")
    layers = []
    offset = 24
    for _ in range(k):
        (theta_lambda,) = struct.unpack_from("<d", raw, offset)
        offset += 8
        theta_w = np.frombuffer(raw, dtype="<f8", count=d,
                                offset=offset).astype(float)
        offset += 8 * d
        layers.append(LayerParams(theta_lambda, theta_w))
    return UnfoldedNetwork(layers=layers, d=d, epsilon=epsilon)


def write_pgm(image, path, dynamic_range_db=30.0, comment=None):
    """Write a nonnegative image as 16-bit log-compressed binary PGM.

    Values are mapped to dB relative to the image peak, clamped to
    [-dynamic_range_db, 0], and scaled linearly onto 0..65535. An optional
    comment string is embedded as a ``#`` header line.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if np.any(image < 0):
        raise ValueError("PGM output requires nonnegative values")
    if dynamic_range_db <= 0:
        raise ValueError("dynamic_range_db must be positive")
    peak = image.max()
    if peak == 0:
        levels = np.zeros(image.shape, dtype=">u2")
    else:
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(image / peak)
        db = np.clip(db, -dynamic_range_db, 0.0)
        levels = np.rint((db + dynamic_range_db) / dynamic_range_db
                         * 65535.0).astype(">u2")
    nz, nx = image.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{nx} {nz}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(levels.tobytes())


def write_csv(image, path):
    """Write an image as headerless CSV, one row per line, full precision."""
    np.savetxt(path, np.atleast_2d(np.asarray(image, dtype=float)),
               fmt="%.17g", delimiter=",")


def read_csv(path):
    """Read a headerless CSV image written by write_csv."""
    return np.loadtxt(path, delimiter=",", ndmin=2)
