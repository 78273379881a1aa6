"""Bitstream container: fixed header plus length-prefixed payload sections.

Layout (little-endian):

    magic      4s   b"SFMA"
    version    u8   currently 1
    mode       u8   0=human, 1=machine, 2=scalable
    flags      u8   bit0: scalable mask is implicit (recomputed from the
                    decoded hyper-latent; no mask bits in the stream)
    lambda_id  u8   quality-point index recorded for bookkeeping
    padded     u16 x2   (H, W) the codec actually transformed
    original   u16 x2   (H, W) to crop back to after synthesis
    nsect      u8   2 (hyper, latent) or 3 (hyper, base, enhancement)
    lengths    u32 x nsect
    sections   raw bytes, concatenated in order
"""

import struct

from .errors import ConfigError, StreamError

MAGIC = b"SFMA"
VERSION = 1

MODE_HUMAN = "human"
MODE_MACHINE = "machine"
MODE_SCALABLE = "scalable"
_MODE_CODES = {MODE_HUMAN: 0, MODE_MACHINE: 1, MODE_SCALABLE: 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}

FLAG_IMPLICIT_MASK = 0x01

_HEAD = struct.Struct("<4sBBBBHHHHB")


class Bitstream:
    """Parsed or to-be-serialized compressed stream."""

    __slots__ = ("mode", "flags", "lambda_id", "padded_dims",
                 "original_dims", "sections")

    def __init__(self, mode, lambda_id, padded_dims, original_dims,
                 sections, flags=0):
        if mode not in _MODE_CODES:
            raise ConfigError(f"unknown mode {mode!r}")
        nsect = 3 if mode == MODE_SCALABLE else 2
        if len(sections) != nsect:
            raise ConfigError(
                f"{mode} mode needs {nsect} sections, got {len(sections)}")
        for dims in (padded_dims, original_dims):
            if len(dims) != 2 or not all(
                    isinstance(d, int) and 0 < d <= 0xFFFF for d in dims):
                raise ConfigError(f"dims out of u16 range: {dims}")
        if not 0 <= int(lambda_id) <= 0xFF:
            raise ConfigError(f"lambda_id out of u8 range: {lambda_id}")
        self.mode = mode
        self.flags = int(flags) & 0xFF
        self.lambda_id = int(lambda_id)
        self.padded_dims = tuple(padded_dims)
        self.original_dims = tuple(original_dims)
        self.sections = tuple(bytes(s) for s in sections)

    def __eq__(self, other):
        return isinstance(other, Bitstream) and (
            self.mode == other.mode
            and self.flags == other.flags
            and self.lambda_id == other.lambda_id
            and self.padded_dims == other.padded_dims
            and self.original_dims == other.original_dims
            and self.sections == other.sections)

    def serialize(self):
        head = _HEAD.pack(
            MAGIC, VERSION, _MODE_CODES[self.mode], self.flags,
            self.lambda_id,
            self.padded_dims[0], self.padded_dims[1],
            self.original_dims[0], self.original_dims[1],
            len(self.sections))
        lens = b"".join(struct.pack("<I", len(s)) for s in self.sections)
        return head + lens + b"".join(self.sections)


def parse(data):
    """Inverse of Bitstream.serialize; raises StreamError on bad input."""
    data = bytes(data)
    if len(data) < _HEAD.size:
        raise StreamError("stream shorter than fixed header")
    magic, version, mode_code, flags, lambda_id, ph, pw, oh, ow, nsect = \
        _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise StreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StreamError(f"unsupported version {version}")
    if mode_code not in _CODE_MODES:
        raise StreamError(f"unknown mode byte {mode_code}")
    mode = _CODE_MODES[mode_code]
    want = 3 if mode == MODE_SCALABLE else 2
    if nsect != want:
        raise StreamError(f"{mode} stream with {nsect} sections")
    off = _HEAD.size
    if len(data) < off + 4 * nsect:
        raise StreamError("stream truncated in section table")
    lens = struct.unpack_from(f"<{nsect}I", data, off)
    off += 4 * nsect
    if len(data) != off + sum(lens):
        raise StreamError(
            f"payload length {len(data) - off} != table total {sum(lens)}")
    sections = []
    for n in lens:
        sections.append(data[off:off + n])
        off += n
    try:
        return Bitstream(mode, lambda_id, (ph, pw), (oh, ow),
                         sections, flags=flags)
    except ConfigError as e:   # zero dims etc. count as stream corruption
        raise StreamError(str(e)) from e
