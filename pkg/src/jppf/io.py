"""File formats: tensor container, label-map PNGs, rendering, scene directories.

Tensor container layout (all little-endian)::

    offset  size  field
    0       4     magic b"JPPT"
    4       2     version (u16, currently 1)
    6       1     dtype code (1 = f32, 2 = u32)
    7       1     rank
    8       4*r   dims (u32 each)
    ...           row-major payload, prod(dims) * 4 bytes
"""

from __future__ import annotations

import colorsys
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import png

from jppf.errors import BadMagic, DecodeError, FieldOverflow, ShapeMismatch, TruncatedPayload, UnsupportedVersion
from jppf.fusion import DenseLogits
from jppf.instances import InstancePrediction
from jppf.taxonomy import MAX_INSTANCE, MAX_PART, MAX_SEMANTIC, ClassTaxonomy, PanopticPartMap, encode_array

MAGIC = b"JPPT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u4")}
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("uint32"): 2}


def write_tensor(array: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(array)
    code = DTYPE_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or uint32")
    if arr.ndim > 255:
        raise ValueError("rank must fit in one byte")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a tensor container")
    if len(data) < 8:
        raise TruncatedPayload(f"{path}: header is cut short")
    version, code, rank = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: container version {version}")
    if code not in DTYPES:
        raise DecodeError(f"{path}: unknown dtype code {code}")
    if len(data) < 8 + 4 * rank:
        raise TruncatedPayload(f"{path}: dims are cut short")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    start = 8 + 4 * rank
    nbytes = int(np.prod(dims, dtype=np.int64)) * DTYPES[code].itemsize
    if len(data) - start < nbytes:
        raise TruncatedPayload(f"{path}: expected {nbytes} payload bytes, found {len(data) - start}")
    if len(data) - start > nbytes:
        raise DecodeError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(data, dtype=DTYPES[code], count=nbytes // DTYPES[code].itemsize, offset=start)
    return arr.reshape(dims).astype(DTYPES[code].newbyteorder("="))


def write_labelmap_png(m: PanopticPartMap, path: str | Path) -> None:
    """16-bit RGB PNG with R = semantic, G = instance, B = part; VOID is black."""
    s, i, p = m.semantic, m.instance, m.part
    if s.max(initial=0) > MAX_SEMANTIC or i.max(initial=0) > MAX_INSTANCE or p.max(initial=0) > MAX_PART:
        raise FieldOverflow("label map exceeds the encoding budget")
    rgb = np.stack([s, i, p], axis=-1).astype(np.uint16)
    h, w = m.shape
    writer = png.Writer(width=w, height=h, greyscale=False, bitdepth=16)
    with open(path, "wb") as f:
        writer.write(f, rgb.reshape(h, w * 3))


def labelmap_from_rgb(rgb: np.ndarray) -> PanopticPartMap:
    rgb = np.asarray(rgb, dtype=np.int64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"expected H x W x 3 channels, got {rgb.shape}")
    s, i, p = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    if s.max(initial=0) > MAX_SEMANTIC or p.max(initial=0) > MAX_PART or i.max(initial=0) > MAX_INSTANCE:
        raise FieldOverflow("pixel values exceed the encoding budget")
    return PanopticPartMap(encode_array(s, i, p))


def read_labelmap_png(path: str | Path) -> PanopticPartMap:
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        pixels = np.vstack([np.asarray(r, dtype=np.int64) for r in rows])
    except png.Error as e:
        raise DecodeError(f"{path}: {e}") from e
    if info["planes"] != 3 or info["bitdepth"] != 16:
        raise DecodeError(f"{path}: expected 16-bit RGB, got {info['planes']} planes at {info['bitdepth']} bits")
    return labelmap_from_rgb(pixels.reshape(h, w, 3))


def class_color(c: int) -> tuple[float, float, float]:
    """Deterministic base colour per semantic class (golden-ratio hue walk)."""
    hue = (c * 0.6180339887) % 1.0
    sat = 0.55 + 0.4 * ((c * 7) % 5) / 4
    return colorsys.hsv_to_rgb(hue, sat, 1.0)


def render(m: PanopticPartMap, t: ClassTaxonomy | None = None) -> np.ndarray:
    """8-bit RGB visualisation: hue per class, brightness per part, instance outlines.

    Outline shade depends on the instance id, so two instances of one class
    share a hue but have distinct outlines.
    """
    s, i, p = m.semantic, m.instance, m.part
    out = np.zeros(m.shape + (3,), np.float64)
    for c in np.unique(s[~m.void_mask]):
        out[(s == c) & ~m.void_mask] = class_color(int(c))
    nparts = np.maximum(1, np.array([t.num_parts(int(c)) if t else MAX_PART for c in range(256)]))
    bright = np.where(p > 0, 1.0 - 0.5 * p / nparts[s], 1.0)
    out *= bright[..., None]

    key = m.labels >> 8
    edge = np.zeros(m.shape, bool)
    edge[:-1] |= key[:-1] != key[1:]
    edge[1:] |= key[1:] != key[:-1]
    edge[:, :-1] |= key[:, :-1] != key[:, 1:]
    edge[:, 1:] |= key[:, 1:] != key[:, :-1]
    outline = edge & (i > 0) & ~m.void_mask
    shade = 0.15 + 0.7 * ((i * 0.377) % 1.0)
    out[outline] = shade[outline][:, None]
    out[m.void_mask] = 0.0
    return np.round(out * 255).astype(np.uint8)


def write_png_rgb8(rgb: np.ndarray, path: str | Path) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        png.Writer(width=w, height=h, greyscale=False, bitdepth=8).write(f, rgb.reshape(h, w * 3))


def read_png_rgb8(path: str | Path) -> np.ndarray:
    w, h, rows, _ = png.Reader(filename=str(path)).asRGB8()
    return np.vstack([np.asarray(r, dtype=np.uint8) for r in rows]).reshape(h, w, 3)


def part_group_png(groups: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(groups)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 0xFFFF:
        raise FieldOverflow("part group ids must fit in 16 bits")
    h, w = arr.shape
    with open(path, "wb") as f:
        png.Writer(width=w, height=h, greyscale=True, bitdepth=16).write(f, arr.astype(np.uint16))


def read_part_group_png(path: str | Path) -> np.ndarray:
    w, h, rows, info = png.Reader(filename=str(path)).asDirect()
    if info["planes"] != 1:
        raise DecodeError(f"{path}: expected a single-channel part map")
    return np.vstack([np.asarray(r, dtype=np.int64) for r in rows]).reshape(h, w)


# scene directories -----------------------------------------------------------

SEMANTIC_FILE = "semantic.jppt"
PARTS_FILE = "parts.jppt"
INSTANCES_FILE = "instances.json"
GT_FILE = "gt.png"
TAXONOMY_FILE = "taxonomy.json"
SPEC_FILE = "scene.json"
META_FILE = "channels.json"


def write_logits(logits: DenseLogits, path: str | Path) -> None:
    write_tensor(logits.values.astype(np.float32), path)


def read_logits(path: str | Path, channel_meta) -> DenseLogits:
    values = read_tensor(path)
    if values.dtype != np.float32:
        raise DecodeError(f"{path}: logits must be float32")
    return DenseLogits(values, tuple(channel_meta))


def write_instances(preds, directory: str | Path) -> None:
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for k, p in enumerate(preds):
        ref = f"masks/{k:04d}.jppt"
        write_tensor(p.mask.astype(np.float32), directory / ref)
        entries.append(
            {
                "box": list(p.box),
                "class_id": p.class_id,
                "confidence": p.confidence,
                "mask": {"h": int(p.mask.shape[0]), "w": int(p.mask.shape[1]), "tensor_ref": ref},
            }
        )
    (directory / INSTANCES_FILE).write_text(json.dumps(entries, indent=1), encoding="utf-8")


def read_instances(path: str | Path) -> list[InstancePrediction]:
    """Instance predictions from JSON; mask refs resolve relative to the file."""
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    out = []
    for e in entries:
        mask = read_tensor(path.parent / e["mask"]["tensor_ref"])
        if mask.shape != (e["mask"]["h"], e["mask"]["w"]):
            raise ShapeMismatch(f"mask {e['mask']['tensor_ref']} has shape {mask.shape}")
        out.append(InstancePrediction(mask, tuple(e["box"]), int(e["class_id"]), float(e["confidence"])))
    return out


def write_scene(directory: str | Path, scene, t: ClassTaxonomy) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_logits(scene.semantic, d / SEMANTIC_FILE)
    write_logits(scene.parts, d / PARTS_FILE)
    write_instances(scene.instances, d)
    write_labelmap_png(scene.gt, d / GT_FILE)
    part_group_png(scene.part_gt, d / "parts_gt.png")
    (d / TAXONOMY_FILE).write_text(json.dumps(t.to_dict(), indent=1), encoding="utf-8")
    (d / SPEC_FILE).write_text(json.dumps(scene.spec.to_dict(), indent=1), encoding="utf-8")
    meta = {"semantic": list(scene.semantic.channel_meta), "parts": list(scene.parts.channel_meta)}
    (d / META_FILE).write_text(json.dumps(meta), encoding="utf-8")


def read_channel_meta(directory: str | Path, t: ClassTaxonomy) -> dict[str, Any]:
    """Channel order of a scene directory; taxonomy order when no channels.json exists."""
    path = Path(directory) / META_FILE
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"semantic": list(t.semantic_classes), "parts": list(t.part_groups)}

