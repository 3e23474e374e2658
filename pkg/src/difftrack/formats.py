"""On-disk artifact formats: checkpoints, dumps, flows, results, labels.

All binary layouts are little-endian with a magic tag up front, so artifacts
move between machines and a truncated or foreign file fails loudly.  Text
formats are UTF-8 with '#' comments.
"""

import struct
from pathlib import Path

import numpy as np
import torch

from .core import AttentionMap, BoundingBox, EmbeddingVector, FrameRGB
from .fuse import FusionHead
from .harmonize import HarmonizeParams
from .motion import MotionModule
from .prompt_learner import EmbeddingProjector, SharedArtifacts
from .pseudolabel import FlowField, QualityReport
from .updater import BlendHead

__all__ = [
    "PSEUDOLABEL_HEADER",
    "save_checkpoint",
    "load_checkpoint",
    "save_attention",
    "load_attention",
    "save_flow",
    "load_flow",
    "write_results",
    "read_results",
    "read_boxes",
    "write_pseudolabels",
    "read_pseudolabels",
    "module_arrays",
    "load_module_arrays",
    "pack_artifacts",
    "unpack_artifacts",
    "load_frame",
    "image_size",
    "list_frame_files",
]

_CKPT_MAGIC = b"DTCK1"
_ATTN_MAGIC = b"ATTN"
_FLOW_MAGIC = b"FLOW"
PSEUDOLABEL_HEADER = "# difftrack-pseudolabel v1"


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _read_u32(f) -> int:
    return struct.unpack("<I", _read_exact(f, 4))[0]


# --- checkpoint container ---------------------------------------------------


def save_checkpoint(path, arrays: dict):
    """Named float32 tensors in insertion order; round-trips byte-identically."""
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype="<f4")  # ascontiguousarray would lift rank 0 to 1
            if not a.flags["C_CONTIGUOUS"]:
                a = np.ascontiguousarray(a)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        if _read_exact(f, len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        count = _read_u32(f)
        out = {}
        for _ in range(count):
            name = _read_exact(f, _read_u32(f)).decode("utf-8")
            rank = _read_u32(f)
            shape = tuple(_read_u32(f) for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * size), dtype="<f4")
            out[name] = data.reshape(shape).copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after last record")
    return out


# --- attention dump and flow ------------------------------------------------


def save_attention(path, amap: AttentionMap):
    v = np.ascontiguousarray(amap.numpy(), dtype="<f4")
    with open(path, "wb") as f:
        f.write(_ATTN_MAGIC)
        f.write(struct.pack("<II", v.shape[0], v.shape[1]))
        f.write(v.tobytes())


def load_attention(path) -> AttentionMap:
    with open(path, "rb") as f:
        if _read_exact(f, len(_ATTN_MAGIC)) != _ATTN_MAGIC:
            raise ValueError(f"{path}: not an attention dump (bad magic)")
        h, w = _read_u32(f), _read_u32(f)
        data = np.frombuffer(_read_exact(f, 4 * h * w), dtype="<f4")
    return AttentionMap(data.reshape(h, w).astype(np.float64))


def save_flow(path, flow: FlowField):
    v = np.ascontiguousarray(flow.values, dtype="<f4")  # (dx, dy) interleaved
    with open(path, "wb") as f:
        f.write(_FLOW_MAGIC)
        f.write(struct.pack("<II", v.shape[0], v.shape[1]))
        f.write(v.tobytes())


def load_flow(path) -> FlowField:
    with open(path, "rb") as f:
        if _read_exact(f, len(_FLOW_MAGIC)) != _FLOW_MAGIC:
            raise ValueError(f"{path}: not a flow file (bad magic)")
        h, w = _read_u32(f), _read_u32(f)
        data = np.frombuffer(_read_exact(f, 4 * h * w * 2), dtype="<f4")
    return FlowField(data.reshape(h, w, 2).astype(np.float64))


# --- text formats -----------------------------------------------------------


def write_results(path, entries, comments=()):
    """Tracking output: one "frame,x,y,w,h" line per frame."""
    with open(path, "w", encoding="utf-8") as f:
        for c in comments:
            f.write(f"# {c}\n")
        for idx, box in entries:
            f.write(f"{idx},{box.x:.2f},{box.y:.2f},{box.w:.2f},{box.h:.2f}\n")


def _data_lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_results(path) -> list:
    out = []
    for lineno, line in _data_lines(path):
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected frame,x,y,w,h")
        idx = int(parts[0])
        x, y, w, h = (float(p) for p in parts[1:])
        out.append((idx, BoundingBox(x, y, w, h)))
    return out


def read_boxes(path) -> list:
    """Ground-truth file: one "x,y,w,h" line per frame."""
    out = []
    for lineno, line in _data_lines(path):
        parts = line.replace("\t", ",").split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected x,y,w,h")
        x, y, w, h = (float(p) for p in parts)
        out.append(BoundingBox(x, y, w, h))
    return out


def write_pseudolabels(path, trajectory, report: QualityReport):
    if len(trajectory) != len(report.qualities):
        raise ValueError("trajectory and quality lengths differ")
    with open(path, "w", encoding="utf-8") as f:
        f.write(PSEUDOLABEL_HEADER + "\n")
        f.write(f"# video_score={report.video_score:.4f} keep={int(report.keep)}\n")
        for idx, (box, q) in enumerate(zip(trajectory, report.qualities)):
            f.write(f"{idx},{box.x:.2f},{box.y:.2f},{box.w:.2f},{box.h:.2f},{q:.4f}\n")


def read_pseudolabels(path):
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if first != PSEUDOLABEL_HEADER:
        raise ValueError(f"{path}: missing header {PSEUDOLABEL_HEADER!r}")
    boxes, qualities = [], []
    for lineno, line in _data_lines(path):
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected frame,x,y,w,h,quality")
        x, y, w, h, q = (float(p) for p in parts[1:])
        boxes.append(BoundingBox(x, y, w, h))
        qualities.append(q)
    return boxes, qualities


# --- module weights in and out of array form --------------------------------


def module_arrays(module, prefix: str = "") -> dict:
    return {prefix + k: v.detach().cpu().numpy()
            for k, v in module.state_dict().items()}


def load_module_arrays(module, arrays: dict, prefix: str = ""):
    state = {}
    for k, v in module.state_dict().items():
        key = prefix + k
        if key not in arrays:
            raise ValueError(f"checkpoint is missing {key}")
        got = np.array(arrays[key])
        if got.size != v.numel():
            raise ValueError(f"{key}: shape {got.shape} does not match {tuple(v.shape)}")
        state[k] = torch.as_tensor(got, dtype=v.dtype).reshape(v.shape)
    module.load_state_dict(state)


_MOTION_PARTS = ("short_rgb", "long_rgb", "short_freq", "long_freq",
                 "ls_rgb", "ls_freq", "rf", "template_extractor")


def pack_artifacts(shared: SharedArtifacts, motion: MotionModule = None,
                   blend: BlendHead = None) -> dict:
    """Everything needed to rebuild the tracker, as one checkpoint dict."""
    out = {
        "meta.format": np.array(1.0),
        "meta.num_tokens": np.array(float(shared.projector.num_tokens)),
        "meta.token_dim": np.array(float(shared.projector.token_dim)),
        "meta.epoch_losses": np.array(shared.epoch_losses, dtype=np.float64),
        "e_sh": shared.e_sh.values,
    }
    out.update(module_arrays(shared.projector, "projector."))
    out.update(module_arrays(shared.head, "fuse."))
    out.update(module_arrays(shared.harmonize, "harmonize."))
    if motion is not None:
        for part in _MOTION_PARTS:
            out.update(module_arrays(getattr(motion, part), f"motion.{part}."))
    if blend is not None:
        out.update(module_arrays(blend, "blend."))
    return out


def unpack_artifacts(arrays: dict):
    """Rebuild (shared, motion, blend) from a checkpoint dict.

    Architecture sizes come from the stored shapes; motion and blend are None
    when the checkpoint predates updater training.
    """
    k = int(round(float(np.asarray(arrays["meta.num_tokens"]).reshape(()))))
    d = int(round(float(np.asarray(arrays["meta.token_dim"]).reshape(()))))
    hidden = arrays["projector.fc1.weight"].shape[0]
    projector = EmbeddingProjector(num_tokens=k, token_dim=d, hidden_dim=hidden)
    load_module_arrays(projector, arrays, "projector.")
    head = FusionHead(num_layers=len(arrays["fuse.layer_weights"]),
                      hidden_dim=arrays["fuse.fc1.weight"].shape[0])
    load_module_arrays(head, arrays, "fuse.")
    harmonize = HarmonizeParams()
    load_module_arrays(harmonize, arrays, "harmonize.")
    shared = SharedArtifacts(
        e_sh=EmbeddingVector(np.asarray(arrays["e_sh"], dtype=np.float64), "shared"),
        projector=projector,
        head=head,
        harmonize=harmonize,
        epoch_losses=tuple(float(x) for x in np.atleast_1d(arrays["meta.epoch_losses"])),
    )
    motion = None
    if any(key.startswith("motion.") for key in arrays):
        motion = MotionModule()
        for part in _MOTION_PARTS:
            load_module_arrays(getattr(motion, part), arrays, f"motion.{part}.")
    blend = None
    if any(key.startswith("blend.") for key in arrays):
        p = k * d
        fc1_w = arrays["blend.fc1.weight"]
        blend = BlendHead(num_tokens=k, token_dim=d,
                          motion_dim=fc1_w.shape[1] - p,
                          hidden_extra=fc1_w.shape[0] - 2 * p)
        load_module_arrays(blend, arrays, "blend.")
    return shared, motion, blend


# --- frame loading ----------------------------------------------------------

_FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_frame(path, resolution: int = None) -> FrameRGB:
    from PIL import Image

    img = Image.open(path).convert("RGB")
    if resolution is not None and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return FrameRGB(np.asarray(img, dtype=np.float64) / 255.0)


def image_size(path) -> tuple:
    """(width, height) without decoding the full image."""
    from PIL import Image

    with Image.open(path) as img:
        return img.size


def list_frame_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise ValueError(f"{directory}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES)
    if not files:
        raise ValueError(f"{directory}: no image files found")
    return files
