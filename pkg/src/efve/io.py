"""Frame and artifact IO.

Inputs are either a directory of numbered images (PNG natively) or a video
file handed to an external demuxer through a documented shell contract: the
command template receives {input} and {outdir} and must write zero-padded
numbered PNGs into {outdir} (the default template targets ffmpeg).
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import tempfile

import numpy as np
from PIL import Image

from .errors import DataError, UsageError

DEMUX_TEMPLATE = "ffmpeg -v error -i {input} -start_number 0 {outdir}/%06d.png"

_IMAGE_EXTS = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")


def read_frame(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise UsageError(f"unreadable input path: {path}")
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}")


def write_frame(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 255.0)
    Image.fromarray(np.round(arr).astype(np.uint8), mode="RGB").save(path)


def list_frame_files(directory):
    try:
        names = sorted(
            n for n in os.listdir(directory) if n.lower().endswith(_IMAGE_EXTS)
        )
    except FileNotFoundError:
        raise UsageError(f"unreadable input path: {directory}")
    except NotADirectoryError:
        raise UsageError(f"not a directory: {directory}")
    if not names:
        raise DataError(f"no image frames found in {directory}")
    return [os.path.join(directory, n) for n in names]


def load_frames(path, demux_template: str = DEMUX_TEMPLATE):
    """Load a clip from a frame directory or demux a video file."""
    if os.path.isdir(path):
        return [read_frame(p) for p in list_frame_files(path)]
    if not os.path.exists(path):
        raise UsageError(f"unreadable input path: {path}")
    outdir = tempfile.mkdtemp(prefix="efve_demux_")
    cmd = demux_template.format(input=shlex.quote(str(path)), outdir=shlex.quote(outdir))
    try:
        subprocess.run(cmd, shell=True, check=True, capture_output=True)
    except subprocess.CalledProcessError as exc:
        raise DataError(
            f"demuxer failed ({cmd!r}): {exc.stderr.decode(errors='replace')[:400]}"
        )
    except FileNotFoundError:
        raise DataError(f"demuxer not available for {path}")
    return [read_frame(p) for p in list_frame_files(outdir)]


def write_json(path, obj) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON-serializable: {type(o)}")

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=default)
