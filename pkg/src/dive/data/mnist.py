"""MNIST glyph source.

Glyphs come from the canonical IDX files when they are present under the data
root (``$DIVE_DATA_DIR`` or ``~/.cache/dive``), or can be fetched with
:func:`download_mnist`. Without them we fall back to the 5,000-digit MNIST
subset bundled with ``mlxtend`` (400 train / 100 test glyphs per class).
"""
from __future__ import annotations

import functools
import gzip
import hashlib
import logging
import os
import shutil
import urllib.request
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)

# md5 of the gzipped IDX files
FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


def data_root() -> Path:
    return Path(os.environ.get("DIVE_DATA_DIR", Path.home() / ".cache" / "dive"))


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def download_mnist(root: Path | None = None, timeout: float = 30.0) -> Path:
    """Fetch the four IDX archives into ``root/mnist`` and verify checksums."""
    target = Path(root or data_root()) / "mnist"
    target.mkdir(parents=True, exist_ok=True)
    for name, md5 in FILES.items():
        path = target / name
        if path.exists() and _md5(path) == md5:
            continue
        last_err = None
        for mirror in MIRRORS:
            tmp = path.with_suffix(".part")
            try:
                with urllib.request.urlopen(mirror + name, timeout=timeout) as r, open(tmp, "wb") as fh:
                    shutil.copyfileobj(r, fh)
            except OSError as err:
                last_err = err
                continue
            if _md5(tmp) != md5:
                tmp.unlink()
                last_err = IOError(f"checksum mismatch for {name} from {mirror}")
                continue
            tmp.replace(path)
            break
        else:
            raise IOError(f"could not download {name}: {last_err}")
    return target


def read_idx(path: Path) -> np.ndarray:
    """Parse an (optionally gzipped) IDX file into a numpy array."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: bad IDX magic")
    dtype = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}[raw[2]]
    ndim = raw[3]
    shape = tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    return np.frombuffer(raw, dtype=dtype, offset=4 + 4 * ndim).reshape(shape)


def _find_idx(split: str, root: Path) -> tuple[Path, Path] | None:
    prefix = _SPLIT_PREFIX[split]
    for folder in (root / "mnist", root):
        for ext in (".gz", ""):
            img = folder / f"{prefix}-images-idx3-ubyte{ext}"
            lab = folder / f"{prefix}-labels-idx1-ubyte{ext}"
            if img.exists() and lab.exists():
                return img, lab
    return None


def _bundled(split: str) -> tuple[np.ndarray, np.ndarray]:
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    X = X.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.int64)
    idx = []
    for digit in range(10):
        members = np.flatnonzero(y == digit)
        cut = int(round(len(members) * 0.8))
        idx.append(members[:cut] if split == "train" else members[cut:])
    idx = np.concatenate(idx)
    return X[idx], y[idx]


@functools.lru_cache(maxsize=4)
def load_glyphs(split: str = "train", root: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(images uint8 [n, 28, 28], labels int64 [n])`` for a split."""
    if split not in _SPLIT_PREFIX:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    found = _find_idx(split, Path(root) if root else data_root())
    if found is not None:
        images, labels = read_idx(found[0]), read_idx(found[1])
        return np.ascontiguousarray(images), labels.astype(np.int64)
    log.info("MNIST IDX files not found; using bundled 5k subset (%s split)", split)
    return _bundled(split)


def glyph_source_name(root: str | None = None) -> str:
    """Identifies which glyph set :func:`load_glyphs` resolves to."""
    return "idx" if _find_idx("train", Path(root) if root else data_root()) else "mlxtend-5k"
