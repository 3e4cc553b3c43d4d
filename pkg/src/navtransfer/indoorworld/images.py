"""Unpaired image datasets sampled from one domain (``JRTIMG v1`` banks)."""

import struct

import numpy as np

from ..errors import StateError
from .env import random_pose
from .house import canonical_domain, generate_house
from .render import IMG, render_batch

IMG_MAGIC = b"JRTIMG v1\n"


def training_houses(domain, n, seed):
    """Houses for image sampling, seeded independently of the evaluation splits."""
    rng = np.random.default_rng([seed % 2**63, 1013])
    return [generate_house(domain, int(s)) for s in rng.integers(0, 2**62, n)]


def sample_images(domain, n, seed, houses=None, batch=256):
    """Render ``n`` observations from uniformly sampled poses across ``houses``."""
    domain = canonical_domain(domain)
    if houses is None:
        houses = training_houses(domain, 24, seed)
    rng = np.random.default_rng([seed % 2**63, 2029])
    which = rng.integers(0, len(houses), n)
    poses = [random_pose(houses[k], rng).as_tuple() for k in which]
    out = np.empty((n, IMG, IMG, 3), dtype=np.float32)
    for s in range(0, n, batch):
        out[s:s + batch] = render_batch([houses[k] for k in which[s:s + batch]], poses[s:s + batch], domain)
    return out


def save_images(path, images):
    images = np.ascontiguousarray(images, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(IMG_MAGIC)
        fh.write(struct.pack("<I", images.shape[0]))
        fh.write(images.tobytes())


def load_images(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(IMG_MAGIC):
        raise StateError(f"{path}: not a JRTIMG v1 file")
    (count,) = struct.unpack_from("<I", blob, len(IMG_MAGIC))
    data = np.frombuffer(blob, dtype="<f4", offset=len(IMG_MAGIC) + 4, count=count * IMG * IMG * 3)
    return data.reshape(count, IMG, IMG, 3).astype(np.float32)
