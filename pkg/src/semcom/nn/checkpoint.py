"""Checkpoint container for one or more networks.

Format (documented, round-trips bit-exactly): a numpy ``.npz`` archive with

* ``__meta__``      JSON (as uint8 bytes): format version, per-network layer
                    spec lists and input shapes, compute dtype, optimizer
                    scalars, RNG state, and caller metadata.
* ``net:<n>:<p>``   each network state array stored as little-endian float64.
* ``opt:<name>``    optimizer slot arrays, little-endian float64.

float32 networks are widened to float64 on save and narrowed on load, which
is exact in both directions.
"""

import json
import os
import tempfile

import numpy as np

from .network import LayerSpec, Network, build_network

FORMAT_VERSION = 1


def rng_state_to_json(rng):
    """Serializable PCG64 state (large ints as strings)."""
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": {k: str(v) for k, v in st["state"].items()},
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def rng_from_json(d):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {k: int(v) for k, v in d["state"].items()},
        "has_uint32": int(d["has_uint32"]),
        "uinteger": int(d["uinteger"]),
    }
    return rng


def save_checkpoint(path, nets, optimizer=None, rng=None, meta=None):
    meta_doc = {
        "format_version": FORMAT_VERSION,
        "dtype": str(next(iter(nets.values())).dtype),
        "networks": {
            name: {"input_shape": list(net.input_shape),
                   "specs": net.spec_dicts()}
            for name, net in nets.items()
        },
        "optimizer": optimizer.scalars() if optimizer is not None else None,
        "rng_state": rng_state_to_json(rng) if rng is not None else None,
        "meta": meta or {},
    }
    arrays = {"__meta__": np.frombuffer(
        json.dumps(meta_doc, sort_keys=True).encode(), dtype=np.uint8)}
    for name, net in nets.items():
        for key, value in net.state_arrays().items():
            arrays[f"net:{name}:{key}"] = np.asarray(value, dtype="<f8")
    if optimizer is not None:
        for key, value in optimizer.state_arrays().items():
            arrays[f"opt:{key}"] = np.asarray(value, dtype="<f8")
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path))
                                        or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def load_checkpoint(path):
    """Rebuild networks from a checkpoint.

    Returns (nets, meta_doc, optimizer_arrays). Parameters are restored
    bit-exactly for the stored compute dtype.
    """
    with np.load(path) as archive:
        meta_doc = json.loads(bytes(archive["__meta__"]).decode())
        if meta_doc["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version "
                             f"{meta_doc['format_version']}")
        dtype = np.dtype(meta_doc["dtype"])
        nets = {}
        for name, desc in meta_doc["networks"].items():
            specs = [LayerSpec.from_dict(d) for d in desc["specs"]]
            net = build_network(specs, tuple(desc["input_shape"]), seed=0,
                                dtype=dtype, name=name)
            prefix = f"net:{name}:"
            arrays = {k[len(prefix):]: archive[k] for k in archive.files
                      if k.startswith(prefix)}
            net.load_state_arrays(arrays)
            nets[name] = net
        opt_arrays = {k[len("opt:"):]: archive[k].astype(dtype)
                      for k in archive.files if k.startswith("opt:")}
    return nets, meta_doc, opt_arrays
