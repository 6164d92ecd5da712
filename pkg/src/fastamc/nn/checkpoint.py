"""Trained-model checkpoint files (magic ``MODN``): network spec, parameters, layer state,
plus free-form metadata such as the preprocessing used at training time."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import binio
from ..dataset import atomic_write_bytes
from .network import Network, NetworkSpec

MAGIC = b"MODN"


def dumps(net: Network, metadata: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> bytes:
    header = {"spec": net.spec.to_dict(), "dtype": net.dtype.str, "metadata": metadata or {}}
    arrays = {f"param/{k}": v for k, v in net.named_params().items()}
    arrays.update({f"state/{k}": v for k, v in net.named_state().items()})
    arrays.update({f"extra/{k}": v for k, v in (extra or {}).items()})
    return binio.pack(MAGIC, header, arrays)


def loads(blob: bytes) -> tuple[Network, dict, dict[str, np.ndarray]]:
    header, arrays = binio.unpack(blob, MAGIC)
    net = Network(NetworkSpec.from_dict(header["spec"]), dtype=np.dtype(header["dtype"]))
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    state = {k[6:]: v for k, v in arrays.items() if k.startswith("state/")}
    extra = {k[6:]: v for k, v in arrays.items() if k.startswith("extra/")}
    missing = set(net.named_params()) - set(params)
    if missing:
        raise binio.ContainerError(f"checkpoint lacks parameters {sorted(missing)}")
    net.load_arrays(params, state)
    return net, header["metadata"], extra


def save(net: Network, path, metadata: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    atomic_write_bytes(path, dumps(net, metadata, extra))


def load(path) -> tuple[Network, dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
