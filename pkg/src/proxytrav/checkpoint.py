"""Binary checkpoint container for model, bank and run metadata.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(sorted keys), then the raw tensor bytes in header order (C-order,
little-endian).  The format is deliberately timestamp-free so identical
runs produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .encoder import EncoderModel
from .errors import DataError
from .proxybank import ProxyBank

_MAGIC = b"PXTRAV01"
_DTYPES = {"float64": "<f8", "int64": "<i8"}


def save_checkpoint(
    path: str | Path,
    model: EncoderModel,
    bank: ProxyBank,
    meta: dict[str, Any],
) -> None:
    """Serialize model parameters, proxies, membership counters and meta.

    ``meta`` must be JSON-serializable; the model dims, k_enc and the
    bank temperature are stored alongside it automatically.
    """
    tensors: list[tuple[str, np.ndarray]] = [
        (f"param/{k}", np.ascontiguousarray(v, dtype=np.float64))
        for k, v in sorted(model.params.items())
    ]
    tensors.append(("bank/proxies", np.ascontiguousarray(bank.proxies, dtype=np.float64)))
    tensors.append(("bank/membership", np.ascontiguousarray(bank.membership, dtype=np.int64)))
    header = {
        "meta": dict(meta),
        "model": {
            "embed_dim": model.embed_dim,
            "hidden_dim": model.hidden_dim,
            "k_enc": model.k_enc,
        },
        "bank": {"temperature": bank.temperature, "n_proxies": bank.n_proxies},
        "tensors": [
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
            for name, arr in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.astype(_DTYPES[str(arr.dtype)], copy=False).tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[EncoderModel, ProxyBank, dict[str, Any]]:
    """Inverse of save_checkpoint; round trips are bit-exact."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(_MAGIC))
    start = len(_MAGIC) + 4
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    offset = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"{path}: unsupported tensor dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(entry["dtype"])
        offset += nbytes
    mi = header["model"]
    params = {
        name[len("param/"):]: arr
        for name, arr in arrays.items()
        if name.startswith("param/")
    }
    model = EncoderModel(
        params=params,
        embed_dim=int(mi["embed_dim"]),
        hidden_dim=int(mi["hidden_dim"]),
        k_enc=int(mi["k_enc"]),
    )
    bank = ProxyBank(
        proxies=arrays["bank/proxies"],
        membership=arrays["bank/membership"],
        temperature=float(header["bank"]["temperature"]),
    )
    return model, bank, header["meta"]
