"""Checkpoint container: a zip of ``.npy`` arrays plus ``manifest.json``.

Entries are written in sorted order with a fixed timestamp, so saving the
same state twice gives byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .decoder import BUNDLE_LAYOUT_VERSION

FORMAT_VERSION = 1
_EPOCH_ZERO = (1980, 1, 1, 0, 0, 0)


class CheckpointMismatch(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    manifest: dict
    optim: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: torch.nn.Module, manifest: dict, optimizer: torch.optim.Optimizer | None = None):
        params = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        optim = {}
        if optimizer is not None:
            names = {id(p): n for n, p in model.named_parameters()}
            for group in optimizer.param_groups:
                for p in group["params"]:
                    buf = optimizer.state.get(p, {}).get("momentum_buffer")
                    if buf is not None:
                        optim[names[id(p)]] = buf.detach().cpu().numpy().copy()
        man = {"format_version": FORMAT_VERSION, "bundle_layout_version": BUNDLE_LAYOUT_VERSION, **manifest}
        return cls(params, man, optim)

    def load_into(self, model: torch.nn.Module, optimizer: torch.optim.Optimizer | None = None):
        ref = model.state_dict()
        state = {k: torch.from_numpy(np.array(v)).to(ref[k].dtype) if k in ref else torch.from_numpy(np.array(v))
                 for k, v in self.params.items()}
        model.load_state_dict(state)
        if optimizer is not None and self.optim:
            named = dict(model.named_parameters())
            for name, buf in self.optim.items():
                p = named[name]
                optimizer.state[p]["momentum_buffer"] = torch.from_numpy(np.array(buf)).to(p.dtype)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            _write(zf, "manifest.json", json.dumps(self.manifest, sort_keys=True, indent=1).encode())
            for prefix, arrays in (("params", self.params), ("optim", self.optim)):
                for name in sorted(arrays):
                    buf = io.BytesIO()
                    np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                    _write(zf, f"{prefix}/{name}.npy", buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, optim = {}, {}
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            for info in zf.infolist():
                for prefix, target in (("params/", params), ("optim/", optim)):
                    if info.filename.startswith(prefix):
                        arr = np.lib.format.read_array(io.BytesIO(zf.read(info)), allow_pickle=False)
                        target[info.filename[len(prefix):-len(".npy")]] = arr
        return cls(params, manifest, optim)

    def payload_bytes(self) -> bytes:
        """Concatenated raw parameter bytes in name order."""
        return b"".join(np.ascontiguousarray(self.params[k]).tobytes() for k in sorted(self.params))

    def validate(self, model_hash: str | None = None):
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatch(f"checkpoint format {self.manifest.get('format_version')} != {FORMAT_VERSION}")
        if self.manifest.get("bundle_layout_version") != BUNDLE_LAYOUT_VERSION:
            raise CheckpointMismatch(
                f"decoder bundle layout {self.manifest.get('bundle_layout_version')} != {BUNDLE_LAYOUT_VERSION}")
        if model_hash is not None and self.manifest.get("model_hash") != model_hash:
            raise CheckpointMismatch(
                f"checkpoint was trained with model config {self.manifest.get('model_hash')}, "
                f"loading config is {model_hash}")


def _write(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH_ZERO)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)
