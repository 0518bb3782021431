"""Versioned checkpoint container: a zip holding a JSON header plus named
float arrays. Torch modules, Adam state, and RNG states round-trip through
plain numpy arrays so checkpoints stay framework-agnostic on disk.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

FORMAT_VERSION = 1


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.asarray(arr))
            zf.writestr(f"arrays/{name}.npy", buf.getvalue())


def load_checkpoint(path):
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
        arrays = {}
        for info in zf.infolist():
            if info.filename.startswith("arrays/") and info.filename.endswith(".npy"):
                name = info.filename[len("arrays/") : -len(".npy")]
                arrays[name] = np.load(io.BytesIO(zf.read(info)))
    return header, arrays


# ---------------------------------------------------------------------------
# torch bridges


def module_to_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def module_from_arrays(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    state = {}
    want = module.state_dict()
    for k, ref in want.items():
        arr = arrays[f"{prefix}.{k}"]
        state[k] = torch.from_numpy(np.asarray(arr)).to(ref.dtype)
    module.load_state_dict(state)


def optimizer_to_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                out[f"{prefix}.{idx}.{key}"] = val.detach().cpu().numpy()
            else:
                out[f"{prefix}.{idx}.{key}"] = np.asarray(val)
    return out


def optimizer_from_arrays(opt: torch.optim.Optimizer, arrays: dict, prefix: str) -> None:
    sd = opt.state_dict()
    state: dict = {}
    plen = len(prefix) + 1
    for name, arr in arrays.items():
        if not name.startswith(prefix + "."):
            continue
        idx_str, key = name[plen:].split(".", 1)
        entry = state.setdefault(int(idx_str), {})
        tensor = torch.from_numpy(np.asarray(arr))
        entry[key] = tensor
    sd["state"] = state
    opt.load_state_dict(sd)


def rng_state_arrays(np_rng: np.random.Generator) -> tuple[dict, dict]:
    """Capture torch + numpy RNG state as (header-json, arrays)."""
    header = {"numpy_rng": json.loads(json.dumps(np_rng.bit_generator.state))}
    arrays = {"rng.torch": torch.get_rng_state().numpy()}
    return header, arrays


def restore_rng_state(header: dict, arrays: dict, np_rng: np.random.Generator) -> None:
    np_rng.bit_generator.state = header["numpy_rng"]
    torch.set_rng_state(torch.from_numpy(np.asarray(arrays["rng.torch"])))
