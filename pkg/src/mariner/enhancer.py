"""Full enhancement model (encode, match, warp, decode, iterate) and the
checkpoint file format.

Checkpoint layout: magic ``MRNR1``, little-endian uint32 JSON header length,
JSON header (config, training step, rng seed, phase, tensor table with key /
dtype / shape), then raw tensor payloads in table order.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import matcher as matcher_mod
from .config import EnhancerConfig, config_to_dict, enhancer_config_from_dict
from .decoder import Decoder
from .encoder import Encoder

MAGIC = b"MRNR1"

_DTYPES = {"f4": np.float32, "f8": np.float64, "i8": np.int64}


class CheckpointFormatError(ValueError):
    """Raised for unreadable or incompatible checkpoint files."""


class Enhancer(nn.Module):
    """Encoder + matcher + decoder with shared weights across iterations."""

    def __init__(self, cfg: EnhancerConfig | None = None):
        super().__init__()
        self.cfg = cfg or EnhancerConfig()
        self.cfg.validate()
        self.encoder = Encoder(self.cfg.encoder)
        self.decoder = Decoder(self.cfg.encoder.channels_per_level[2], self.cfg.decoder)

    def _check_size(self, t: torch.Tensor, name: str):
        if t.shape[-1] % 4 or t.shape[-2] % 4:
            raise ValueError(
                f"{name} H and W must be divisible by 4, got "
                f"{t.shape[-2]}x{t.shape[-1]}; resize explicitly first"
            )

    def forward(
        self,
        rendering: torch.Tensor,
        reference: torch.Tensor,
        iterations: int | None = None,
    ) -> list[torch.Tensor]:
        """Both inputs (N, C, H, W) in [0, 1]; sizes may differ between the
        two. Returns the per-iteration outputs (unclamped in train mode,
        clamped to [0, 1] in eval mode)."""
        self._check_size(rendering, "rendering")
        self._check_size(reference, "reference")
        iters = iterations or self.cfg.iterations
        ref_pyr = self.encoder(reference)
        outputs = []
        current = rendering
        for _ in range(iters):
            _, _, f_i3 = self.encoder(current)
            warped_levels = ([], [], [])
            for n in range(current.shape[0]):
                mm = matcher_mod.match(f_i3[n], ref_pyr[2][n], self.cfg.matcher)
                w1, w2, w3 = matcher_mod.warp(
                    (ref_pyr[0][n], ref_pyr[1][n], ref_pyr[2][n]), mm
                )
                warped_levels[0].append(w1)
                warped_levels[1].append(w2)
                warped_levels[2].append(w3)
            warped = tuple(torch.stack(ws) for ws in warped_levels)
            out = self.decoder(f_i3, warped, clamp_output=not self.training)
            outputs.append(out)
            current = out
        return outputs


@dataclass
class Checkpoint:
    config: EnhancerConfig
    weights: dict  # str -> torch.Tensor, keys prefixed "model." / "disc." / "optim."
    training_step: int = 0
    rng_seed: int = 0
    phase: int = 1
    extra: dict = field(default_factory=dict)

    def build_model(self) -> Enhancer:
        model = Enhancer(self.config)
        state = {
            k[len("model."):]: v for k, v in self.weights.items() if k.startswith("model.")
        }
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointFormatError(
                f"checkpoint weights inconsistent with its config: {exc}"
            ) from exc
        model.eval()
        return model


def checkpoint_from_model(
    model: Enhancer, training_step: int = 0, rng_seed: int = 0, phase: int = 1,
    disc: nn.Module | None = None, optim_state: dict | None = None,
) -> Checkpoint:
    weights = {f"model.{k}": v.detach().clone() for k, v in model.state_dict().items()}
    if disc is not None:
        weights.update({f"disc.{k}": v.detach().clone() for k, v in disc.state_dict().items()})
    if optim_state:
        weights.update({f"optim.{k}": v.detach().clone() for k, v in optim_state.items()})
    return Checkpoint(
        config=model.cfg, weights=weights,
        training_step=training_step, rng_seed=rng_seed, phase=phase,
    )


def _dtype_code(arr: np.ndarray) -> str:
    for code, dt in _DTYPES.items():
        if arr.dtype == dt:
            return code
    raise CheckpointFormatError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(ckpt: Checkpoint, path):
    table = []
    payload = io.BytesIO()
    for key in sorted(ckpt.weights):
        arr = ckpt.weights[key].detach().cpu().numpy()
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float16:
            arr = arr.astype(np.float32)
        table.append({"key": key, "dtype": _dtype_code(arr), "shape": list(arr.shape)})
        payload.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    header = json.dumps({
        "config": config_to_dict(ckpt.config),
        "training_step": ckpt.training_step,
        "rng_seed": ckpt.rng_seed,
        "phase": ckpt.phase,
        "extra": ckpt.extra,
        "tensors": table,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            if magic[:4] == MAGIC[:4]:
                raise CheckpointFormatError(
                    f"checkpoint version {magic.decode('latin1')!r} is not supported "
                    f"by this build (supports {MAGIC.decode()!r})"
                )
            raise CheckpointFormatError(f"not a checkpoint file: bad magic {magic!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        weights = {}
        for entry in header["tensors"]:
            dtype = np.dtype(_DTYPES[entry["dtype"]]).newbyteorder("<")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise CheckpointFormatError("truncated checkpoint payload")
            arr = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"])
            weights[entry["key"]] = torch.from_numpy(
                arr.astype(arr.dtype.newbyteorder("=")).copy()
            )
    cfg = enhancer_config_from_dict(header["config"])
    ckpt = Checkpoint(
        config=cfg, weights=weights,
        training_step=header["training_step"], rng_seed=header["rng_seed"],
        phase=header.get("phase", 1), extra=header.get("extra", {}),
    )
    ckpt.build_model()  # validates config/weight consistency
    return ckpt


def _to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0).to(dtype)


def _to_image(t: torch.Tensor) -> np.ndarray:
    return t.squeeze(0).permute(1, 2, 0).detach().cpu().numpy().astype(np.float32)


def enhance_intermediate(
    rendering: np.ndarray, reference: np.ndarray, ckpt: Checkpoint | Enhancer
) -> list[np.ndarray]:
    """Run all refinement iterations; returns one image per iteration."""
    model = ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt
    model.eval()
    if max(rendering.shape[0], rendering.shape[1]) > 320:
        import warnings

        warnings.warn(
            "input larger than ~320 px; consider downscaling, enhancing, then "
            "super-resolving the result", stacklevel=2
        )
    with torch.no_grad():
        outs = model(_to_tensor(rendering), _to_tensor(reference))
    return [np.clip(_to_image(o), 0.0, 1.0) for o in outs]


def enhance(rendering, reference, ckpt) -> np.ndarray:
    return enhance_intermediate(rendering, reference, ckpt)[-1]
