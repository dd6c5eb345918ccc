"""The detection network: ``k`` conv/batchnorm/relu/dropout/maxpool blocks followed
by parallel localization and classification heads over the anchor grid.

Checkpoint layout: a JSON manifest (``format: dosed-checkpoint``) holding the
model/grid config, seed, optimizer hyperparameters and a ``tensors`` table
``[{"name", "shape", "offset"}]``; plus a blob ``<stem>.bin`` of little-endian
float64 values concatenated in table order. The order is fixed by
:meth:`DosedNet.named_arrays`: for each block ``conv.weight, conv.bias,
bn.scale, bn.shift, bn.running_mean, bn.running_var``; then
``loc.weight, loc.bias, cls.weight, cls.bias``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .grid import DefaultEventGrid, GridConfig, build_grid
from .nn import Tensor, functional as F, parameter

CHECKPOINT_FORMAT = "dosed-checkpoint"
_LE_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class ModelConfig:
    channels_in: int = 6
    input_len: int = 720
    k_blocks: int = 6
    grid: GridConfig = field(default_factory=GridConfig)
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.channels_in < 1:
            raise ConfigError("channels_in must be >= 1")
        if self.k_blocks < 1:
            raise ConfigError("k_blocks must be >= 1")
        if self.input_len < 2**self.k_blocks:
            raise ConfigError(
                f"input_len {self.input_len} too short for {self.k_blocks} poolings (needs >= {2 ** self.k_blocks})"
            )
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must lie in [0, 1)")

    def lengths(self) -> list[int]:
        out, n = [], self.input_len
        for _ in range(self.k_blocks):
            n //= 2
            out.append(n)
        return out

    def widths(self) -> list[int]:
        return [4 * 2**b for b in range(1, self.k_blocks + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"]["default_sizes_s"] = list(self.grid.default_sizes_s)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        g = dict(d.pop("grid", {}))
        if "default_sizes_s" in g:
            g["default_sizes_s"] = tuple(float(s) for s in g["default_sizes_s"])
        return cls(grid=GridConfig(**g), **d)


@dataclass
class ModelOutput:
    class_probs: np.ndarray  # [B, N_d, 2]
    offsets: np.ndarray  # [B, N_d, 2]

    @property
    def event_probs(self) -> np.ndarray:
        return self.class_probs[..., 1]


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DosedNet:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.grid: DefaultEventGrid = build_grid(cfg.grid)
        self.n_anchors = len(self.grid)
        rng = np.random.default_rng(seed)
        self.blocks = []
        cin = cfg.channels_in
        for cout in cfg.widths():
            self.blocks.append(
                {
                    "conv.weight": parameter(_kaiming_uniform(rng, (cout, cin, 3))),
                    "conv.bias": parameter(np.zeros(cout)),
                    "bn.scale": parameter(np.ones(cout)),
                    "bn.shift": parameter(np.zeros(cout)),
                    "bn.running_mean": np.zeros(cout),
                    "bn.running_var": np.ones(cout),
                }
            )
            cin = cout
        lk = cfg.lengths()[-1]
        self.final_len = lk
        self.loc_w = parameter(_kaiming_uniform(rng, (2 * self.n_anchors, cin, lk)))
        self.loc_b = parameter(np.zeros(2 * self.n_anchors))
        self.cls_w = parameter(_kaiming_uniform(rng, (2 * self.n_anchors, cin, lk)))
        self.cls_b = parameter(np.zeros(2 * self.n_anchors))

    # ------------------------------------------------------------ parameters

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every parameter and buffer in checkpoint order."""
        out = []
        for i, blk in enumerate(self.blocks):
            for key in ("conv.weight", "conv.bias", "bn.scale", "bn.shift", "bn.running_mean", "bn.running_var"):
                v = blk[key]
                out.append((f"block{i + 1}.{key}", v.data if isinstance(v, Tensor) else v))
        out += [("loc.weight", self.loc_w.data), ("loc.bias", self.loc_b.data)]
        out += [("cls.weight", self.cls_w.data), ("cls.bias", self.cls_b.data)]
        return out

    def parameters(self) -> list[Tensor]:
        ps = []
        for blk in self.blocks:
            ps += [blk["conv.weight"], blk["conv.bias"], blk["bn.scale"], blk["bn.shift"]]
        return ps + [self.loc_w, self.loc_b, self.cls_w, self.cls_b]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_copy(self) -> list[np.ndarray]:
        return [a.copy() for _, a in self.named_arrays()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        for (name, dst), src in zip(self.named_arrays(), arrays, strict=True):
            if dst.shape != src.shape:
                raise ShapeError(f"{name}: shape {src.shape} != {dst.shape}")
            dst[...] = src

    # --------------------------------------------------------------- forward

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Return ``(class_logits, offsets)``, each ``[B, N_d, 2]``."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 3 or x.shape[1:] != (self.cfg.channels_in, self.cfg.input_len):
            raise ShapeError(
                f"expected input [B, {self.cfg.channels_in}, {self.cfg.input_len}], got {x.shape}"
            )
        h = x
        for blk in self.blocks:
            h = F.conv1d(h, blk["conv.weight"], blk["conv.bias"], stride=1, padding=1)
            h = F.batchnorm1d(
                h, blk["bn.scale"], blk["bn.shift"], blk["bn.running_mean"], blk["bn.running_var"], training
            )
            h = F.relu(h)
            h = F.dropout(h, self.cfg.dropout_p, training, rng)
            h, _ = F.maxpool1d(h)
        b = x.shape[0]
        loc = F.reshape(F.conv1d(h, self.loc_w, self.loc_b), (b, self.n_anchors, 2))
        cls = F.reshape(F.conv1d(h, self.cls_w, self.cls_b), (b, self.n_anchors, 2))
        return cls, loc

    def temporal_chain(self, x) -> list[tuple[int, int]]:
        """(channels, length) after each block, evaluated on a real forward pass."""
        h = Tensor(np.asarray(x, dtype=np.float64))
        shapes = []
        for blk in self.blocks:
            h = F.conv1d(h, blk["conv.weight"], blk["conv.bias"], stride=1, padding=1)
            h = F.batchnorm1d(h, blk["bn.scale"], blk["bn.shift"], blk["bn.running_mean"].copy(),
                              blk["bn.running_var"].copy(), False)
            h, _ = F.maxpool1d(F.relu(h))
            shapes.append(h.shape[1:])
        return shapes

    def predict(self, x, batch_size: int = 256) -> ModelOutput:
        """Eval-mode forward returning softmax probabilities and raw offsets."""
        x = np.asarray(x, dtype=np.float64)
        probs, offs = [], []
        for i in range(0, len(x), batch_size):
            cls, loc = self.forward(x[i : i + batch_size], training=False)
            probs.append(F.softmax(cls, axis=-1).data)
            offs.append(loc.data)
        if not probs:
            empty = np.zeros((0, self.n_anchors, 2))
            return ModelOutput(empty, empty.copy())
        return ModelOutput(np.concatenate(probs), np.concatenate(offs))


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> DosedNet:
    return DosedNet(cfg, seed)


# -------------------------------------------------------------- checkpoint


def save_checkpoint(model: DosedNet, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    blob = path.with_suffix(".bin")
    table, offset, chunks = [], 0, []
    for name, arr in model.named_arrays():
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(np.ascontiguousarray(arr, dtype=_LE_F64).ravel())
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "model_config": model.cfg.to_dict(),
        "seed": model.seed,
        "n_values": offset,
        "blob": blob.name,
        "tensors": table,
    }
    doc.update(extra or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    blob.write_bytes(np.concatenate(chunks).astype(_LE_F64).tobytes())
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> tuple[DosedNet, dict]:
    """Return the model and the full manifest dict."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: not a checkpoint")
        cfg = ModelConfig.from_dict(doc["model_config"])
        model = DosedNet(cfg, int(doc.get("seed", 0)))
        values = np.fromfile(path.parent / doc["blob"], dtype=_LE_F64)
        table = doc["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc!r})") from None
    if values.size != doc.get("n_values", values.size):
        raise FormatError(f"{path}: blob holds {values.size} values, manifest promises {doc['n_values']}")
    expected = model.named_arrays()
    if [t["name"] for t in table] != [n for n, _ in expected]:
        raise FormatError(f"{path}: tensor table does not match model layout")
    arrays = []
    for t in table:
        n = int(np.prod(t["shape"]))
        arrays.append(values[t["offset"] : t["offset"] + n].reshape(t["shape"]))
    model.load_state(arrays)
    return model, doc
