"""Q-value networks: transformer scene encoder, graph encoder, and head.

Three variants share one action-value interface (one 9-wide Q row per CAV):

* ``gitsr``          transformer over per-CAV grid rows, graph convolution
                     over the vehicle interaction graph, Q head on the
                     concatenation of both encodings;
* ``madqn_transformer``  transformer encoding only;
* ``madqn``          a plain MLP on each CAV's node features joined with its
                     flattened grid row.

Training forwards stack a whole batch into one graph: grid rows from all
transitions form a single token matrix with a block-diagonal additive
attention mask, and adjacency blocks are normalised per scene then placed on
a block diagonal, so cross-scene mixing is structurally impossible.

Parameters live in a :class:`ParamStore`; checkpoints are a JSON manifest
plus a little-endian float32 blob and round-trip bit-exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ramplab.autodiff import (
    Tensor,
    add,
    add_bias,
    add_const,
    concat_cols,
    layer_norm_rows,
    matmul,
    matmul_nt,
    no_grad,
    relu,
    scale,
    select_rows,
    slice_cols,
    softmax_rows,
)
from ramplab.config import ExperimentConfig, NetworkConfig
from ramplab.representation import StateSnapshot, feature_width, grid_width

MASKED_SCORE = -1e9
N_ACTIONS = 9


class TrainingError(RuntimeError):
    """Numerical failure (non-finite value) during training."""


class CheckpointError(RuntimeError):
    """Checkpoint missing, malformed, or incompatible with the architecture."""


class ParamStore:
    """Named learnable tensors, each with a gradient slot."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self.params[name] = tensor
        return tensor

    def items(self):
        return self.params.items()

    def zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def copy_from(self, other: "ParamStore") -> None:
        if self.params.keys() != other.params.keys():
            raise ValueError("parameter stores do not describe the same network")
        for name, tensor in self.params.items():
            tensor.data[...] = other.params[name].data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = sorted(self.params.keys() - arrays.keys())
        extra = sorted(arrays.keys() - self.params.keys())
        if missing or extra:
            raise CheckpointError(f"parameter name mismatch: missing {missing}, extra {extra}")
        for name, tensor in self.params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tensor.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)}, "
                    f"network {tensor.data.shape}"
                )
            tensor.data[...] = arr.astype(self.dtype)

    def check_finite_grads(self) -> None:
        for name, tensor in self.params.items():
            if tensor.grad is not None and not np.isfinite(tensor.grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class BlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    ln_g: Tensor
    ln_b: Tensor


@dataclass
class TransformerParams:
    embed_w: Tensor
    embed_b: Tensor
    blocks: list[BlockParams]


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def multi_head_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    n_heads: int,
    attn_mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention with heads as column slices of one
    projection, concatenated and mixed by ``wo``.  ``attn_mask`` is an
    additive score offset (0 to attend, a large negative to block)."""
    d_model = x.shape[1]
    if d_model % n_heads:
        raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
    d_head = d_model // n_heads
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    heads = []
    for i in range(n_heads):
        lo, hi = i * d_head, (i + 1) * d_head
        scores = scale(
            matmul_nt(slice_cols(q, lo, hi), slice_cols(k, lo, hi)),
            1.0 / math.sqrt(d_head),
        )
        if attn_mask is not None:
            scores = add_const(scores, attn_mask)
        heads.append(matmul(softmax_rows(scores), slice_cols(v, lo, hi)))
    return matmul(concat_cols(heads), wo)


def transformer_encode(
    sr: Tensor,
    params: TransformerParams,
    n_heads: int,
    attn_mask: np.ndarray | None = None,
) -> Tensor:
    """Embed grid rows and run the blocks: attention, a single residual, then
    a layer-normalised MLP; the last block's output is the encoding."""
    x = linear(sr, params.embed_w, params.embed_b)
    for blk in params.blocks:
        attended = multi_head_attention(x, blk.wq, blk.wk, blk.wv, blk.wo, n_heads, attn_mask)
        h = add(attended, x)
        m = linear(relu(linear(h, blk.mlp_w1, blk.mlp_b1)), blk.mlp_w2, blk.mlp_b2)
        x = layer_norm_rows(m, blk.ln_g, blk.ln_b)
    return x


def gcn_normalize(adjacency: np.ndarray) -> np.ndarray:
    """Symmetrically normalised adjacency with guaranteed self-loops."""
    n = adjacency.shape[0]
    a_tilde = np.minimum(adjacency + np.eye(n, dtype=adjacency.dtype), 1.0)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def gcn_forward(features: Tensor, e_norm: np.ndarray, weights: list[Tensor]) -> Tensor:
    """Stacked graph convolutions, ReLU after every layer including the last."""
    h = features
    mixer = Tensor(e_norm)
    for w in weights:
        h = relu(matmul(mixer, matmul(h, w)))
    return h


def q_head(
    x_l: Tensor,
    h_graph: Tensor | None,
    cav_rows: np.ndarray | None,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
) -> Tensor:
    """Per-CAV action values from the scene encoding, optionally joined with
    that CAV's row of the graph encoding."""
    if h_graph is not None:
        fused = concat_cols([x_l, select_rows(h_graph, cav_rows)])
    else:
        fused = x_l
    return linear(relu(linear(fused, w1, b1)), w2, b2)


_MASK_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def block_attention_mask(n_scenes: int, tokens_per_scene: int, dtype) -> np.ndarray | None:
    """Additive mask confining attention to its own scene's tokens."""
    if n_scenes == 1:
        return None
    key = (n_scenes, tokens_per_scene, np.dtype(dtype).name)
    mask = _MASK_CACHE.get(key)
    if mask is None:
        size = n_scenes * tokens_per_scene
        mask = np.full((size, size), MASKED_SCORE, dtype=dtype)
        for b in range(n_scenes):
            lo = b * tokens_per_scene
            mask[lo:lo + tokens_per_scene, lo:lo + tokens_per_scene] = 0.0
        _MASK_CACHE[key] = mask
    return mask


def block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size), dtype=blocks[0].dtype)
    lo = 0
    for b in blocks:
        hi = lo + b.shape[0]
        out[lo:hi, lo:hi] = b
        lo = hi
    return out


class QNetwork:
    """Common machinery: parameter store, stacking, checkpoint metadata."""

    variant = "base"

    def __init__(
        self,
        net_cfg: NetworkConfig,
        representation: str,
        input_width: int,
        feat_width: int,
        seed: int,
        dtype=np.float32,
    ):
        net_cfg.validate()
        self.net_cfg = net_cfg
        self.representation = representation
        self.input_width = input_width
        self.feat_width = feat_width
        self.seed = seed
        self.store = ParamStore(dtype)
        self._build(np.random.default_rng(seed))

    def _build(self, rng: np.random.Generator) -> None:  # pragma: no cover
        raise NotImplementedError

    # -- forward ---------------------------------------------------------

    def forward_batch(self, snaps: list[StateSnapshot]) -> Tensor:  # pragma: no cover
        """Q rows for every CAV of every snapshot, stacked scene-major."""
        raise NotImplementedError

    def forward(self, snap: StateSnapshot) -> Tensor:
        return self.forward_batch([snap])

    def q_values(self, snap: StateSnapshot) -> np.ndarray:
        """Inference-only Q table (m x 9) for one snapshot."""
        with no_grad():
            q = self.forward(snap).data
        if not np.isfinite(q).all():
            raise TrainingError("non-finite Q values in forward pass")
        return q

    # -- shared pieces ---------------------------------------------------

    def _init_qhead(self, rng: np.random.Generator, in_width: int) -> None:
        cfg = self.net_cfg
        self.q_w1 = self.store.add("qhead.w1", _glorot(rng, in_width, cfg.q_hidden))
        self.q_b1 = self.store.add("qhead.b1", np.zeros((1, cfg.q_hidden)))
        self.q_w2 = self.store.add("qhead.w2", _glorot(rng, cfg.q_hidden, N_ACTIONS))
        self.q_b2 = self.store.add("qhead.b2", np.zeros((1, N_ACTIONS)))

    def _init_transformer(self, rng: np.random.Generator) -> None:
        cfg = self.net_cfg
        d = cfg.d_model
        embed_w = self.store.add("embed.w", _glorot(rng, self.input_width, d))
        embed_b = self.store.add("embed.b", np.zeros((1, d)))
        blocks = []
        for i in range(cfg.n_blocks):
            p = f"block{i}."
            blocks.append(BlockParams(
                wq=self.store.add(p + "wq", _glorot(rng, d, d)),
                wk=self.store.add(p + "wk", _glorot(rng, d, d)),
                wv=self.store.add(p + "wv", _glorot(rng, d, d)),
                wo=self.store.add(p + "wo", _glorot(rng, d, d)),
                mlp_w1=self.store.add(p + "mlp.w1", _glorot(rng, d, cfg.mlp_hidden)),
                mlp_b1=self.store.add(p + "mlp.b1", np.zeros((1, cfg.mlp_hidden))),
                mlp_w2=self.store.add(p + "mlp.w2", _glorot(rng, cfg.mlp_hidden, d)),
                mlp_b2=self.store.add(p + "mlp.b2", np.zeros((1, d))),
                ln_g=self.store.add(p + "ln.g", np.ones((1, d))),
                ln_b=self.store.add(p + "ln.b", np.zeros((1, d))),
            ))
        self.transformer = TransformerParams(embed_w, embed_b, blocks)

    def _stacked_sr(self, snaps: list[StateSnapshot]) -> Tensor:
        return Tensor(np.vstack([s.sr for s in snaps]).astype(self.store.dtype, copy=False))

    # -- persistence -----------------------------------------------------

    def meta(self) -> dict:
        import dataclasses

        return {
            "variant": self.variant,
            "representation": self.representation,
            "input_width": self.input_width,
            "feature_width": self.feat_width,
            "network": dataclasses.asdict(self.net_cfg),
        }

    def clone(self) -> "QNetwork":
        twin = type(self)(
            self.net_cfg, self.representation, self.input_width, self.feat_width,
            self.seed, self.store.dtype,
        )
        twin.store.copy_from(self.store)
        return twin


class GitsrNetwork(QNetwork):
    variant = "gitsr"

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.net_cfg
        self._init_transformer(rng)
        dims = cfg.gcn_dims(self.feat_width)
        self.gcn_weights = [
            self.store.add(f"gcn.l{i}.w", _glorot(rng, dims[i], dims[i + 1]))
            for i in range(len(dims) - 1)
        ]
        self._init_qhead(rng, 2 * cfg.d_model)

    def forward_batch(self, snaps: list[StateSnapshot]) -> Tensor:
        dtype = self.store.dtype
        m = snaps[0].n_cavs
        mask = block_attention_mask(len(snaps), m, dtype)
        x = transformer_encode(self._stacked_sr(snaps), self.transformer,
                               self.net_cfg.n_heads, mask)
        feats = Tensor(np.vstack([s.features for s in snaps]).astype(dtype, copy=False))
        e_norm = block_diag([gcn_normalize(s.adjacency.astype(dtype)) for s in snaps])
        h = gcn_forward(feats, e_norm, self.gcn_weights)
        n = snaps[0].features.shape[0]
        cav_rows = np.concatenate([
            b * n + np.asarray(s.cav_ids, dtype=np.intp)
            for b, s in enumerate(snaps)
        ])
        return q_head(x, h, cav_rows, self.q_w1, self.q_b1, self.q_w2, self.q_b2)


class TransformerOnlyNetwork(QNetwork):
    variant = "madqn_transformer"

    def _build(self, rng: np.random.Generator) -> None:
        self._init_transformer(rng)
        self._init_qhead(rng, self.net_cfg.d_model)

    def forward_batch(self, snaps: list[StateSnapshot]) -> Tensor:
        mask = block_attention_mask(len(snaps), snaps[0].n_cavs, self.store.dtype)
        x = transformer_encode(self._stacked_sr(snaps), self.transformer,
                               self.net_cfg.n_heads, mask)
        return q_head(x, None, None, self.q_w1, self.q_b1, self.q_w2, self.q_b2)


class BaselineNetwork(QNetwork):
    """Per-CAV MLP on node features joined with the CAV's own grid row; no
    attention and no graph mixing, so rows never interact."""

    variant = "madqn"

    def _build(self, rng: np.random.Generator) -> None:
        self._init_qhead(rng, self.feat_width + self.input_width)

    def forward_batch(self, snaps: list[StateSnapshot]) -> Tensor:
        dtype = self.store.dtype
        rows = np.vstack([
            np.hstack([s.features[list(s.cav_ids)], s.sr]) for s in snaps
        ]).astype(dtype, copy=False)
        return q_head(Tensor(rows), None, None, self.q_w1, self.q_b1, self.q_w2, self.q_b2)


_VARIANTS = {
    cls.variant: cls for cls in (GitsrNetwork, TransformerOnlyNetwork, BaselineNetwork)
}


def build_network(cfg: ExperimentConfig, seed: int, dtype=np.float32) -> QNetwork:
    """Instantiate the configured variant, sized for the configured scenario."""
    try:
        cls = _VARIANTS[cfg.model_variant]
    except KeyError:
        raise ValueError(f"unknown model variant {cfg.model_variant!r}") from None
    return cls(
        cfg.network,
        cfg.representation,
        grid_width(cfg.scenario, cfg.representation),
        feature_width(cfg.scenario),
        seed,
        dtype,
    )


# -- checkpoints ---------------------------------------------------------

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


def save_checkpoint(directory: str | Path, net: QNetwork) -> None:
    """Write a manifest plus a little-endian float32 parameter blob."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, tensor in net.store.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(tensor.data.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": 1, "dtype": "<f4", "meta": net.meta(), "params": entries}
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    blob = (directory / BLOB_NAME).read_bytes()
    itemsize = np.dtype(manifest["dtype"]).itemsize
    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = entry["offset"]
        stop = start + count * itemsize
        if stop > len(blob):
            raise CheckpointError(f"checkpoint blob truncated at parameter {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            blob[start:stop], dtype=manifest["dtype"]
        ).reshape(shape)
    return manifest["meta"], arrays


def network_from_checkpoint(directory: str | Path, dtype=np.float32) -> QNetwork:
    """Rebuild the saved architecture and restore its parameters."""
    meta, arrays = load_checkpoint(directory)
    try:
        cls = _VARIANTS[meta["variant"]]
        net_cfg = NetworkConfig(**meta["network"])
        net = cls(net_cfg, meta["representation"], meta["input_width"],
                  meta["feature_width"], seed=0, dtype=dtype)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"unusable checkpoint metadata: {exc}") from exc
    net.store.load_arrays(arrays)
    return net
