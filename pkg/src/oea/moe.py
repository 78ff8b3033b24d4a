"""A small SwiGLU mixture-of-experts layer for measuring how rerouting
changes layer outputs.

Weights may be stored in any float dtype; expert outputs are mixed in
float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from oea.routing import RoutingPlan, ScoreMatrix

LAYER_FORMAT_VERSION = 1


class InvalidPlanError(ValueError):
    pass


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def l1_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if (x < 0).any():
        raise ValueError("l1_normalize expects nonnegative inputs")
    total = x.sum(axis=axis, keepdims=True)
    if (total <= 0).any():
        raise ValueError("cannot normalize an all-zero row")
    return x / total


def silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class ExpertParams:
    w_gate: np.ndarray  # (D, H)
    w_up: np.ndarray  # (D, H)
    w_down: np.ndarray  # (H, D)

    def __post_init__(self) -> None:
        d, h = self.w_gate.shape
        if self.w_up.shape != (d, h) or self.w_down.shape != (h, d):
            raise ValueError(
                f"inconsistent expert shapes {self.w_gate.shape}, {self.w_up.shape}, {self.w_down.shape}"
            )
        for w in (self.w_gate, self.w_up, self.w_down):
            if not np.isfinite(w).all():
                raise ValueError("expert weights must be finite")


@dataclass(frozen=True)
class MoeLayerParams:
    router: np.ndarray  # (D, N)
    experts: tuple[ExpertParams, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "experts", tuple(self.experts))
        if self.router.ndim != 2 or self.router.shape[1] != len(self.experts):
            raise ValueError("router must be (D, N) with one column per expert")
        d = self.router.shape[0]
        hs = {e.w_gate.shape for e in self.experts}
        if len(hs) != 1 or next(iter(hs))[0] != d:
            raise ValueError("experts must share shape (D, H) matching the router")

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(D, H, N)``."""
        d, n = self.router.shape
        return d, self.experts[0].w_gate.shape[1], n


def init_layer(d: int = 64, h: int = 96, n: int = 16, seed: int = 0,
               dtype: np.dtype | type = np.float64) -> MoeLayerParams:
    """Random layer: router entries ~ N(0, 1/D), input projections ~ N(0, 1/D),
    output projection ~ N(0, 1/H)."""
    rng = np.random.default_rng(seed)
    router = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, n)).astype(dtype)
    experts = tuple(
        ExpertParams(
            w_gate=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, h)).astype(dtype),
            w_up=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, h)).astype(dtype),
            w_down=rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, d)).astype(dtype),
        )
        for _ in range(n)
    )
    return MoeLayerParams(router=router, experts=experts)


def _check_batch(layer: MoeLayerParams, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.router.shape[0]:
        raise ValueError(f"batch shape {x.shape} does not match embedding size {layer.router.shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError("embeddings must be finite")
    return x


def router_scores(layer: MoeLayerParams, batch: np.ndarray) -> ScoreMatrix:
    """Softmax over all N router logits for each token."""
    x = _check_batch(layer, batch)
    return ScoreMatrix(softmax(x @ layer.router.astype(np.float64)))


def expert_forward(expert: ExpertParams, x: np.ndarray) -> np.ndarray:
    """SwiGLU feedforward: ``w_down(silu(x w_gate) * (x w_up))``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != expert.w_gate.shape[0]:
        raise ValueError(f"input size {x.shape[-1]} != expert input size {expert.w_gate.shape[0]}")
    gate = x @ expert.w_gate.astype(np.float64)
    up = x @ expert.w_up.astype(np.float64)
    return (silu(gate) * up) @ expert.w_down.astype(np.float64)


def moe_forward(layer: MoeLayerParams, batch: np.ndarray, plan: RoutingPlan,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Mix expert outputs per token with the plan's weights.

    Experts are accumulated in the plan's order (descending router score).
    Rows for masked tokens are zero.
    """
    x = _check_batch(layer, batch)
    b, d = x.shape
    if plan.batch_size != b or plan.n_experts != len(layer.experts):
        raise InvalidPlanError("plan does not match batch/layer shape")
    real = np.ones(b, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = np.zeros((b, d))
    for i in range(b):
        experts, weights = plan.sets[i], plan.weights[i]
        if not real[i]:
            continue
        if len(experts) == 0:
            raise InvalidPlanError(f"token {i} has no experts")
        for e, w in zip(experts.tolist(), weights.tolist()):
            out[i] += w * expert_forward(layer.experts[e], x[i])
    return out


def dense_forward(layer: MoeLayerParams, batch: np.ndarray) -> np.ndarray:
    """All-expert mixture weighted by raw router scores."""
    x = _check_batch(layer, batch)
    scores = router_scores(layer, x).values
    out = np.zeros_like(x)
    for e, expert in enumerate(layer.experts):
        out += scores[:, e:e + 1] * expert_forward(expert, x)
    return out


def output_divergence(ref: np.ndarray, test: np.ndarray, eps: float = 1e-12) -> tuple[float, float]:
    """Mean and max over tokens of ``||ref - test|| / max(||ref||, eps)``."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    num = np.linalg.norm(ref - test, axis=-1)
    den = np.maximum(np.linalg.norm(ref, axis=-1), eps)
    rel = num / den
    return float(rel.mean()), float(rel.max())


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "dtype": str(a.dtype), "data": a.reshape(-1).tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=d.get("dtype", "float64")).reshape(d["shape"])


def save_layer(layer: MoeLayerParams, path: str | Path) -> None:
    """JSON: version, dims, router and per-expert matrices as
    ``{"shape", "dtype", "data"}`` with row-major data."""
    d, h, n = layer.dims
    doc = {
        "version": LAYER_FORMAT_VERSION,
        "dims": {"D": d, "H": h, "N": n},
        "router": _pack(layer.router),
        "experts": [
            {"w_gate": _pack(e.w_gate), "w_up": _pack(e.w_up), "w_down": _pack(e.w_down)}
            for e in layer.experts
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_layer(path: str | Path) -> MoeLayerParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != LAYER_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported layer format version {doc.get('version')!r}")
    experts = tuple(
        ExpertParams(_unpack(e["w_gate"]), _unpack(e["w_up"]), _unpack(e["w_down"]))
        for e in doc["experts"]
    )
    layer = MoeLayerParams(router=_unpack(doc["router"]), experts=experts)
    dims = doc["dims"]
    if layer.dims != (dims["D"], dims["H"], dims["N"]):
        raise ValueError(f"{path}: dims header disagrees with matrix shapes")
    return layer
