"""Toy denoising networks, a DDIM sampler, and the binary trace format."""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .flow import CODE_KINDS, LayerGraph, LayerNode, NodeKind, NonLinearKind
from .qtensor import LayerDesc, linear_float, output_dims

MAX_PARAMS = 2**20

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """``n`` outputs of the splitmix64 generator starting at position ``offset``."""
    with np.errstate(over="ignore"):
        k = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.pos = 0

    def bits(self, n: int) -> np.ndarray:
        out = splitmix64(self.seed, n, self.pos)
        self.pos += n
        return out

    def uniform(self, shape, lo=-0.5, hi=0.5) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform((m,), 0.0, 1.0)
        u2 = self.uniform((m,), 0.0, 1.0)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)


# --------------------------------------------------------------------------
# Model specs and graph construction
# --------------------------------------------------------------------------

class SpecError(ValueError):
    pass


class SamplerError(RuntimeError):
    pass


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "toy-unet"
    channels: int = 8
    depth: int = 2
    heads: int = 1
    spatial: int = 8
    in_channels: int = 4
    context_tokens: int = 8
    seed: int = 0

    @classmethod
    def default(cls, kind: str, **kw) -> "ModelSpec":
        if kind == "toy-unet":
            base = dict(kind=kind, channels=8, depth=2, heads=1, spatial=8, in_channels=4)
        elif kind == "toy-dit":
            base = dict(kind=kind, channels=32, depth=2, heads=2, spatial=16, in_channels=8,
                        context_tokens=8)
        else:
            raise SpecError(f"unknown model kind {kind!r}")
        base.update(kw)
        return cls(**base)

    def validate(self):
        if self.kind not in ("toy-unet", "toy-dit"):
            raise SpecError(f"unknown model kind {self.kind!r}")
        for f in ("channels", "depth", "heads", "spatial", "in_channels", "context_tokens"):
            if getattr(self, f) < 1:
                raise SpecError(f"{f} must be >= 1")
        if self.channels % self.heads:
            raise SpecError("channels must be divisible by heads")


class _Builder:
    def __init__(self, seed: int):
        self.rng = Rng(seed)
        self.nodes: list[LayerNode] = []
        self.params = 0

    def _add(self, kind, inputs=(), dims=(), **kw) -> int:
        n = LayerNode(id=len(self.nodes), kind=kind, inputs=tuple(inputs), dims=tuple(dims), **kw)
        self.nodes.append(n)
        return n.id

    def dims(self, i) -> tuple:
        return self.nodes[i].dims

    def input(self, dims, name, value=None) -> int:
        params = {"const": value is not None}
        return self._add(NodeKind.INPUT, (), dims, name=name, params=params,
                         weight=None if value is None else value.astype(np.float32))

    def _weight(self, shape, fan_in) -> np.ndarray:
        self.params += int(np.prod(shape))
        w = self.rng.uniform(shape) / math.sqrt(fan_in)
        return w.astype(np.float32)

    def conv(self, x, cout, k=3, stride=1, name="") -> int:
        cin = self.dims(x)[0]
        w = self._weight((cout, cin, k, k), cin * k * k)
        params = {"stride": stride, "padding": k // 2}
        d = output_dims(self.dims(x), w.shape, LayerDesc("conv2d", stride=stride, padding=k // 2))
        return self._add(NodeKind.CONV, (x,), d, weight=w, params=params, name=name)

    def fc(self, x, n, chw_in=False, chw_out=False, hw=None, name="") -> int:
        xd = self.dims(x)
        k = xd[0] if chw_in else xd[-1]
        w = self._weight((k, n), k)
        params = {"chw_in": chw_in, "chw_out": chw_out}
        if hw is not None:
            params["hw"] = list(hw)
        node = LayerNode(-1, NodeKind.FC, params=params)
        d = output_dims(xd, w.shape, node.desc())
        return self._add(NodeKind.FC, (x,), d, weight=w, params=params, name=name)

    def attn_score(self, q, k, heads, name="") -> int:
        d = output_dims(self.dims(q), self.dims(k), LayerDesc("attn_score", heads=heads))
        return self._add(NodeKind.ATTN_SCORE, (q, k), d, params={"heads": heads}, name=name)

    def attn_context(self, p, v, heads, name="") -> int:
        d = output_dims(self.dims(p), self.dims(v), LayerDesc("attn_context", heads=heads))
        return self._add(NodeKind.ATTN_CONTEXT, (p, v), d, params={"heads": heads}, name=name)

    def nl(self, sub: NonLinearKind, x, name="", **params) -> int:
        return self._add(NodeKind.NONLINEAR, (x,), self.dims(x), sub=sub, params=params, name=name)

    def add(self, *xs, name="") -> int:
        return self._add(NodeKind.ADD, xs, self.dims(xs[0]), name=name)

    def concat(self, *xs, axis=0, name="") -> int:
        d = list(self.dims(xs[0]))
        d[axis] = sum(self.dims(x)[axis] for x in xs)
        return self._add(NodeKind.CONCAT, xs, d, params={"axis": axis}, name=name)


def _build_unet(spec: ModelSpec, b: _Builder) -> int:
    C, S = spec.channels, spec.spatial
    groups = 2 if C % 2 == 0 else 1
    x = b.input((spec.in_channels, S, S), "x")
    h0 = b.conv(x, C, name="conv_in")
    h = h0
    for i in range(spec.depth):
        g1 = b.nl(NonLinearKind.GROUPNORM, h, groups=groups, name=f"b{i}.gn1")
        s1 = b.nl(NonLinearKind.SILU, g1, name=f"b{i}.silu1")
        c1 = b.conv(s1, C, name=f"b{i}.conv1")
        g2 = b.nl(NonLinearKind.GROUPNORM, c1, groups=groups, name=f"b{i}.gn2")
        s2 = b.nl(NonLinearKind.SILU, g2, name=f"b{i}.silu2")
        c2 = b.conv(s2, C, name=f"b{i}.conv2")
        sk = b.conv(h, C, k=1, name=f"b{i}.skip")
        h = b.add(sk, c2, name=f"b{i}.res")
        gn = b.nl(NonLinearKind.GROUPNORM, h, groups=groups, name=f"b{i}.attn_gn")
        q = b.fc(gn, C, chw_in=True, name=f"b{i}.q")
        k = b.fc(gn, C, chw_in=True, name=f"b{i}.k")
        v = b.fc(gn, C, chw_in=True, name=f"b{i}.v")
        sc = b.attn_score(q, k, spec.heads, name=f"b{i}.qk")
        p = b.nl(NonLinearKind.SOFTMAX, sc, scale=1.0 / math.sqrt(C // spec.heads), name=f"b{i}.softmax")
        o = b.attn_context(p, v, spec.heads, name=f"b{i}.pv")
        pr = b.fc(o, C, chw_out=True, hw=(S, S), name=f"b{i}.proj")
        h = b.add(h, pr, name=f"b{i}.attn_res")
    cat = b.concat(h, h0, axis=0, name="cat")
    go = b.nl(NonLinearKind.GROUPNORM, cat, groups=groups, name="out.gn")
    so = b.nl(NonLinearKind.SILU, go, name="out.silu")
    return b.conv(so, spec.in_channels, name="conv_out")


def _build_dit(spec: ModelSpec, b: _Builder) -> int:
    W, T, H = spec.channels, spec.spatial, spec.heads
    scale = 1.0 / math.sqrt(W // H)
    x = b.input((T, spec.in_channels), "x")
    ctx = b.input((spec.context_tokens, W), "ctx", value=b.rng.normal((spec.context_tokens, W)))
    h = b.fc(x, W, name="embed")
    for i in range(spec.depth):
        l1 = b.nl(NonLinearKind.LAYERNORM, h, name=f"b{i}.ln1")
        q = b.fc(l1, W, name=f"b{i}.q")
        k = b.fc(l1, W, name=f"b{i}.k")
        v = b.fc(l1, W, name=f"b{i}.v")
        s = b.attn_score(q, k, H, name=f"b{i}.qk")
        p = b.nl(NonLinearKind.SOFTMAX, s, scale=scale, name=f"b{i}.softmax")
        o = b.attn_context(p, v, H, name=f"b{i}.pv")
        h = b.add(h, b.fc(o, W, name=f"b{i}.proj"), name=f"b{i}.res1")
        l2 = b.nl(NonLinearKind.LAYERNORM, h, name=f"b{i}.ln2")
        q2 = b.fc(l2, W, name=f"b{i}.xq")
        k2 = b.fc(ctx, W, name=f"b{i}.xk")
        v2 = b.fc(ctx, W, name=f"b{i}.xv")
        s2 = b.attn_score(q2, k2, H, name=f"b{i}.xqk")
        p2 = b.nl(NonLinearKind.SOFTMAX, s2, scale=scale, name=f"b{i}.xsoftmax")
        o2 = b.attn_context(p2, v2, H, name=f"b{i}.xpv")
        h = b.add(h, b.fc(o2, W, name=f"b{i}.xproj"), name=f"b{i}.res2")
        l3 = b.nl(NonLinearKind.LAYERNORM, h, name=f"b{i}.ln3")
        f1 = b.fc(l3, 2 * W, name=f"b{i}.fc1")
        g = b.nl(NonLinearKind.GELU, f1, name=f"b{i}.gelu")
        h = b.add(h, b.fc(g, W, name=f"b{i}.fc2"), name=f"b{i}.res3")
    lf = b.nl(NonLinearKind.LAYERNORM, h, name="out.ln")
    return b.fc(lf, spec.in_channels, name="out")


def build_model(spec: ModelSpec) -> LayerGraph:
    spec.validate()
    b = _Builder(spec.seed)
    out = _build_unet(spec, b) if spec.kind == "toy-unet" else _build_dit(spec, b)
    if b.params > MAX_PARAMS:
        raise SpecError(f"model has {b.params} parameters; desk-scale limit is {MAX_PARAMS}")
    return LayerGraph(b.nodes, output=out)


# --------------------------------------------------------------------------
# Float execution
# --------------------------------------------------------------------------

def silu(x):
    return x / (1.0 + np.exp(-x))


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def softmax(x, scale=1.0):
    z = x * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def group_norm(x, groups, eps=1e-5):
    g = x.reshape(groups, -1)
    g = (g - g.mean(axis=1, keepdims=True)) / np.sqrt(g.var(axis=1, keepdims=True) + eps)
    return g.reshape(x.shape)


def layer_norm(x, eps=1e-5):
    return (x - x.mean(axis=-1, keepdims=True)) / np.sqrt(x.var(axis=-1, keepdims=True) + eps)


def apply_nonlinear(node: LayerNode, x: np.ndarray) -> np.ndarray:
    s = node.sub
    if s == NonLinearKind.SILU:
        return silu(x)
    if s == NonLinearKind.GELU:
        return gelu(x)
    if s == NonLinearKind.SOFTMAX:
        return softmax(x, node.params.get("scale", 1.0))
    if s == NonLinearKind.GROUPNORM:
        return group_norm(x, node.params.get("groups", 1))
    if s == NonLinearKind.LAYERNORM:
        return layer_norm(x)
    return x  # quant/dequant are identities in float


LinearFn = Callable[[LayerNode, list], np.ndarray]


def float_linear(node: LayerNode, operands: list) -> np.ndarray:
    w = node.weight if node.weight is not None else operands[1]
    return linear_float(operands[0], w, node.desc())


def forward(g: LayerGraph, feeds: dict, linear_fn: Optional[LinearFn] = None) -> dict[int, np.ndarray]:
    """Evaluate every node; returns float32 outputs keyed by node id."""
    linear_fn = linear_fn or float_linear
    vals: dict[int, np.ndarray] = {}
    for i in g.order:
        n = g[i]
        ins = [vals[p].astype(np.float64) for p in n.inputs]
        if n.kind == NodeKind.INPUT:
            out = n.weight if n.params.get("const") else feeds[n.name]
        elif n.is_linear:
            out = linear_fn(n, ins)
        elif n.kind == NodeKind.ADD:
            out = sum(ins[1:], ins[0])
        elif n.kind == NodeKind.CONCAT:
            out = np.concatenate(ins, axis=n.params.get("axis", 0))
        elif n.kind == NodeKind.SPLIT:
            parts = np.split(ins[0], n.params.get("parts", 2), axis=n.params.get("axis", 0))
            out = parts[n.params.get("index", 0)]
        else:
            out = apply_nonlinear(n, ins[0])
        vals[i] = np.asarray(out, dtype=np.float32)
    return vals


# --------------------------------------------------------------------------
# Sampler
# --------------------------------------------------------------------------

def linear_schedule(steps: int, hi: float = 0.98, lo: float = 0.05) -> list[float]:
    """alpha_bar for t = 1..T, strictly decreasing in t."""
    return [float(a) for a in np.linspace(hi, lo, steps)]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    seed: int = 0
    schedule: Optional[tuple[float, ...]] = None
    high_similarity: bool = True
    max_rel_change: float = 0.05
    drift_step: Optional[int] = None
    drift_scale: float = 1.0

    def alphas(self) -> list[float]:
        return list(self.schedule) if self.schedule is not None else linear_schedule(self.steps)

    def validate(self):
        if self.steps < 2:
            raise SpecError("sampler needs at least 2 steps")
        a = self.alphas()
        if len(a) != self.steps:
            raise SpecError("schedule length must equal steps")
        if any(not (0.0 < x <= 1.0) for x in a):
            raise SpecError("alphas must lie in (0, 1]")
        if any(a[i + 1] >= a[i] for i in range(len(a) - 1)):
            raise SpecError("alphas must be strictly decreasing in t")
        if self.max_rel_change <= 0:
            raise SpecError("max_rel_change must be positive")


def ddim_update(x: np.ndarray, eps: np.ndarray, a_t: float, a_prev: float) -> np.ndarray:
    x = x.astype(np.float64)
    eps = eps.astype(np.float64)
    x0 = (x - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps


def bound_change(x: np.ndarray, x_new: np.ndarray, max_rel: float) -> np.ndarray:
    """Shrink the step so that ||x_new - x|| <= max_rel * ||x||."""
    x = x.astype(np.float64)
    d = x_new - x
    lim = max_rel * float(np.linalg.norm(x))
    n = float(np.linalg.norm(d))
    if n > lim > 0:
        d = d * (lim / n)
    return x + d


def sampler_step(x: np.ndarray, eps: np.ndarray, k: int, cfg: SamplerConfig,
                 rng: Optional[Rng] = None) -> np.ndarray:
    """Input of step ``k + 1`` from the input and model output of step ``k``."""
    alphas = cfg.alphas()
    t = cfg.steps - k + 1
    a_t = alphas[t - 1]
    a_prev = alphas[t - 2] if t >= 2 else 1.0
    x_new = ddim_update(x, eps, a_t, a_prev)
    if cfg.high_similarity:
        x_new = bound_change(x, x_new, cfg.max_rel_change)
    if cfg.drift_step is not None and k + 1 >= cfg.drift_step and rng is not None:
        noise = rng.normal(x.shape)
        x_new = x_new + noise * (cfg.drift_scale * np.linalg.norm(x) / np.linalg.norm(noise))
    return x_new.astype(np.float32)


@dataclass
class Trace:
    graph: LayerGraph
    outputs: list  # per step (execution order): {node_id: float32 array}
    spec: Optional[ModelSpec] = None
    config: Optional[SamplerConfig] = None

    @property
    def steps(self) -> int:
        return len(self.outputs)

    def output(self, step: int, node: int) -> np.ndarray:
        return self.outputs[step - 1][node]

    def inputs(self, step: int, node: int) -> list[np.ndarray]:
        return [self.outputs[step - 1][p] for p in self.graph[node].inputs]

    def activation_inputs(self, step: int, node: int) -> list[np.ndarray]:
        return [self.outputs[step - 1][p] for p in self.graph.activation_ports(node)]


def run_sampler(g: LayerGraph, cfg: SamplerConfig, linear_fn: Optional[LinearFn] = None,
                zero_output_at: Optional[int] = None, spec: Optional[ModelSpec] = None) -> Trace:
    cfg.validate()
    rng = Rng(cfg.seed)
    x_node = next(n for n in g.nodes.values() if n.kind == NodeKind.INPUT and not n.params.get("const"))
    x = rng.normal(x_node.dims).astype(np.float32)
    drift_rng = Rng(cfg.seed ^ 0xD1F7)
    outputs = []
    for k in range(1, cfg.steps + 1):
        if hasattr(linear_fn, "begin_step"):
            linear_fn.begin_step()
        vals = forward(g, {x_node.name: x}, linear_fn)
        for i in g.order:
            if not np.all(np.isfinite(vals[i])):
                raise SamplerError(f"non-finite values at step {k}, layer {i} ({g[i].label})")
        outputs.append(vals)
        eps = vals[g.output]
        if zero_output_at == k:
            eps = np.zeros_like(eps)
        if k < cfg.steps:
            x = sampler_step(x, eps, k, cfg, drift_rng)
    return Trace(g, outputs, spec, cfg)


# --------------------------------------------------------------------------
# Binary trace format
# --------------------------------------------------------------------------

MAGIC = b"DITT"
VERSION = 1
_MAX_ELEMS = 2**28


def _meta(trace: Trace) -> dict:
    g = trace.graph
    nodes = []
    for i in g.order:
        n = g[i]
        nodes.append({"id": n.id, "name": n.name, "inputs": list(n.inputs), "params": n.params,
                      "weight_shape": list(n.weight.shape) if n.weight is not None else None,
                      "dims": list(n.dims)})
    cfg = None
    if trace.config is not None:
        cfg = asdict(trace.config)
        if cfg["schedule"] is not None:
            cfg["schedule"] = list(cfg["schedule"])
    return {"output": g.output, "nodes": nodes,
            "spec": asdict(trace.spec) if trace.spec else None, "config": cfg}


def trace_bytes(trace: Trace) -> bytes:
    g = trace.graph
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(struct.pack("<I", len(g)))
    for i in g.order:
        n = g[i]
        dims = list(n.dims) + [0] * (4 - len(n.dims))
        buf.write(struct.pack("<IB4I", n.id, n.code, *dims))
        blob = b"" if n.weight is None else np.ascontiguousarray(n.weight, dtype="<f4").tobytes()
        buf.write(struct.pack("<Q", len(blob)))
        buf.write(blob)
    recs = [(k, i) for k in range(1, trace.steps + 1) for i in g.order]
    buf.write(struct.pack("<Q", len(recs)))
    for k, i in recs:
        a = np.ascontiguousarray(trace.output(k, i), dtype="<f4")
        buf.write(struct.pack("<HIB", k, i, a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        payload = a.tobytes()
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    meta = json.dumps(_meta(trace), sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def export_trace(trace: Trace, path) -> str:
    data = trace_bytes(trace)
    with open(path, "wb") as f:
        f.write(data)
    return digest(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TraceFormatError("truncated trace file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _floats(r: _Reader, shape: Sequence[int], nbytes: int) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if count > _MAX_ELEMS or nbytes != 4 * count:
        raise TraceFormatError(f"dimension overflow: dims {tuple(shape)} vs {nbytes} payload bytes")
    return np.frombuffer(r.take(nbytes), dtype="<f4").reshape(shape).astype(np.float32)


def parse_trace(data: bytes) -> Trace:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise TraceFormatError("not a trace file")
    (ver,) = r.unpack("<H")
    if ver != VERSION:
        raise TraceFormatError(f"unsupported trace version {ver}")
    (n_nodes,) = r.unpack("<I")
    raw = []
    for _ in range(n_nodes):
        nid, code, *dims = r.unpack("<IB4I")
        if code not in CODE_KINDS:
            raise TraceFormatError(f"unknown node kind code {code}")
        (blen,) = r.unpack("<Q")
        if blen % 4 or blen > 4 * _MAX_ELEMS:
            raise TraceFormatError("dimension overflow in weight blob")
        blob = r.take(blen)
        raw.append((nid, code, tuple(d for d in dims if d), blob))
    (n_rec,) = r.unpack("<Q")
    records = []
    for _ in range(n_rec):
        step, lid, rank = r.unpack("<HIB")
        if rank > 8:
            raise TraceFormatError("dimension overflow: tensor rank too large")
        shape = r.unpack(f"<{rank}I")
        (plen,) = r.unpack("<Q")
        records.append((step, lid, _floats(r, shape, plen)))
    (mlen,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(mlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TraceFormatError(f"corrupt trace metadata: {e}") from e
    if r.pos != len(data):
        raise TraceFormatError("trailing bytes after trace")

    by_id = {m["id"]: m for m in meta["nodes"]}
    nodes = []
    for nid, code, dims, blob in raw:
        kind, sub = CODE_KINDS[code]
        m = by_id[nid]
        w = None
        if m["weight_shape"] is not None:
            w = _floats(_Reader(blob), tuple(m["weight_shape"]), len(blob))
        nodes.append(LayerNode(nid, kind, tuple(m["inputs"]), tuple(dims), sub, w, m["params"], m["name"]))
    g = LayerGraph(nodes, output=meta["output"])
    steps = max((s for s, _, _ in records), default=0)
    outputs = [dict() for _ in range(steps)]
    for s, lid, a in records:
        outputs[s - 1][lid] = a
    spec = ModelSpec(**meta["spec"]) if meta.get("spec") else None
    cfg = None
    if meta.get("config"):
        c = dict(meta["config"])
        if c.get("schedule") is not None:
            c["schedule"] = tuple(c["schedule"])
        cfg = SamplerConfig(**c)
    return Trace(g, outputs, spec, cfg)


def import_trace(path) -> Trace:
    with open(path, "rb") as f:
        return parse_trace(f.read())
