"""Multi-scale causal convolution followed by a residual multi-head GAT stack."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass
class EncoderConfig:
    in_dim: int
    hidden_dim: int = 32
    num_heads: int = 4
    kernel_sizes: tuple[int, ...] = (2, 4, 8)
    gat_layers: int = 2
    leaky_slope: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    use_conv: bool = True
    use_gat: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if self.num_heads < 1 or self.hidden_dim % self.num_heads:
            raise ValueError(
                f"hidden_dim={self.hidden_dim} must be a positive multiple of num_heads={self.num_heads}"
            )
        if any(k < 1 for k in self.kernel_sizes) or not self.kernel_sizes:
            raise ValueError("kernel sizes must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _as_batch(x) -> tuple[Tensor, bool]:
    x = tn.as_tensor(x)
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 3:
        raise tn.DimensionError(f"expected a T x N window or B x T x N batch, got shape {x.shape}")
    return x, False


class Neighborhoods:
    """Padded in-neighbour lists derived from an attention mask.

    ``selectors`` stacks K one-hot T x T matrices (row k*T + i selects the
    k-th admissible source of node i); ``valid`` flags real slots.
    """

    def __init__(self, selectors: np.ndarray, valid: np.ndarray, index: np.ndarray):
        # wrapped once: the selector stack is large and reused by every layer
        self.selectors = tn.Tensor(selectors)
        self.valid = valid
        self.index = index

    @property
    def width(self) -> int:
        return self.valid.shape[-1]

    @property
    def num_nodes(self) -> int:
        return self.valid.shape[-2]

    @classmethod
    def from_mask(cls, mask: np.ndarray, batch: int) -> "Neighborhoods":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 2:
            mask = mask[None]
        elif not (mask.ndim == 3 and mask.shape[0] == batch):
            raise tn.DimensionError(f"attention mask shape {mask.shape} does not fit batch of {batch}")
        G, T, _ = mask.shape
        counts = mask.sum(axis=-1)
        if np.any(counts == 0):
            raise ValueError("every node needs at least one admissible source")
        K = int(counts.max())
        # stable argsort puts admissible sources first, in index order
        order = np.argsort(~mask, axis=-1, kind="stable")[..., :K]
        valid = np.arange(K)[None, None, :] < counts[..., None]
        index = np.where(valid, order, np.arange(T)[None, :, None])
        sel = np.zeros((G, K, T, T))
        g_i, t_i, k_i = np.meshgrid(np.arange(G), np.arange(T), np.arange(K), indexing="ij")
        sel[g_i, k_i, t_i, index] = valid
        sel = sel.reshape(G, 1, K * T, T)
        return cls(sel, valid[:, None], index)

    def densify(self, alpha: np.ndarray) -> np.ndarray:
        B, H, T, K = alpha.shape
        dense = np.zeros((B, H, T, T))
        idx = np.broadcast_to(self.index[:, None], (B, H, T, K))
        w = np.where(np.broadcast_to(self.valid, alpha.shape), alpha, 0.0)
        np.put_along_axis(dense, idx, 0.0, axis=-1)
        b, h, t, k = np.meshgrid(*(np.arange(n) for n in (B, H, T, K)), indexing="ij")
        np.add.at(dense, (b, h, t, idx), w)
        return dense


class Encoder:
    """Shared architecture of the online and target encoders.

    ``params`` holds every learnable tensor by name; ``buffers`` holds the
    batch-norm running statistics.  ``training`` switches batch norm between
    batch statistics (and running-stat updates) and running statistics.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.training = True
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        n, d = cfg.in_dim, cfg.hidden_dim
        if cfg.use_conv:
            for k in cfg.kernel_sizes:
                bound = 1.0 / np.sqrt(k * n)
                self.params[f"conv{k}.weight"] = tn.parameter(rng.uniform(-bound, bound, (k, n, d)))
                self.params[f"conv{k}.bias"] = tn.parameter(rng.uniform(-bound, bound, d))
                self.params[f"bn{k}.gamma"] = tn.parameter(np.ones(d))
                self.params[f"bn{k}.beta"] = tn.parameter(np.zeros(d))
                self.buffers[f"bn{k}.running_mean"] = np.zeros(d)
                self.buffers[f"bn{k}.running_var"] = np.ones(d)
            self.params["prelu.alpha"] = tn.parameter(np.array(0.25))
        else:
            self.params["proj.weight"] = tn.parameter(_glorot(rng, (n, d), n, d))
        if cfg.use_gat:
            H, dh = cfg.num_heads, cfg.head_dim
            for layer in range(cfg.gat_layers):
                self.params[f"gat{layer}.weight"] = tn.parameter(_glorot(rng, (d, d), d, dh))
                self.params[f"gat{layer}.a_self"] = tn.parameter(_glorot(rng, (H, dh), 2 * dh, 1))
                self.params[f"gat{layer}.a_nbr"] = tn.parameter(_glorot(rng, (H, dh), 2 * dh, 1))
        for name, p in self.params.items():
            p.name = name

    # -- bookkeeping ----------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def describe(self) -> dict:
        return {
            "in_dim": self.cfg.in_dim,
            "hidden_dim": self.cfg.hidden_dim,
            "num_heads": self.cfg.num_heads,
            "kernel_sizes": list(self.cfg.kernel_sizes),
            "gat_layers": self.cfg.gat_layers if self.cfg.use_gat else 0,
            "num_parameters": self.num_parameters(),
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clone(self) -> "Encoder":
        other = copy.copy(self)
        other.params = {k: tn.parameter(v.data.copy(), name=k) for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise tn.DimensionError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k in self.buffers:
            self.buffers[k] = np.array(state[k], dtype=np.float64)

    # -- forward --------------------------------------------------------
    def _batch_norm(self, h: Tensor, k: int) -> Tensor:
        gamma, beta = self.params[f"bn{k}.gamma"], self.params[f"bn{k}.beta"]
        eps = self.cfg.bn_eps
        if self.training:
            mu = tn.mean(h, axis=(0, 1), keepdims=True)
            centered = h - mu
            var = tn.mean(tn.square(centered), axis=(0, 1), keepdims=True)
            h_hat = centered / tn.sqrt(var + eps)
            n = h.shape[0] * h.shape[1]
            mom = self.cfg.bn_momentum
            rm, rv = f"bn{k}.running_mean", f"bn{k}.running_var"
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            self.buffers[rm] = (1 - mom) * self.buffers[rm] + mom * mu.data.reshape(-1)
            self.buffers[rv] = (1 - mom) * self.buffers[rv] + mom * unbiased
        else:
            mu = self.buffers[f"bn{k}.running_mean"]
            var = self.buffers[f"bn{k}.running_var"]
            h_hat = (h - mu) / np.sqrt(var + eps)
        return h_hat * gamma + beta

    def conv_encode(self, x) -> Tensor:
        """Sum over kernel sizes k of PReLU(BN(causal conv_k(x))), shape B x T x d."""
        x, squeeze = _as_batch(x)
        B, T, N = x.shape
        if T < 2:
            raise ValueError(f"window length {T} is shorter than 2")
        if N != self.cfg.in_dim:
            raise tn.DimensionError(f"window has {N} channels, encoder expects {self.cfg.in_dim}")
        if not self.cfg.use_conv:
            out = x @ self.params["proj.weight"]
            return out.reshape(out.shape[1:]) if squeeze else out
        alpha = self.params["prelu.alpha"]
        out = None
        for k in self.cfg.kernel_sizes:
            xp = tn.pad_left(x, k - 1, axis=1)
            # tap i reads x[t - i]
            taps = [xp[:, k - 1 - i : k - 1 - i + T, :] for i in range(k)]
            stacked = taps[0] if k == 1 else tn.concat(taps, axis=-1)
            w = self.params[f"conv{k}.weight"].reshape(k * N, self.cfg.hidden_dim)
            h = stacked @ w + self.params[f"conv{k}.bias"]
            h = tn.prelu(self._batch_norm(h, k), alpha)
            out = h if out is None else out + h
        return out.reshape(out.shape[1:]) if squeeze else out

    def _attend(self, h: Tensor, nb: "Neighborhoods", layer: int) -> tuple[Tensor, Tensor]:
        """Attention over padded neighbour slots; returns (alpha B x H x T x K, output B x H x T x dh)."""
        B, T, d = h.shape
        H, dh, K = self.cfg.num_heads, self.cfg.head_dim, nb.width
        wh = (h @ self.params[f"gat{layer}.weight"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        a_self = self.params[f"gat{layer}.a_self"].reshape(1, H, 1, dh)
        a_nbr = self.params[f"gat{layer}.a_nbr"].reshape(1, H, 1, dh)
        f_self = tn.sum(wh * a_self, axis=-1, keepdims=True)  # B x H x T x 1
        f_nbr = tn.sum(wh * a_nbr, axis=-1, keepdims=True)
        # selector rows k*T + i pick node i's k-th neighbour
        sel = nb.selectors
        g_nbr = (sel @ f_nbr).reshape(B, H, K, T).transpose(0, 1, 3, 2)
        e = tn.leaky_relu(f_self + g_nbr, self.cfg.leaky_slope)
        alpha = tn.softmax(e, axis=-1, mask=nb.valid)
        g_wh = (sel @ wh).reshape(B, H, K, T, dh)
        weights = alpha.transpose(0, 1, 3, 2).reshape(B, H, K, T, 1)
        out = tn.sum(weights * g_wh, axis=2)
        return alpha, out

    def attention(self, h, mask: np.ndarray, layer: int = 0) -> np.ndarray:
        """Dense attention weights B x H x T x T (row i: node i's distribution over sources j)."""
        h, _ = _as_batch(h)
        nb = Neighborhoods.from_mask(mask, h.shape[0])
        with tn.no_grad():
            alpha, _ = self._attend(h, nb, layer)
        return nb.densify(alpha.data)

    def gat_layer(self, h, mask, layer: int = 0) -> Tensor:
        """One multi-head GAT layer; ``mask`` is a T x T / B x T x T mask or prepared Neighborhoods."""
        h, squeeze = _as_batch(h)
        B, T, d = h.shape
        nb = mask if isinstance(mask, Neighborhoods) else Neighborhoods.from_mask(mask, B)
        if nb.num_nodes != T:
            raise tn.DimensionError(f"graph has {nb.num_nodes} nodes, window has {T}")
        _, out = self._attend(h, nb, layer)
        out = tn.elu(out.transpose(0, 2, 1, 3).reshape(B, T, d))
        return out.reshape(T, d) if squeeze else out

    def encode(self, x, mask: np.ndarray) -> Tensor:
        """Node representations z = GAT_stack(conv(x)) + conv(x)."""
        x, squeeze = _as_batch(x)
        base = self.conv_encode(x)
        z = base
        if self.cfg.use_gat:
            h = base
            mask = mask if isinstance(mask, Neighborhoods) else Neighborhoods.from_mask(mask, x.shape[0])
            for layer in range(self.cfg.gat_layers):
                h = self.gat_layer(h, mask, layer)
            z = h + base
        return z.reshape(z.shape[1:]) if squeeze else z

    __call__ = encode


def expected_parameter_count(cfg: EncoderConfig) -> int:
    d, n = cfg.hidden_dim, cfg.in_dim
    total = 0
    if cfg.use_conv:
        total += sum(k * n * d + 3 * d for k in cfg.kernel_sizes) + 1
    else:
        total += n * d
    if cfg.use_gat:
        total += cfg.gat_layers * (d * d + 2 * d)
    return total
