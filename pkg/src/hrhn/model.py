"""End-to-end HRHN: parameters, ablation variants, forward pass, MSE objective and training."""

from __future__ import annotations

import copy
import logging
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import attention as att
from . import numerics as nx
from .conv import ConvFrontendParams, ConvGeometry, encode_window, init_frontend
from .data import Windows
from .metrics import compute_metrics
from .numerics import NonFiniteError, Parameter, ShapeError, Tensor
from .rhn import RhnParams, init_rhn, rhn_step, run_sequence

log = logging.getLogger(__name__)

ATTENTION_MODES = ("hierarchical", "classical_top", "single_layer")


@dataclass(frozen=True)
class VariantConfig:
    use_conv_frontend: bool = True
    attention_mode: str = "hierarchical"
    layer: int | None = None  # only for single_layer

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        if self.attention_mode == "single_layer":
            if self.layer is None or self.layer < 1:
                raise ValueError("single_layer attention needs layer k >= 1")
        elif self.layer is not None:
            raise ValueError(f"layer is only meaningful for single_layer, not {self.attention_mode}")

    def depths(self, K: int) -> tuple[int, ...]:
        if self.attention_mode == "hierarchical":
            return tuple(range(1, K + 1))
        if self.attention_mode == "classical_top":
            return (K,)
        if self.layer > K:
            raise ValueError(f"single_layer({self.layer}) requires 1 <= k <= K={K}")
        return (self.layer,)

    @property
    def mode_string(self) -> str:
        return f"single_layer({self.layer})" if self.attention_mode == "single_layer" else self.attention_mode


HRHN = VariantConfig(True, "hierarchical")
RHN = VariantConfig(False, "classical_top")
RHN_CONV = VariantConfig(True, "classical_top")
RHN_HA = VariantConfig(False, "hierarchical")

NAMED_VARIANTS = {"hrhn": HRHN, "rhn": RHN, "rhn_conv": RHN_CONV, "rhn_ha": RHN_HA}


def parse_attention_mode(text: str) -> tuple[str, int | None]:
    text = text.strip().lower()
    m = re.fullmatch(r"single_layer[(:\s]*(\d+)\)?", text)
    if m:
        return "single_layer", int(m.group(1))
    if text in ("hierarchical", "classical_top"):
        return text, None
    raise ValueError(f"unknown attention mode {text!r}")


def parse_variant(text: str, use_conv_frontend: bool | None = None) -> VariantConfig:
    """Accept a named variant (``hrhn``, ``rhn``, ``rhn_conv``, ``rhn_ha``, ``rhn_attn<k>``)
    or an attention mode (``hierarchical``, ``classical_top``, ``single_layer(k)``)."""
    key = text.strip().lower()
    if key in NAMED_VARIANTS:
        v = NAMED_VARIANTS[key]
    elif m := re.fullmatch(r"rhn_attn(\d+)", key):
        v = VariantConfig(False, "single_layer", int(m.group(1)))
    else:
        mode, layer = parse_attention_mode(key)
        v = VariantConfig(True, mode, layer)
    if use_conv_frontend is not None:
        v = VariantConfig(use_conv_frontend, v.attention_mode, v.layer)
    return v


@dataclass
class ModelConfig:
    n: int
    d: int = 1
    T: int = 11
    m: int = 64
    l: int = 128
    p: int = 128
    K: int = 2
    conv: ConvGeometry = field(default_factory=ConvGeometry)

    def __post_init__(self):
        if isinstance(self.conv, dict):
            self.conv = ConvGeometry(**self.conv)
        for name in ("n", "d", "m", "l", "p", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be >= 1")
        if self.T < 2:
            raise ValueError("model.T must be >= 2")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["conv"].items()}
        return out


@dataclass
class Embedding:
    """Affine n -> m map used in place of the ConvNet when it is switched off."""

    weight: Parameter
    bias: Parameter

    def parameters(self):
        return [self.weight, self.bias]


@dataclass
class HrhnParams:
    config: ModelConfig
    variant: VariantConfig
    frontend: ConvFrontendParams | Embedding
    encoder: RhnParams
    attention: att.AttentionParams
    fusion: att.FusionParams
    decoder: RhnParams
    output: att.OutputParams

    def __post_init__(self):
        c = self.config
        checks = [
            (self.encoder.input_dim == c.m, f"encoder input {self.encoder.input_dim} != m={c.m}"),
            (self.encoder.hidden == c.l, f"encoder hidden {self.encoder.hidden} != l={c.l}"),
            (self.encoder.depth == c.K, f"encoder depth {self.encoder.depth} != K={c.K}"),
            (self.decoder.input_dim == c.d, f"decoder input {self.decoder.input_dim} != d={c.d}"),
            (self.decoder.hidden == c.p, f"decoder hidden {self.decoder.hidden} != p={c.p}"),
            (self.decoder.depth == c.K, f"decoder depth {self.decoder.depth} != K={c.K}"),
            (self.attention.encoder_hidden == c.l, "attention encoder size != l"),
            (self.attention.decoder_hidden == c.p, "attention decoder size != p"),
            (self.fusion.W.shape == (c.d, c.d), f"fusion W {self.fusion.W.shape} != ({c.d}, {c.d})"),
            (self.fusion.V.shape == (c.d, self.attention.context_size), "fusion V does not match context size"),
            (self.output.W.shape == (c.d, c.p), f"output W {self.output.W.shape} != ({c.d}, {c.p})"),
            (self.output.V.shape == (c.d, self.attention.context_size), "output V does not match context size"),
        ]
        if isinstance(self.frontend, Embedding):
            checks.append((self.frontend.weight.shape == (c.m, c.n), "embedding is not n -> m"))
        else:
            checks.append((self.frontend.fc_weight.shape[0] == c.m, "frontend output != m"))
        for ok, msg in checks:
            if not ok:
                raise ShapeError(f"inconsistent HRHN parameters: {msg}")

    def parameters(self) -> list[Parameter]:
        return (
            self.frontend.parameters()
            + self.encoder.parameters()
            + self.attention.parameters()
            + self.fusion.parameters()
            + self.decoder.parameters()
            + self.output.parameters()
        )

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named()
        missing = set(named) - set(state)
        extra = set(state) - set(named)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in named.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)
            p.zero_grad()

    def astype(self, dtype) -> "HrhnParams":
        out = copy.deepcopy(self)
        for p in out.parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return out

    @property
    def dtype(self):
        return self.encoder.input_weight.dtype

    def count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def init_params(config: ModelConfig, variant: VariantConfig = HRHN, seed: int = 0, dtype=np.float32) -> HrhnParams:
    """Uniform(+-1/sqrt(fan_in)) weights and zero biases."""
    rng = np.random.default_rng(seed)
    c = config
    if variant.use_conv_frontend:
        frontend = init_frontend(rng, c.n, c.m, c.conv, dtype)
    else:
        bound = 1.0 / np.sqrt(c.n)
        frontend = Embedding(
            Parameter("embed.weight", rng.uniform(-bound, bound, size=(c.m, c.n)).astype(dtype)),
            Parameter("embed.bias", np.zeros(c.m, dtype=dtype)),
        )
    depths = variant.depths(c.K)
    encoder = init_rhn(rng, "encoder", c.m, c.l, c.K, dtype)
    attention = att.init_attention(rng, depths, c.l, c.p, dtype)
    ctx = attention.context_size
    fusion = att.init_fusion(rng, c.d, ctx, dtype)
    decoder = init_rhn(rng, "decoder", c.d, c.p, c.K, dtype)
    output = att.init_output(rng, c.d, c.p, ctx, dtype)
    return HrhnParams(c, variant, frontend, encoder, attention, fusion, decoder, output)


# ---------------------------------------------------------------- forward pass


def _batch_arrays(batch):
    if isinstance(batch, Windows):
        return batch.x, batch.y, False
    if hasattr(batch, "x") and hasattr(batch, "y"):
        return batch.x[None], batch.y[None], True
    x, y = batch
    return np.asarray(x), np.asarray(y), False


def _check_variant(params: HrhnParams, variant: VariantConfig):
    conv_in_params = isinstance(params.frontend, ConvFrontendParams)
    if conv_in_params != variant.use_conv_frontend:
        raise ShapeError(
            f"variant wants conv frontend={variant.use_conv_frontend} but params have "
            f"{'a ConvNet' if conv_in_params else 'an affine embedding'}"
        )
    depths = variant.depths(params.config.K)
    if len(depths) != params.attention.v.shape[0]:
        raise ShapeError(
            f"variant attends {len(depths)} depth(s) but attention params cover {params.attention.v.shape[0]}"
        )
    return depths


def _encode(x: Tensor, params: HrhnParams) -> Tensor:
    if isinstance(params.frontend, Embedding):
        return nx.linear(x, params.frontend.weight, params.frontend.bias)
    return encode_window(x, params.frontend)


def forward(batch, params: HrhnParams, variant: VariantConfig | None = None, trace: dict | None = None) -> Tensor:
    """Predict y_T for a :class:`Window`, a :class:`Windows` batch or an ``(x, y)`` array pair.

    ``trace``, if given, receives the encoder grid and per-step attention weights.
    """
    variant = variant or params.variant
    c = params.config
    depths = _check_variant(params, variant)
    x_arr, y_arr, single = _batch_arrays(batch)
    if x_arr.shape[1:] != (c.T - 1, c.n) or y_arr.shape[1:] != (c.T - 1, c.d):
        raise ShapeError(
            f"window shapes x{x_arr.shape[1:]}, y{y_arr.shape[1:]} do not match model "
            f"(T-1={c.T - 1}, n={c.n}, d={c.d})"
        )
    dtype = params.dtype
    x = Tensor(np.asarray(x_arr, dtype=dtype))
    y = np.asarray(y_arr, dtype=dtype)
    batch_size = x.shape[0]

    try:
        w = _encode(x, params)
    except (ShapeError, NonFiniteError) as exc:
        raise type(exc)(f"frontend: {exc}") from exc
    grid = run_sequence(w, params.encoder)

    hierarchical = variant.attention_mode == "hierarchical"
    if hierarchical:
        states = grid.layers(depths)  # [B, K, T-1, l]
        keys = att.attention_keys(states, params.attention)

        def context(s_prev):
            cs = att.hierarchical_context(s_prev, states, params.attention, keys)
            return cs.context, cs.weights

    else:
        layer = grid.layer(depths[0])  # [B, T-1, l]
        v = params.attention.v[0]
        T_k = params.attention.T[0]
        keys = nx.matmul(layer, nx.swapaxes(params.attention.U[0], -1, -2))

        def context(s_prev):
            ctx, alpha = att.soft_attention(s_prev, layer, keys, v, T_k)
            return ctx, alpha

    s_prev = Tensor(np.zeros((batch_size, c.p), dtype=dtype))
    weights = []
    for t in range(c.T - 1):
        d_t, alpha = context(s_prev)
        weights.append(alpha.data)
        y_tilde = att.fuse_decoder_input(Tensor(y[:, t]), d_t, params.fusion)
        s_prev = rhn_step(y_tilde, s_prev, params.decoder)[-1]
    d_T, alpha = context(s_prev)
    weights.append(alpha.data)
    out = att.project_output(s_prev, d_T, params.output)
    if trace is not None:
        trace["grid"] = grid
        trace["attention"] = weights
    return nx.reshape(out, (c.d,)) if single else out


def mse_loss(predictions: Tensor, targets) -> Tensor:
    """(1/N) sum_i sum_d (pred - target)^2: summed over dimensions, averaged over samples."""
    targets = Tensor(np.asarray(targets, dtype=predictions.dtype))
    if predictions.shape != targets.shape:
        raise ShapeError(f"predictions {predictions.shape} vs targets {targets.shape}")
    if predictions.shape[0] == 0:
        raise ValueError("loss over an empty batch")
    return nx.mul(nx.sum(nx.square(predictions - targets)), 1.0 / predictions.shape[0])


def loss(batch: Windows, params: HrhnParams, variant: VariantConfig | None = None) -> Tensor:
    if len(batch) == 0:
        raise ValueError("loss over an empty batch")
    return mse_loss(forward(batch, params, variant), batch.target)


def predict(windows: Windows, params: HrhnParams, variant: VariantConfig | None = None, batch_size: int = 512):
    """Predictions as a float64 array ``[N, d]`` on the (normalized) model scale."""
    out = []
    for lo in range(0, len(windows), batch_size):
        out.append(forward(windows.subset(slice(lo, lo + batch_size)), params, variant).data)
    return np.concatenate(out).astype(np.float64)


def dataset_mse(windows: Windows, params: HrhnParams, variant: VariantConfig | None = None) -> float:
    pred = predict(windows, params, variant)
    return float(np.mean(np.sum((pred - windows.target) ** 2, axis=1)))


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    gradient_clip: float | None = None
    patience: int | None = None
    max_steps: int | None = None
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        for name in ("gradient_clip", "patience", "max_steps"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when set")


@dataclass
class TrainResult:
    params: HrhnParams
    log: list[dict]
    best_epoch: int
    steps: int
    diverged: bool = False


def _clip(params, max_norm):
    total = np.sqrt(float(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in params)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


def _val_rmse(windows, params, variant, denorm):
    if windows is None or len(windows) == 0:
        return float("nan")
    pred = predict(windows, params, variant)
    tgt = windows.target
    if denorm is not None:
        pred, tgt = denorm(pred), denorm(tgt)
    return compute_metrics(pred, tgt).rmse


def train(
    train_set: Windows,
    validation_set: Windows | None,
    params: HrhnParams,
    config: TrainConfig,
    variant: VariantConfig | None = None,
    denormalize=None,
    on_epoch=None,
) -> TrainResult:
    """Mini-batch Adam on the MSE objective.

    Returns the parameters of the epoch with the best validation RMSE (the last
    epoch when there is no validation set). Epoch 0 in the log is the untrained
    model. A non-finite loss or gradient stops training and keeps the best
    finite parameters seen so far.
    """
    variant = variant or params.variant
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    state = nx.AdamState(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    plist = params.parameters()

    val0 = _val_rmse(validation_set, params, variant, denormalize)
    history = [{"epoch": 0, "step": 0, "train_loss": dataset_mse(train_set, params, variant), "val_rmse": val0}]
    best = (val0, 0, params.state_dict())
    steps = 0
    diverged = False
    since_best = 0
    n = len(train_set)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = train_set.subset(idx)
            for p in plist:
                p.zero_grad()
            try:
                value = loss(batch, params, variant)
                nx.backward(value)
                if config.gradient_clip is not None:
                    _clip(plist, config.gradient_clip)
                nx.adam_step(state, plist)
            except NonFiniteError as exc:
                log.warning("training diverged at step %d: %s", steps + 1, exc)
                diverged = True
                break
            steps += 1
            total += float(value.data) * len(idx)
            seen += len(idx)
            if config.max_steps is not None and steps >= config.max_steps:
                break
        if diverged:
            break
        val = _val_rmse(validation_set, params, variant, denormalize)
        row = {"epoch": epoch, "step": steps, "train_loss": total / max(seen, 1), "val_rmse": val}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        no_val = validation_set is None or len(validation_set) == 0
        if no_val or val < best[0] or np.isnan(best[0]):
            best = (val, epoch, params.state_dict())
            since_best = 0
        else:
            since_best += 1
        if config.patience is not None and since_best >= config.patience:
            break
        if config.max_steps is not None and steps >= config.max_steps:
            break

    params.load_state_dict(best[2])
    return TrainResult(params, history, best[1], steps, diverged)


# ---------------------------------------------------------------- gradient check


TINY = ModelConfig(n=4, d=1, T=5, m=6, l=8, p=8, K=2, conv=ConvGeometry((3, 4), 2, (1, 2)))


def gradient_check_model(
    config: ModelConfig = TINY,
    variant: VariantConfig = HRHN,
    seed: int = 0,
    batch: int = 4,
    scale: float = 0.5,
    perturbation: float = 1e-5,
) -> dict[str, float]:
    """Worst relative error per parameter group for the full loss, in float64.

    Parameters are drawn N(0, scale^2) and inputs N(0, 1). At the default
    init the attention gradients are ~1e-9 and drown in finite-difference
    roundoff; much larger scales put ReLU / max-pool kinks inside the
    perturbation.
    """
    rng = np.random.default_rng(seed)
    c = config
    windows = Windows(
        rng.standard_normal((batch, c.T - 1, c.n)),
        rng.standard_normal((batch, c.T - 1, c.d)),
        rng.standard_normal((batch, c.d)),
        np.arange(batch),
    )
    params = init_params(config, variant, seed=seed, dtype=np.float64)
    for p in params.parameters():
        p.data = scale * rng.standard_normal(p.shape)
    return nx.gradient_check_groups(lambda: loss(windows, params, variant), params.parameters(), perturbation)
