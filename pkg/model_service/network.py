"""
Mạng feed-forward dày (dense DFN) viết bằng numpy, xấp xỉ
Q(x, a) ≈ E[U(R_{t+1}(a)) | X_t = x] cho 5 hành động.

Cấu trúc mặc định 11 → 5 lớp ẩn × 550 PReLU → 5, PReLU cả ở lớp đầu ra.
Huấn luyện bằng mini-batch với cập nhật Adam trên nhãn Monte-Carlo sinh từ mô
hình vector AR.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from model_service.dynamics import EconomicParams, VarModel, returns_from_states, sample_stationary, step
from model_service.utility import ACTIONS, EXPONENTIAL, Action, UtilitySpec, evaluate, inverse, trade_return
from utils.artifacts import read_json, write_csv, write_json
from utils.errors import DimensionMismatchError, ModelError
from utils.logger import show_log

SCHEMA_VERSION = 1
PRELU_ALPHA = 0.1
OUTPUT_ACTIVATIONS = ("prelu", "tanh", "linear")
QUADRATIC = "quadratic"
CERTAINTY_EQUIVALENT = "certainty_equivalent"

Grads = List[Tuple[np.ndarray, np.ndarray]]


class DivergedLossError(ModelError):
    """Loss huấn luyện không còn hữu hạn."""

    code = "diverged_loss"


@dataclass
class TrainConfig:
    n_states: int = 100_000
    m_inner: int = 300
    epochs: int = 15
    batch_size: int = 160
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_kind: str = QUADRATIC
    hidden_layers: int = 5
    hidden_units: int = 550
    alpha: float = PRELU_ALPHA
    output_activation: str = "prelu"
    standardize_inputs: bool = True
    chunk_size: int = 1000
    jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("n_states", "m_inner", "batch_size", "hidden_layers", "hidden_units", "chunk_size", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} phải ≥ 1.")
        if self.epochs < 0:
            raise ValueError("epochs phải ≥ 0.")
        if self.loss_kind not in (QUADRATIC, CERTAINTY_EQUIVALENT):
            raise ValueError(f"loss_kind không hỗ trợ: {self.loss_kind}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation không hỗ trợ: {self.output_activation}")
        if not self.alpha > 0:
            raise ValueError("alpha phải > 0.")

    def check_utility(self, utility: UtilitySpec) -> None:
        if utility.kind == EXPONENTIAL and self.loss_kind != CERTAINTY_EQUIVALENT:
            raise ValueError("utility exponential phải đi với loss certainty_equivalent.")


@dataclass
class QNetwork:
    weights: List[np.ndarray]  # W_ℓ shape (fan_in, fan_out); forward uses x @ W = Wᵀx
    biases: List[np.ndarray]
    alpha: float = PRELU_ALPHA
    output_activation: str = "prelu"
    x_shift: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatchError("số ma trận trọng số và bias không khớp")
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise DimensionMismatchError(f"lớp {idx + 1}: W {w.shape} không khớp b {b.shape}")
            if idx and self.weights[idx - 1].shape[1] != w.shape[0]:
                raise DimensionMismatchError(f"lớp {idx + 1}: đầu vào {w.shape[0]} khác đầu ra lớp trước")
        if not self.alpha > 0:
            raise ValueError("alpha phải > 0.")
        if self.x_shift is None:
            self.x_shift = np.zeros(self.weights[0].shape[0])
        if self.x_scale is None:
            self.x_scale = np.ones(self.weights[0].shape[0])

    @property
    def shape(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def copy(self) -> "QNetwork":
        return QNetwork(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            alpha=self.alpha,
            output_activation=self.output_activation,
            x_shift=self.x_shift.copy(),
            x_scale=self.x_scale.copy(),
        )


@dataclass
class TrainingSet:
    inputs: np.ndarray  # (N, dim)
    targets: np.ndarray  # (N, 5)

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.targets):
            raise DimensionMismatchError(f"{len(self.inputs)} đầu vào nhưng {len(self.targets)} nhãn")
        if not np.all(np.isfinite(self.targets)):
            raise ModelError("nhãn huấn luyện chứa giá trị không hữu hạn")


@dataclass
class TrainResult:
    net: QNetwork
    final_loss: float
    epoch_losses: List[float] = field(default_factory=list)
    history: List[Tuple[int, int, float]] = field(default_factory=list)


def prelu(x: np.ndarray, alpha: float = PRELU_ALPHA) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, alpha * x)


def prelu_grad(x: np.ndarray, alpha: float = PRELU_ALPHA) -> np.ndarray:
    # derivative at exactly 0 is taken as 1
    return np.where(np.asarray(x) >= 0, 1.0, alpha)


def _output(z: np.ndarray, kind: str, alpha: float) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    return prelu(z, alpha)


def _output_grad(z: np.ndarray, kind: str, alpha: float) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "linear":
        return np.ones_like(z)
    return prelu_grad(z, alpha)


def init_network(
    layer_sizes: Sequence[int],
    seed: int,
    alpha: float = PRELU_ALPHA,
    output_activation: str = "prelu",
) -> QNetwork:
    """
    Khởi tạo bias 0 và trọng số N(0, 2/fan_in).

    Args:
        layer_sizes: [input, hidden..., output], ví dụ [11, 550, 550, 550, 550, 550, 5]
        seed: Seed sinh trọng số
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetwork(weights=weights, biases=biases, alpha=alpha, output_activation=output_activation)


def network_for(dim: int, cfg: TrainConfig, n_actions: int = len(ACTIONS)) -> QNetwork:
    sizes = [dim] + [cfg.hidden_units] * cfg.hidden_layers + [n_actions]
    return init_network(sizes, seed=cfg.seed, alpha=cfg.alpha, output_activation=cfg.output_activation)


def _forward_cache(net: QNetwork, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Trả về (activations, pre_activations); activations[0] là đầu vào đã chuẩn hóa."""
    a = (x - net.x_shift) / net.x_scale
    activations, pre = [a], []
    last = len(net.weights) - 1
    for idx, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = _output(z, net.output_activation, net.alpha) if idx == last else prelu(z, net.alpha)
        pre.append(z)
        activations.append(a)
    return activations, pre


def forward(net: QNetwork, x: np.ndarray) -> np.ndarray:
    """Q-values cho một trạng thái (dim,) hoặc lô (n, dim)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.shape[0]:
        raise DimensionMismatchError(f"đầu vào {x.shape[-1]} chiều, mạng nhận {net.shape[0]}")
    activations, _ = _forward_cache(net, np.atleast_2d(x))
    out = activations[-1]
    return out[0] if x.ndim == 1 else out


def loss(net: QNetwork, inputs: np.ndarray, targets: np.ndarray, chunk: int = 4096) -> float:
    """Σ_a (1/N) Σ_i (Q(x_i, a) − y_{i,a})²."""
    total = 0.0
    for start in range(0, len(inputs), chunk):
        diff = forward(net, inputs[start:start + chunk]) - targets[start:start + chunk]
        total += float(np.sum(diff * diff))
    return total / max(len(inputs), 1)


def loss_and_grads(net: QNetwork, inputs: np.ndarray, targets: np.ndarray) -> Tuple[float, Grads]:
    """Loss của lô và gradient theo (W_ℓ, b_ℓ) bằng lan truyền ngược."""
    activations, pre = _forward_cache(net, inputs)
    n = len(inputs)
    diff = activations[-1] - targets
    value = float(np.sum(diff * diff)) / n
    last = len(net.weights) - 1
    delta = (2.0 / n) * diff * _output_grad(pre[last], net.output_activation, net.alpha)
    grads: Grads = [None] * len(net.weights)  # type: ignore[list-item]
    for idx in range(last, -1, -1):
        grads[idx] = (activations[idx].T @ delta, delta.sum(axis=0))
        if idx:
            delta = (delta @ net.weights[idx].T) * prelu_grad(pre[idx - 1], net.alpha)
    return value, grads


def standardize(net: QNetwork, inputs: np.ndarray) -> QNetwork:
    std = inputs.std(axis=0)
    net.x_shift = inputs.mean(axis=0)
    net.x_scale = np.where(std > 0, std, 1.0)
    return net


def train(net: QNetwork, training_set: TrainingSet, cfg: TrainConfig) -> TrainResult:
    """
    Mini-batch Adam trên loss bậc hai, cfg.epochs lượt, xáo trộn theo seed mỗi lượt.

    Raises:
        DivergedLossError: loss của một lô không hữu hạn
    """
    net = net.copy()
    inputs, targets = training_set.inputs, training_set.targets
    if net.shape[0] != inputs.shape[1] or net.shape[-1] != targets.shape[1]:
        raise DimensionMismatchError(f"mạng {net.shape} không khớp dữ liệu {inputs.shape} → {targets.shape}")
    if cfg.epochs == 0:
        return TrainResult(net=net, final_loss=loss(net, inputs, targets))
    if cfg.standardize_inputs:
        standardize(net, inputs)

    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    result = TrainResult(net=net, final_loss=np.nan)
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(inputs))
        batch_losses = []
        for batch, start in enumerate(range(0, len(inputs), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            value, grads = loss_and_grads(net, inputs[idx], targets[idx])
            if not np.isfinite(value):
                raise DivergedLossError(f"loss không hữu hạn tại epoch {epoch}, batch {batch}")
            flat = [g[0] for g in grads] + [g[1] for g in grads]
            t += 1
            lr_t = cfg.learning_rate * np.sqrt(1.0 - cfg.beta2 ** t) / (1.0 - cfg.beta1 ** t)
            for p, g, m1, m2 in zip(params, flat, first, second):
                m1 *= cfg.beta1
                m1 += (1.0 - cfg.beta1) * g
                m2 *= cfg.beta2
                m2 += (1.0 - cfg.beta2) * g * g
                p -= lr_t * m1 / (np.sqrt(m2) + cfg.adam_eps)
            batch_losses.append(value)
            result.history.append((epoch, batch, value))
            show_log(message=f"train: epoch {epoch} batch {batch} loss {value:.6e}", level="debug")
        result.epoch_losses.append(float(np.mean(batch_losses)))
        show_log(message=f"train: epoch {epoch + 1}/{cfg.epochs} mean loss {result.epoch_losses[-1]:.6e}", level="info")
    result.final_loss = loss(net, inputs, targets)
    if not np.isfinite(result.final_loss):
        raise DivergedLossError("loss cuối không hữu hạn")
    return result


def _label_chunk(
    model: VarModel,
    econ: EconomicParams,
    utility: UtilitySpec,
    cfg: TrainConfig,
    states: np.ndarray,
    seed: np.random.SeedSequence,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    labels = np.empty((len(states), len(ACTIONS)))
    for a_idx in range(len(ACTIONS)):
        x_next = step(model, states, cfg.m_inner, rng)
        rets = returns_from_states(states[:, None, :], x_next, econ)
        expected = evaluate(utility, trade_return(Action.from_index(a_idx), rets, econ)).mean(axis=1)
        if cfg.loss_kind == CERTAINTY_EQUIVALENT:
            expected = inverse(utility, expected)
        labels[:, a_idx] = expected
    return labels


def build_training_set(model: VarModel, econ: EconomicParams, utility: UtilitySpec, cfg: TrainConfig) -> TrainingSet:
    """
    Sinh N trạng thái từ phân phối dừng; với mỗi trạng thái và mỗi hành động
    lấy M bước một-ngày, nhãn là (1/M)ΣU(R) hoặc U⁻¹ của giá trị đó (loss
    certainty-equivalent). Mỗi khối trạng thái có seed con riêng nên kết quả
    không phụ thuộc số luồng.
    """
    cfg.check_utility(utility)
    model = model if model.stationary_cov is not None else model.with_stationary()
    state_seed, label_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    states = sample_stationary(model, cfg.n_states, np.random.default_rng(state_seed))
    starts = list(range(0, cfg.n_states, cfg.chunk_size))
    chunk_seeds = label_seed.spawn(len(starts))
    labels_by_index: List[Optional[np.ndarray]] = [None] * len(starts)

    show_log(message=f"build_training_set: N={cfg.n_states} M={cfg.m_inner} chunks={len(starts)} jobs={cfg.jobs}", level="info")
    with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
        futures = {
            executor.submit(_label_chunk, model, econ, utility, cfg, states[s:s + cfg.chunk_size], chunk_seeds[i]): i
            for i, s in enumerate(starts)
        }
        for future in as_completed(futures):
            labels_by_index[futures[future]] = future.result()

    return TrainingSet(inputs=states, targets=np.vstack(labels_by_index))


def gradient_check(
    net: QNetwork,
    training_set: TrainingSet,
    k: int,
    seed: int = 0,
    h: float = 1e-5,
    margin: float = 1e-3,
    grad_fn: Callable[[QNetwork, np.ndarray, np.ndarray], Tuple[float, Grads]] = loss_and_grads,
) -> float:
    """
    So sánh gradient giải tích với sai phân trung tâm tại k tham số ngẫu nhiên.

    Các dòng có pre-activation gần điểm gãy của PReLU (|z| ≤ margin) bị bỏ qua
    nếu còn dòng khác để kiểm tra.

    Returns:
        Sai số tương đối lớn nhất
    """
    inputs, targets = training_set.inputs, training_set.targets
    _, pre = _forward_cache(net, inputs)
    hidden_pre = pre if net.output_activation == "prelu" else pre[:-1]
    safe = np.ones(len(inputs), dtype=bool)
    for z in hidden_pre:
        safe &= np.all(np.abs(z) > margin, axis=1)
    if safe.any():
        inputs, targets = inputs[safe], targets[safe]

    _, grads = grad_fn(net, inputs, targets)
    analytic = [g[0] for g in grads] + [g[1] for g in grads]
    shifted = net.copy()
    params = shifted.parameters()
    rng = np.random.default_rng(seed)
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(k):
        which = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat_idx = int(rng.integers(params[which].size))
        pos = np.unravel_index(flat_idx, params[which].shape)
        original = params[which][pos]
        params[which][pos] = original + h
        up = loss(shifted, inputs, targets)
        params[which][pos] = original - h
        down = loss(shifted, inputs, targets)
        params[which][pos] = original
        numeric = (up - down) / (2.0 * h)
        exact = float(analytic[which][pos])
        scale = max(abs(exact), abs(numeric), 1e-7)
        worst = max(worst, abs(exact - numeric) / scale)
    return worst


def save_network(net: QNetwork, path: str, config_hash: Optional[str] = None) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "shape": net.shape,
        "alpha": net.alpha,
        "output_activation": net.output_activation,
        "x_shift": net.x_shift,
        "x_scale": net.x_scale,
        "weights": [w.reshape(-1) for w in net.weights],
        "biases": net.biases,
    }
    return write_json(payload, path, config_hash=config_hash)


def load_network(path: str, expected_hash: Optional[str] = None) -> QNetwork:
    document = read_json(path, expected_hash=expected_hash)
    if document.get("schema_version") != SCHEMA_VERSION:
        raise ModelError(f"{path}: schema_version {document.get('schema_version')} không được hỗ trợ")
    shape = document["shape"]
    weights = [np.asarray(w, dtype=float).reshape(fan_in, fan_out) for w, fan_in, fan_out in zip(document["weights"], shape[:-1], shape[1:])]
    return QNetwork(
        weights=weights,
        biases=[np.asarray(b, dtype=float) for b in document["biases"]],
        alpha=float(document["alpha"]),
        output_activation=document["output_activation"],
        x_shift=np.asarray(document["x_shift"], dtype=float),
        x_scale=np.asarray(document["x_scale"], dtype=float),
    )


def write_training_log(result: TrainResult, path: str, config_hash: Optional[str] = None) -> str:
    frame = pd.DataFrame(result.history, columns=["epoch", "batch", "loss"])
    return write_csv(frame, path, config_hash=config_hash)
