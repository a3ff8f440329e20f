"""
Mô hình vector AR(1) quanh trạng thái mode:

    ψ_{t+1} = μ + A ψ_t + Z_{t+1},  ψ_t = X_t − X*,  Z ~ N(0, Σ)

gồm ước lượng bình phương tối thiểu, mô-men dừng, lấy mẫu Monte-Carlo và
chuyển trạng thái mô phỏng sang lợi suất của các chiến lược rolling.
"""

from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from curve_service.curve import DT, estimate_mode, MIN_MODE_SAMPLES
from utils.artifacts import read_json, write_json
from utils.errors import DimensionMismatchError, ModelError
from utils.logger import show_log

SCHEMA_VERSION = 1
RCOND_TOL = 1e-12
STATIONARY_MARGIN = 1e-9
LYAPUNOV_TOL = 1e-12
LYAPUNOV_MAX_ITER = 1_000_000

Seed = Union[int, np.random.Generator, np.random.SeedSequence]


class SingularCovariateError(ModelError):
    """Ma trận scatter của trạng thái trễ không khả nghịch."""

    code = "singular_covariate"


class NonStationaryError(ModelError):
    """Bán kính phổ của A không nhỏ hơn 1."""

    code = "non_stationary"


@dataclass(frozen=True)
class EconomicParams:
    r: float = 0.0
    dt: float = DT

    def __post_init__(self) -> None:
        if self.r < 0:
            raise ValueError("Lãi suất r phải ≥ 0.")
        if self.dt <= 0:
            raise ValueError("Δt phải > 0.")


@dataclass(frozen=True)
class VarModel:
    mode: np.ndarray
    mu: np.ndarray
    a_matrix: np.ndarray
    sigma: np.ndarray
    stationary_mean: Optional[np.ndarray] = field(default=None, compare=False)
    stationary_cov: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return len(self.mode)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.a_matrix))))

    def with_stationary(self) -> "VarModel":
        mean, cov = stationary_moments(self)
        return replace(self, stationary_mean=mean, stationary_cov=cov)


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """L với L Lᵀ = matrix; trị riêng âm (do sai số số học) bị cắt về 0."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def center_states(states: np.ndarray, mode: np.ndarray) -> np.ndarray:
    """ψ_t = X_t − X*."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    mode = np.asarray(mode, dtype=float)
    if states.shape[-1] != mode.shape[-1]:
        raise DimensionMismatchError(f"trạng thái có {states.shape[-1]} chiều, mode có {mode.shape[-1]}")
    return states - mode


def split_segments(psi: np.ndarray, breaks: Iterable[int] = ()) -> List[np.ndarray]:
    """Cắt chuỗi tại các chuyển tiếp bị loại (chỉ số t của cặp t → t+1)."""
    cuts = sorted({int(b) + 1 for b in breaks if 0 <= int(b) < len(psi) - 1})
    return [seg for seg in np.split(psi, cuts) if len(seg)]


def fit_var_segments(segments: Sequence[np.ndarray]) -> VarModel:
    """
    Ước lượng (μ, A, Σ) từ các đoạn liên tục; chỉ dùng chuyển tiếp nằm trong
    cùng một đoạn, còn ψ̄ là trung bình trên mọi điểm.
    """
    segments = [np.atleast_2d(np.asarray(s, dtype=float)) for s in segments]
    dims = {s.shape[1] for s in segments}
    if len(dims) != 1:
        raise DimensionMismatchError(f"các đoạn có số chiều khác nhau: {sorted(dims)}")
    dim = dims.pop()
    points = np.vstack(segments)
    psi_bar = points.mean(axis=0)
    prev = np.vstack([s[:-1] for s in segments])
    nxt = np.vstack([s[1:] for s in segments])
    n_trans = len(prev)
    if n_trans <= dim:
        raise SingularCovariateError(f"cần hơn {dim} chuyển tiếp để ước lượng A, có {n_trans}")

    lag_c = prev - psi_bar
    scatter = lag_c.T @ lag_c
    cond = np.linalg.cond(scatter)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_TOL:
        raise SingularCovariateError(f"ma trận scatter suy biến (cond={cond:.3e})")
    cross = (nxt - psi_bar).T @ lag_c
    a_hat = np.linalg.solve(scatter, cross.T).T
    mu_hat = (np.eye(dim) - a_hat) @ psi_bar
    resid = nxt - mu_hat - prev @ a_hat.T
    sigma_hat = resid.T @ resid / n_trans
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    return VarModel(mode=np.zeros(dim), mu=mu_hat, a_matrix=a_hat, sigma=sigma_hat)


def fit_var(psi: np.ndarray, breaks: Iterable[int] = ()) -> VarModel:
    """
    Ước lượng bình phương tối thiểu cho ψ_{t+1} = μ + Aψ_t + Z_{t+1}.

    Args:
        psi: Chuỗi trạng thái đã trừ mode, shape (T, dim)
        breaks: Chỉ số t của các chuyển tiếp t → t+1 cần loại (điểm nối fold)

    Returns:
        VarModel (mode = 0; gán mode thật ở bước gọi)
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    return fit_var_segments(split_segments(psi, breaks))


def stationary_moments(model: VarModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Trung bình dừng (I − A)⁻¹μ và hiệp phương sai S giải S = A S Aᵀ + Σ bằng
    lặp điểm bất động.
    """
    radius = model.spectral_radius()
    if radius >= 1.0 - STATIONARY_MARGIN:
        raise NonStationaryError(f"bán kính phổ của A = {radius:.6f} ≥ 1")
    a, sigma = model.a_matrix, model.sigma
    mean = np.linalg.solve(np.eye(model.dim) - a, model.mu)
    cov = sigma.copy()
    for iteration in range(LYAPUNOV_MAX_ITER):
        nxt = a @ cov @ a.T + sigma
        if np.linalg.norm(nxt - cov, "fro") < LYAPUNOV_TOL:
            cov = nxt
            break
        cov = nxt
    else:
        show_log(message=f"stationary_moments: Lyapunov iteration hit the {LYAPUNOV_MAX_ITER} cap", level="warning")
    return mean, 0.5 * (cov + cov.T)


def _stationary(model: VarModel) -> VarModel:
    return model if model.stationary_cov is not None else model.with_stationary()


def sample_stationary(model: VarModel, n: int, seed: Seed) -> np.ndarray:
    """n mẫu i.i.d. X₀ = X* + mean + L z từ phân phối dừng; shape (n, dim)."""
    model = _stationary(model)
    if n <= 0:
        return np.empty((0, model.dim))
    z = _rng(seed).standard_normal((n, model.dim))
    return model.mode + model.stationary_mean + z @ psd_factor(model.stationary_cov).T


def step(model: VarModel, x: np.ndarray, m: int, seed: Seed) -> np.ndarray:
    """
    m bước một-ngày độc lập X_{t+1} = X* + μ + A(x − X*) + Z.

    x có thể là một trạng thái (dim,) -> (m, dim) hoặc lô (k, dim) -> (k, m, dim).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionMismatchError(f"trạng thái có {x.shape[-1]} chiều, mô hình có {model.dim}")
    mean_next = model.mode + model.mu + (x - model.mode) @ model.a_matrix.T
    z = _rng(seed).standard_normal(x.shape[:-1] + (m, model.dim))
    return mean_next[..., None, :] + z @ psd_factor(model.sigma).T


def returns_from_states(x_t: np.ndarray, x_next: np.ndarray, econ: EconomicParams) -> np.ndarray:
    """
    ΔI^i/I^i = (r + X_{t+1}^{d+i})Δt + (exp(X_{t+1}^i) − exp(X_t^i))/exp(X_t^i), i = 1..d.

    Broadcast theo các trục đầu; trục cuối là trạng thái (2d+1 chiều).
    """
    x_t = np.asarray(x_t, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if x_t.shape[-1] != x_next.shape[-1] or x_t.shape[-1] % 2 == 0:
        raise DimensionMismatchError(f"trạng thái không hợp lệ: {x_t.shape[-1]} và {x_next.shape[-1]} chiều")
    d = (x_t.shape[-1] - 1) // 2
    roll_next = x_next[..., d + 1:]
    return (econ.r + roll_next) * econ.dt + np.expm1(x_next[..., 1:d + 1] - x_t[..., 1:d + 1])


def simulate_index_paths(
    model: VarModel,
    econ: EconomicParams,
    horizon: int,
    n_paths: int,
    seed: Seed,
    x0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mô phỏng giá trị chiến lược rolling một tháng I¹ và năm tháng I⁵ (I₀ = 1).

    Returns:
        (I¹, I⁵), mỗi mảng shape (n_paths, horizon + 1)
    """
    model = _stationary(model)
    rng = _rng(seed)
    x = sample_stationary(model, n_paths, rng) if x0 is None else np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    d = (model.dim - 1) // 2
    factor = psd_factor(model.sigma)
    index = np.ones((n_paths, horizon + 1, d))
    for k in range(horizon):
        x_next = model.mode + model.mu + (x - model.mode) @ model.a_matrix.T + rng.standard_normal((n_paths, model.dim)) @ factor.T
        index[:, k + 1] = index[:, k] * (1.0 + returns_from_states(x, x_next, econ))
        x = x_next
    return index[:, :, 0], index[:, :, d - 1]


def fit_curve_model(
    states: np.ndarray,
    breaks: Iterable[int] = (),
    min_mode_samples: int = MIN_MODE_SAMPLES,
) -> VarModel:
    """
    Pipeline đầy đủ: mode → center → fit_var (loại breaks) → mô-men dừng.
    """
    states = np.asarray(states, dtype=float)
    mode = estimate_mode(states, min_samples=min_mode_samples)
    fitted = fit_var(center_states(states, mode), breaks)
    model = replace(fitted, mode=mode).with_stationary()
    show_log(
        message=f"fit_curve_model: {len(states)} states, {len(set(breaks))} breaks, spectral radius {model.spectral_radius():.4f}",
        level="info",
    )
    return model


def save_model(model: VarModel, path: str, config_hash: Optional[str] = None) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "dim": model.dim,
        "mode": model.mode,
        "mu": model.mu,
        "a_matrix": model.a_matrix.reshape(-1),
        "sigma": model.sigma.reshape(-1),
    }
    return write_json(payload, path, config_hash=config_hash)


def load_model(path: str, expected_hash: Optional[str] = None) -> VarModel:
    document = read_json(path, expected_hash=expected_hash)
    if document.get("schema_version") != SCHEMA_VERSION:
        raise ModelError(f"{path}: schema_version {document.get('schema_version')} không được hỗ trợ")
    dim = int(document["dim"])
    model = VarModel(
        mode=np.asarray(document["mode"], dtype=float),
        mu=np.asarray(document["mu"], dtype=float),
        a_matrix=np.asarray(document["a_matrix"], dtype=float).reshape(dim, dim),
        sigma=np.asarray(document["sigma"], dtype=float).reshape(dim, dim),
    )
    return model.with_stationary()
