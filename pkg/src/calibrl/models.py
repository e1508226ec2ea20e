"""Learned reward model g_psi and dynamics model f_phi.

Each model is a GRU encoder over the step history followed by a dense head
fed with ``concat(h, A_t)``.  The encoder starts from a learned initial hidden
state and consumes one input per past step, ``concat(A_s, Y_{s+1})``; Y_0 is
the fixed prior status and carries no information, so it is not fed.  The
two models share nothing (separate parameter sets psi and phi).

Inputs are standardised with replay-dataset statistics and outputs are mapped
back to data units, so both losses are in the units of R_t and Y_{t+1}.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat
from .errors import TrainingDivergenceError
from .trajectory import ACTION_DIM

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    status_dim: int = 4
    hidden: int = 64
    head_hidden: tuple = (64, 64)
    lr_reward: float = 1e-4
    lr_dynamics: float = 1e-4
    clip_norm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.status_dim < 1 or self.hidden < 1 or any(w < 1 for w in self.head_hidden):
            raise ValueError("model widths must be positive")
        if not (self.lr_reward > 0 and self.lr_dynamics > 0):
            raise ValueError("learning rates must be positive")


# ----------------------------------------------------------------------------
# normalisation


class RunningStats:
    """Exact running mean/variance from accumulated sums (order independent up to rounding)."""

    def __init__(self, dim: int):
        self.n = 0
        self.s1 = np.zeros(dim)
        self.s2 = np.zeros(dim)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, len(self.s1))
        self.n += len(x)
        self.s1 += x.sum(axis=0)
        self.s2 += (x * x).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self.s1 / self.n if self.n else np.zeros_like(self.s1)

    @property
    def std(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.s1)
        var = np.maximum(self.s2 / self.n - self.mean**2, 0.0)
        sd = np.sqrt(var)
        # constant features (e.g. the sentinel status) are left unscaled
        return np.where(sd > 1e-8, sd, 1.0)

    def state(self) -> dict:
        return {"n": self.n, "s1": self.s1.copy(), "s2": self.s2.copy()}

    def load(self, n, s1, s2) -> None:
        self.n, self.s1, self.s2 = int(n), np.array(s1, dtype=float), np.array(s2, dtype=float)


class Normalizer:
    def __init__(self, status_dim: int):
        self.action = RunningStats(ACTION_DIM)
        self.status = RunningStats(status_dim)
        self.reward = RunningStats(1)

    def update(self, records) -> None:
        for r in records:
            self.action.update(r.action)
            self.status.update(r.next_status)
            self.reward.update([r.reward])

    def snapshot(self) -> dict:
        return {
            "a_mu": self.action.mean, "a_sd": self.action.std,
            "y_mu": self.status.mean, "y_sd": self.status.std,
            "r_mu": self.reward.mean, "r_sd": self.reward.std,
        }


# ----------------------------------------------------------------------------
# parameters


def _uniform(rng, fan_in, shape):
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, shape)


def init_recurrent(rng: np.random.Generator, in_dim: int, hidden: int, head_hidden, out_dim: int) -> dict:
    """GRU weights (gates z, r, candidate fused column-wise) plus an MLP head."""
    p = {
        "h0": np.zeros(hidden),
        "W": _uniform(rng, in_dim, (in_dim, 3 * hidden)),
        "U_zr": _uniform(rng, hidden, (hidden, 2 * hidden)),
        "U_h": _uniform(rng, hidden, (hidden, hidden)),
        "b": np.zeros(3 * hidden),
    }
    widths = [hidden + ACTION_DIM, *head_hidden, out_dim]
    for k in range(len(widths) - 1):
        p[f"L{k}_W"] = _uniform(rng, widths[k], (widths[k], widths[k + 1]))
        p[f"L{k}_b"] = np.zeros(widths[k + 1])
    return p


def _n_layers(params: dict) -> int:
    return sum(1 for k in params if k.endswith("_W") and k.startswith("L"))


def gru_step(P: dict, h: Tensor, x: Tensor) -> Tensor:
    H = P["U_h"].shape[0]
    gx = x @ P["W"] + P["b"]
    gzr = (gx[:, : 2 * H] + h @ P["U_zr"]).sigmoid()
    z, r = gzr[:, :H], gzr[:, H:]
    cand = (gx[:, 2 * H :] + (r * h) @ P["U_h"]).tanh()
    return h + z * (cand - h)


def head(P: dict, h: Tensor, a: Tensor) -> Tensor:
    x = concat([h, a], axis=1)
    n = _n_layers(P)
    for k in range(n):
        x = x @ P[f"L{k}_W"] + P[f"L{k}_b"]
        if k < n - 1:
            x = x.tanh()
    return x


def encode(P: dict, norm: dict, actions: np.ndarray, statuses: np.ndarray) -> Tensor:
    """actions (B, t, 36), statuses (B, t, d) = Y_{1:t}; returns h (B, H)."""
    B = actions.shape[0]
    h = P["h0"] * np.ones((B, 1))
    for s in range(actions.shape[1]):
        a = (actions[:, s] - norm["a_mu"]) / norm["a_sd"]
        y = (statuses[:, s] - norm["y_mu"]) / norm["y_sd"]
        h = gru_step(P, h, Tensor(np.hstack([a, y])))
    return h


def _tensors(params: dict, requires_grad: bool) -> dict:
    return {k: Tensor(v, requires_grad) for k, v in params.items()}


# ----------------------------------------------------------------------------
# the model pair


class WorldModel:
    """Reward and dynamics models plus the shared input normaliser."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, H = config.status_dim, config.hidden
        self.reward_params = init_recurrent(rng, ACTION_DIM + d, H, config.head_hidden, 1)
        self.dynamics_params = init_recurrent(rng, ACTION_DIM + d, H, config.head_hidden, d)
        self.normalizer = Normalizer(d)
        self.norm = self.normalizer.snapshot()

    def update_normalizer(self, records) -> None:
        self.normalizer.update(records)
        self.norm = self.normalizer.snapshot()

    # -- forward --------------------------------------------------------------

    def _check_history(self, actions, statuses):
        actions = np.asarray(actions, dtype=float).reshape(-1, ACTION_DIM)
        statuses = np.asarray(statuses, dtype=float)
        if statuses.ndim != 2 or statuses.shape[1] != self.config.status_dim or len(statuses) != len(actions) + 1:
            raise ValueError("history needs t actions and t + 1 statuses of the model's status width")
        return actions, statuses

    def _heads(self, P, norm, hist_a, hist_y, action):
        h = encode(P, norm, hist_a, hist_y)
        a = Tensor((np.atleast_2d(action) - norm["a_mu"]) / norm["a_sd"])
        return head(P, h, a)

    def reward_forward(self, actions, statuses, action) -> float:
        actions, statuses = self._check_history(actions, statuses)
        out = self._heads(_tensors(self.reward_params, False), self.norm, actions[None], statuses[None, 1:], np.asarray(action).reshape(1, -1))
        return float(out.data[0, 0] * self.norm["r_sd"][0] + self.norm["r_mu"][0])

    def dynamics_forward(self, actions, statuses, action) -> np.ndarray:
        actions, statuses = self._check_history(actions, statuses)
        out = self._heads(_tensors(self.dynamics_params, False), self.norm, actions[None], statuses[None, 1:], np.asarray(action).reshape(1, -1))
        return out.data[0] * self.norm["y_sd"] + self.norm["y_mu"]

    # -- training -------------------------------------------------------------

    def losses(self, records, reward_params=None, dynamics_params=None, requires_grad=False):
        """Mean squared errors (eps_dyn, eps_reward) as graph tensors, plus the leaf tensors."""
        Pr = _tensors(reward_params or self.reward_params, requires_grad)
        Pd = _tensors(dynamics_params or self.dynamics_params, requires_grad)
        norm = self.norm
        groups = {}
        for r in records:
            groups.setdefault(len(r.actions), []).append(r)
        N = len(records)
        eps_d, eps_r = Tensor(0.0), Tensor(0.0)
        for t in sorted(groups):
            g = groups[t]
            A = np.array([r.actions for r in g]).reshape(len(g), t, ACTION_DIM)
            Y = np.array([r.statuses[1:] for r in g]).reshape(len(g), t, self.config.status_dim)
            a = np.array([r.action for r in g])
            y_true = np.array([r.next_status for r in g])
            r_true = np.array([[r.reward] for r in g])
            r_hat = self._heads(Pr, norm, A, Y, a) * norm["r_sd"] + norm["r_mu"]
            y_hat = self._heads(Pd, norm, A, Y, a) * norm["y_sd"] + norm["y_mu"]
            eps_r = eps_r + (r_hat - r_true).square().sum()
            eps_d = eps_d + (y_hat - y_true).square().sum()
        return eps_d * (1.0 / N), eps_r * (1.0 / N), Pd, Pr

    def train_step(self, records, lr_reward: float | None = None, lr_dynamics: float | None = None):
        """One SGD update per model; returns the pre-update losses (eps_dyn, eps_reward)."""
        if not records:
            raise ValueError("empty batch")
        lr_r = self.config.lr_reward if lr_reward is None else lr_reward
        lr_d = self.config.lr_dynamics if lr_dynamics is None else lr_dynamics
        if not (lr_r > 0 and lr_d > 0):
            raise ValueError("learning rates must be positive")
        eps_d, eps_r, Pd, Pr = self.losses(records, requires_grad=True)
        ed, er = float(eps_d.data), float(eps_r.data)
        if not (np.isfinite(ed) and np.isfinite(er)):
            raise TrainingDivergenceError(f"non-finite loss (dyn={ed}, reward={er})")
        eps_d.backward()
        eps_r.backward()
        new_d = _sgd(self.dynamics_params, Pd, lr_d, self.config.clip_norm)
        new_r = _sgd(self.reward_params, Pr, lr_r, self.config.clip_norm)
        if not all(np.all(np.isfinite(v)) for v in (*new_d.values(), *new_r.values())):
            raise TrainingDivergenceError("non-finite parameters after update")
        # swap whole dicts so concurrent readers see either snapshot, never a mix
        self.dynamics_params, self.reward_params = new_d, new_r
        return ed, er

    # -- planning objective ---------------------------------------------------

    def objective_and_grad(self, actions, statuses, future, need_grad: bool = True):
        """Predicted reward sums for a batch of future action sequences.

        ``future`` has shape (P, n, 36) or (n, 36).  The dynamics model is
        rolled forward so every predicted status feeds the next step.  Returns
        (values (P,), gradient with the shape of ``future``).
        """
        actions, statuses = self._check_history(actions, statuses)
        fut = np.asarray(future, dtype=float)
        single = fut.ndim == 2
        fut = fut.reshape(-1, fut.shape[-2], ACTION_DIM) if not single else fut[None]
        if fut.shape[1] == 0:
            raise ValueError("future action sequence is empty")
        P = fut.shape[0]
        norm = self.norm
        Pr, Pd = _tensors(self.reward_params, False), _tensors(self.dynamics_params, False)
        hr = encode(Pr, norm, actions[None], statuses[None, 1:])
        hd = encode(Pd, norm, actions[None], statuses[None, 1:])
        hr = hr * np.ones((P, 1))
        hd = hd * np.ones((P, 1))
        X = Tensor(fut, requires_grad=need_grad)
        total = Tensor(np.zeros(P))
        for tau in range(fut.shape[1]):
            a = (X[:, tau] - norm["a_mu"]) * (1.0 / norm["a_sd"])
            r_hat = head(Pr, hr, a) * norm["r_sd"] + norm["r_mu"]
            total = total + r_hat.reshape(P)
            if tau + 1 < fut.shape[1]:
                y_std = head(Pd, hd, a)  # already in standardised units
                x_in = concat([a, y_std], axis=1)
                hr = gru_step(Pr, hr, x_in)
                hd = gru_step(Pd, hd, x_in)
        values = total.data.copy()
        grad = None
        if need_grad:
            total.sum().backward()
            grad = X.grad if X.grad is not None else np.zeros_like(fut)
        if single:
            return values[0], (None if grad is None else grad[0])
        return values, grad

    def grad_reward_wrt_actions(self, actions, statuses, future) -> np.ndarray:
        return self.objective_and_grad(actions, statuses, future)[1]

    # -- persistence ----------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        arrays = {f"reward/{k}": v for k, v in self.reward_params.items()}
        arrays.update({f"dynamics/{k}": v for k, v in self.dynamics_params.items()})
        for name in ("action", "status", "reward"):
            st = getattr(self.normalizer, name)
            arrays[f"norm/{name}/s1"] = st.s1
            arrays[f"norm/{name}/s2"] = st.s2
        np.savez(d / "models.npz", **arrays)
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": {**asdict(self.config), "head_hidden": list(self.config.head_hidden)},
            "shapes": {k: list(v.shape) for k, v in arrays.items()},
            "norm_counts": {n: getattr(self.normalizer, n).n for n in ("action", "status", "reward")},
        }
        (d / "models.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "WorldModel":
        d = Path(directory)
        meta = json.loads((d / "models.json").read_text())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported model checkpoint version {meta.get('version')}")
        cfg = dict(meta["config"])
        cfg["head_hidden"] = tuple(cfg["head_hidden"])
        model = cls(ModelConfig(**cfg))
        with np.load(d / "models.npz") as z:
            model.reward_params = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("reward/")}
            model.dynamics_params = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("dynamics/")}
            for name in ("action", "status", "reward"):
                getattr(model.normalizer, name).load(meta["norm_counts"][name], z[f"norm/{name}/s1"], z[f"norm/{name}/s2"])
        model.norm = model.normalizer.snapshot()
        return model


def _sgd(params: dict, tensors: dict, lr: float, clip: float) -> dict:
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(params[k])) for k, t in tensors.items()}
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    scale = min(1.0, clip / norm) if norm > 0 else 1.0
    return {k: params[k] - lr * scale * grads[k] for k in params}
