"""Full-batch training as a discretised gradient flow, with trajectory recording."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ReportError
from .gradients import LossKind, analytic_gradients, evaluate
from .model import GnnParams
from .theory import DecompositionTerms, gram_lambdas, loss_reduction_decomposition

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind.SQUARED
    lr: float = 1e-3
    steps: int = 1000
    record_every: int = 1
    integrator: str = "euler"
    seed: int = 0
    compute_decomposition: bool = False
    snapshot_params: bool = False
    optimizer: str = "gd"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.steps < 0:
            raise ConfigurationError("steps must be nonnegative")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be at least 1")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "adam" and self.integrator != "euler":
            raise ConfigurationError("adam is a discrete optimizer; use integrator='euler'")
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.value, "lr": self.lr, "steps": self.steps,
            "record_every": self.record_every, "integrator": self.integrator, "seed": self.seed,
            "compute_decomposition": self.compute_decomposition,
            "snapshot_params": self.snapshot_params, "optimizer": self.optimizer,
            "adam_betas": list(self.adam_betas), "adam_eps": self.adam_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Checkpoint:
    step: int
    t: float
    loss: float
    lambdas: tuple
    decomposition: Optional[DecompositionTerms] = None
    params: Optional[GnnParams] = None


@dataclass(frozen=True)
class TrajectoryRecord:
    checkpoints: tuple
    status: str = "ok"
    optimizer: str = "gd"
    lr: float = 0.0

    @property
    def H(self) -> int:
        return len(self.checkpoints[0].lambdas) - 1 if self.checkpoints else 0

    def csv_header(self) -> list:
        return (["step", "t", "loss"] + [f"lambda_l{l}" for l in range(self.H + 1)]
                + ["first_terms_sum", "second_terms_sum"])

    def csv_rows(self) -> list:
        rows = []
        for cp in self.checkpoints:
            d = cp.decomposition
            rows.append([cp.step, cp.t, cp.loss, *cp.lambdas,
                         d.sum_first if d is not None else float("nan"),
                         d.sum_second if d is not None else float("nan")])
        return rows


def _flow(params, X, S, idx, Y, kind, theta):
    p = params.unflatten(theta)
    rg = evaluate(p, X, S, idx, Y, kind)
    return rg.loss, analytic_gradients(p, X, S, idx, rg).flatten()


def _checkpoint(params, X, S, idx, Y, cfg, step, loss):
    decomp = None
    if cfg.compute_decomposition and not params.arch.relu:
        rg = evaluate(params, X, S, idx, Y, cfg.loss)
        decomp = loss_reduction_decomposition(params, X, S, idx, rg)
    return Checkpoint(step, step * cfg.lr, float(loss), tuple(gram_lambdas(params)), decomp,
                      params if cfg.snapshot_params else None)


def train(params: GnnParams, X, S, idx, Y, cfg: TrainConfig):
    """Run ``cfg.steps`` updates and return ``(final_params, TrajectoryRecord)``.

    Checkpoints are taken at step 0, every ``record_every`` steps and at the
    final step. ``t = step * lr`` is the elapsed flow time. A non-finite loss or
    one above ``DIVERGENCE_THRESHOLD`` stops the run with status ``diverged``;
    the returned params are the last finite ones.
    """
    idx = np.asarray(idx, dtype=np.int64)
    theta = params.flatten()
    kind = cfg.loss
    loss, g = _flow(params, X, S, idx, Y, kind, theta)
    cps = [_checkpoint(params, X, S, idx, Y, cfg, 0, loss)]
    status = "ok"
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = cfg.adam_betas
    lr = cfg.lr
    for step in range(1, cfg.steps + 1):
        if cfg.optimizer == "adam":
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            new = theta - lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        elif cfg.integrator == "euler":
            new = theta - lr * g
        else:
            k1 = g
            k2 = _flow(params, X, S, idx, Y, kind, theta - 0.5 * lr * k1)[1]
            k3 = _flow(params, X, S, idx, Y, kind, theta - 0.5 * lr * k2)[1]
            k4 = _flow(params, X, S, idx, Y, kind, theta - lr * k3)[1]
            new = theta - (lr / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(new)):
            status = "diverged"
            break
        new_loss, new_g = _flow(params, X, S, idx, Y, kind, new)
        if not math.isfinite(new_loss) or new_loss > DIVERGENCE_THRESHOLD:
            status = "diverged"
            logger.warning("training diverged at step %d (loss %g)", step, new_loss)
            break
        theta, loss, g = new, new_loss, new_g
        if step % cfg.record_every == 0 or step == cfg.steps:
            cps.append(_checkpoint(params.unflatten(theta), X, S, idx, Y, cfg, step, loss))
    final = params.unflatten(theta)
    return final, TrajectoryRecord(tuple(cps), status, cfg.optimizer, cfg.lr)


def lambda_T_path(traj: TrajectoryRecord, layer: int) -> list:
    """``[(t, min_{s <= t} lambda_s^(layer))]`` over checkpoints."""
    if not traj.checkpoints:
        raise ReportError("empty trajectory")
    out, run = [], math.inf
    for cp in traj.checkpoints:
        run = min(run, cp.lambdas[layer])
        out.append((cp.t, run))
    return out
