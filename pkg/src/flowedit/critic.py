"""Value ensemble over (observation, executed action chunk).

E layer-normalized Q networks with slow target copies; TD targets use the
minimum over M randomly drawn target networks, selection and the edit
objective use the ensemble mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import nn


@dataclass
class QEnsemble:
    nets: list  # E online MlpParams
    target_nets: list
    subsample: int = 2  # M networks drawn per TD target
    gamma: float = 0.99
    tau_q: float = 5e-3

    @property
    def size(self) -> int:
        return len(self.nets)

    @staticmethod
    def init(
        rng,
        obs_dim: int,
        executed_dim: int,
        ensemble_size: int = 10,
        subsample: int = 2,
        gamma: float = 0.99,
        tau_q: float = 5e-3,
        hidden=(256, 256, 256),
    ) -> "QEnsemble":
        nets = [
            nn.init_mlp(rng, [obs_dim + executed_dim, *hidden, 1], activation="relu", layer_norm=True)
            for _ in range(ensemble_size)
        ]
        targets = [nn.mlp_from_arrays(n, [a.copy() for a in nn.mlp_arrays(n)]) for n in nets]
        return QEnsemble(nets=nets, target_nets=targets, subsample=subsample, gamma=gamma, tau_q=tau_q)

    def value_cap(self) -> float:
        return 1.0 / (1.0 - self.gamma)


def _q_input(s, chunk):
    s2 = ag.reshape(s, (1, -1)) if ag.value_of(s).ndim == 1 else s
    c2 = ag.reshape(chunk, (1, -1)) if ag.value_of(chunk).ndim == 1 else chunk
    return ag.concat([s2, c2], axis=-1)


def q_forward(net: nn.MlpParams, s, chunk):
    """One network's value; batched (B,) output."""
    out = nn.forward_mlp(net, _q_input(s, chunk))
    return ag.reshape(out, (-1,))


def q_value(ensemble: QEnsemble, i: int, s, chunk) -> np.ndarray:
    if not 0 <= i < ensemble.size:
        raise IndexError(f"ensemble index {i} out of range [0, {ensemble.size})")
    return ag.value_of(q_forward(ensemble.nets[i], s, chunk))


def q_all(nets: list, s, chunk) -> np.ndarray:
    """(E, B) matrix of plain values across an ensemble half."""
    return np.stack([ag.value_of(q_forward(n, s, chunk)) for n in nets])


def q_select(ensemble: QEnsemble, s, chunk, use_target: bool = False) -> np.ndarray:
    """Ensemble-mean value used for candidate selection; (B,)."""
    nets = ensemble.target_nets if use_target else ensemble.nets
    return q_all(nets, s, chunk).mean(axis=0)


def q_select_traced(ensemble: QEnsemble, s, chunk_node):
    """Ensemble mean with gradient flowing only into the chunk argument."""
    total = None
    for net in ensemble.nets:
        q = q_forward(net, s, chunk_node)
        total = q if total is None else ag.add(total, q)
    return ag.mul(total, 1.0 / ensemble.size)


def td_target(
    ensemble: QEnsemble,
    reward_agg: np.ndarray,
    s_next: np.ndarray,
    next_chunk: np.ndarray,
    done: np.ndarray,
    gamma: float,
    steps: int | np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """reward + (1-done) * gamma^C * min over M drawn target nets; clipped.

    `next_chunk` must already be the value-argmax chunk at s_next.  `steps`
    is the executed-step count C (scalar or per-row).  Pass done=1 for
    transitions whose bootstrap is excluded (terminal or truncated tails).
    """
    reward_agg = np.asarray(reward_agg, float).reshape(-1)
    done = np.asarray(done, float).reshape(-1)
    b = reward_agg.shape[0]
    qs = q_all(ensemble.target_nets, s_next, next_chunk)  # (E, B)
    m = min(ensemble.subsample, ensemble.size)
    idx = np.stack([rng.choice(ensemble.size, size=m, replace=False) for _ in range(b)])  # (B, M)
    q_min = qs[idx, np.arange(b)[:, None]].min(axis=1)
    factor = np.power(gamma, np.asarray(steps, float))
    target = reward_agg + (1.0 - done) * factor * q_min
    return np.clip(target, 0.0, 1.0 / (1.0 - gamma))


def critic_loss(nets: list, s: np.ndarray, chunk: np.ndarray, targets: np.ndarray):
    """Mean over batch and ensemble of squared TD error; targets constant."""
    targets = np.asarray(targets, float).reshape(-1)
    total = None
    for net in nets:
        err = ag.sub(q_forward(net, s, chunk), targets)
        term = ag.mean_(ag.square(err))
        total = term if total is None else ag.add(total, term)
    return ag.mul(total, 1.0 / len(nets))


def polyak_update_targets(ensemble: QEnsemble, tau: float | None = None) -> QEnsemble:
    tau = ensemble.tau_q if tau is None else tau
    new_targets = [nn.polyak_mlp(t, o, tau) for t, o in zip(ensemble.target_nets, ensemble.nets)]
    return replace(ensemble, target_nets=new_targets)
