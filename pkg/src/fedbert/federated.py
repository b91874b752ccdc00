"""Federated protocol: broadcast, local training per silo, sample-size-weighted averaging."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .errors import AggregationError, ContractError, DivergenceError
from .model import Bert, ParamSet
from .trainer import LocalTrainer, STAGES, TrainerConfig


@dataclass
class SiloHandle:
    """A simulated data holder.

    ``sample_size`` is the number of patients (pre-training) or notes
    (fine-tuning) held by the silo.  ``seed`` selects the silo's shuffling and
    dropout streams; it defaults to the silo index.
    """

    index: int
    data: Sequence
    sample_size: int
    seed: int | None = None

    def __post_init__(self):
        if self.sample_size < 1:
            raise ContractError(f"silo {self.index}: sample_size must be >= 1")
        if self.seed is None:
            self.seed = self.index


@dataclass
class GlobalCycleState:
    cycle: int
    params: ParamSet
    silo_losses: list[float]
    silo_sizes: list[int]
    wall_clock: float = 0.0
    silo_stats: list = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.silo_losses))

    def mean_of(self, attr: str) -> float:
        return float(np.mean([getattr(s, attr) for s in self.silo_stats]))


def aggregate(contributions: Sequence[tuple[ParamSet, int]]) -> ParamSet:
    """Weighted parameter average, each set weighted by ``n_k / sum(n)``.

    Terms are summed in the order given (ascending silo index by
    convention), so the result is bit-reproducible.
    """
    if not contributions:
        raise ContractError("aggregate needs at least one contribution")
    first = contributions[0][0]
    for k, (params, n) in enumerate(contributions):
        if int(n) < 1:
            raise ContractError(f"contribution {k} has sample size {n}")
        mismatch = first.first_mismatch(params)
        if mismatch is not None:
            raise AggregationError(f"contribution {k} is incongruent with contribution 0: {mismatch}")
    total = sum(int(n) for _, n in contributions)
    weights = [int(n) / total for _, n in contributions]
    out = []
    for name in first:
        acc = weights[0] * contributions[0][0][name]
        for w, (params, _) in zip(weights[1:], contributions[1:]):
            acc = acc + w * params[name]
        out.append((name, acc))
    return ParamSet(out)


def local_seed(base: int, silo_seed: int, round_index: int) -> int:
    """Seed for one local epoch: silo ``silo_seed`` in epoch/cycle ``round_index``."""
    return int(np.random.SeedSequence([int(base), int(silo_seed), int(round_index)]).generate_state(1)[0])


def _train_silo(model, params, silo: SiloHandle, config, stage, cycle, local_epochs):
    trainer = LocalTrainer(model, config, stage)  # optimizer state resets at every broadcast
    loss = np.nan
    for e in range(local_epochs):
        round_index = (cycle - 1) * local_epochs + e + 1
        try:
            params, loss = trainer.train_epoch(params, silo.data, local_seed(config.seed, silo.seed, round_index))
        except DivergenceError as exc:
            raise DivergenceError(exc.detail, silo=silo.index, step=exc.step, cycle=cycle) from exc
    return params, loss, trainer.history[-1]


def run_federated(
    model: Bert,
    initial: ParamSet,
    silos: Sequence[SiloHandle],
    T: int,
    trainer_config: TrainerConfig,
    stage: str,
    *,
    local_epochs: int = 1,
    workers: int = 1,
    on_cycle: Callable[[GlobalCycleState], None] | None = None,
) -> list[GlobalCycleState]:
    """Run ``T`` global cycles and return the full history.

    Every silo starts cycle ``t`` from a copy of the aggregate of cycle
    ``t - 1`` (the initial parameters for ``t = 1``), trains ``local_epochs``
    over its own data, and hands back only its parameters.
    """
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if local_epochs < 1:
        raise ContractError("local_epochs must be >= 1")
    if stage not in STAGES:
        raise ContractError(f"unknown stage {stage!r}")
    if not silos:
        raise ContractError("no silos")
    if len({s.index for s in silos}) != len(silos):
        raise ContractError("silo indices must be unique")
    ordered = sorted(silos, key=lambda s: s.index)
    history: list[GlobalCycleState] = []
    current = initial
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, T + 1):
            started = time.perf_counter()
            args = [(model, current, s, trainer_config, stage, t, local_epochs) for s in ordered]
            if pool is None:
                results = [_train_silo(*a) for a in args]
            else:
                results = list(pool.map(lambda a: _train_silo(*a), args))
            current = aggregate([(p, s.sample_size) for (p, _, _), s in zip(results, ordered)])
            state = GlobalCycleState(
                cycle=t,
                params=current,
                silo_losses=[float(loss) for _, loss, _ in results],
                silo_sizes=[s.sample_size for s in ordered],
                wall_clock=time.perf_counter() - started,
                silo_stats=[stats for _, _, stats in results],
            )
            history.append(state)
            if on_cycle is not None:
                on_cycle(state)
    finally:
        if pool is not None:
            pool.shutdown()
    return history


def run_centralized(
    model: Bert,
    initial: ParamSet,
    merged_dataset: Sequence,
    epochs: int,
    trainer_config: TrainerConfig,
    stage: str,
    *,
    on_epoch: Callable[[GlobalCycleState], None] | None = None,
) -> ParamSet:
    """Ordinary single-site training with the silo training routine.

    Epoch ``e`` uses the shuffling / dropout seed of silo 0 in cycle ``e`` and
    a fresh optimizer state, so this is exactly the one-silo federated run.
    """
    silo = SiloHandle(0, merged_dataset, max(1, len(merged_dataset)), seed=0)
    history = run_federated(model, initial, [silo], epochs, trainer_config, stage, on_cycle=on_epoch)
    return history[-1].params


class MetricsWriter:
    """Appends one JSON line per global cycle."""

    def __init__(self, path, checkpoint_dir=None, **context):
        self.path = Path(path)
        self.checkpoint_dir = None if checkpoint_dir is None else Path(checkpoint_dir)
        self.context = context
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, state: GlobalCycleState) -> None:
        ckpt = None
        if self.checkpoint_dir is not None:
            ckpt = str(save_checkpoint(state.params, self.checkpoint_dir / f"cycle_{state.cycle:03d}.fcrp"))
        record = dict(self.context)
        record.update(
            cycle=state.cycle,
            silo_losses=state.silo_losses,
            silo_sizes=state.silo_sizes,
            aggregate_checkpoint_path=ckpt,
        )
        if state.silo_stats and state.silo_stats[0].mlm_loss is not None:
            record["silo_mlm_losses"] = [s.mlm_loss for s in state.silo_stats]
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
