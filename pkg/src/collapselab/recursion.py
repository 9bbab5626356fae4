"""The generation-chain engine.

Generation 0 fits on a fresh draw of real data; every generation t >= 1
refits a brand-new kernel from scratch (no warm starting, the surrogate
analogue of reinitializing from pretrained weights) on the training set
composed for it: pure synthetic, mixed, volume-scaled, or quality-filtered.
Each generation emits the synthetic corpus the next generation will train
on; the training-set size schedule therefore also dictates emission sizes,
shifted by one (generation t emits schedule(t+1) records, the last emits its
own size).

All randomness is derived from (master seed, generation, purpose), so
changing only generation t's stream leaves earlier snapshots bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .corpus import Corpus, Document, Provenance
from .errors import CollapseLabError, InsufficientPoolError, ValidationError
from .genkernel import (
    SamplerConfig,
    fit_ngram,
    fit_population_model,
    sample_population,
    sample_text,
)
from .imagemetrics import FeatureRecord
from .mitigation import (
    ImageFilterConfig,
    TextFilterConfig,
    draw_from_survivors,
    filter_image_pool,
    filter_text_pools,
)
from .seeding import derive_seed

TEXT_KERNEL = "text"
POPULATION_KERNEL = "population"


@dataclass(frozen=True)
class ChainConfig:
    """Everything one chain needs: sizes, mixing, filtering, kernel, seed."""

    generations: int  # G; the chain runs generations 0..G
    schedule: tuple[int, ...]  # training-set size per generation, length G+1
    real_fraction: float | tuple[float, ...] = 0.0  # rho_real for t >= 1
    kernel_kind: str = TEXT_KERNEL
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    master_seed: int = 0
    # text kernel hyperparameters
    order: int = 3
    add_k: float = 0.01
    # population kernel hyperparameters
    components: int = 4
    em_tolerance: float = 1e-6
    em_max_iterations: int = 200
    # optional quality-aware filtering
    text_filter: TextFilterConfig | None = None
    image_filter: ImageFilterConfig | None = None
    # memory policy: keep fitted models on snapshots, or release after the
    # per-generation callback has seen them
    retain_models: bool = True

    def __post_init__(self):
        if self.generations < 1:
            raise ValidationError("a chain needs at least generations=1")
        if len(self.schedule) != self.generations + 1:
            raise ValidationError(
                f"schedule must list {self.generations + 1} sizes, got {len(self.schedule)}"
            )
        if any(s < 1 for s in self.schedule):
            raise ValidationError("schedule sizes must be positive")
        if self.kernel_kind not in (TEXT_KERNEL, POPULATION_KERNEL):
            raise ValidationError(f"unknown kernel kind {self.kernel_kind!r}")
        for t in range(1, self.generations + 1):
            rho = self.rho_at(t)
            if not (0.0 <= rho <= 1.0):
                raise ValidationError(f"real fraction at generation {t} is {rho!r}")

    def rho_at(self, t: int) -> float:
        if isinstance(self.real_fraction, tuple):
            if len(self.real_fraction) != self.generations + 1:
                raise ValidationError(
                    "per-generation real fractions must cover generations 0..G"
                )
            return float(self.real_fraction[t])
        return float(self.real_fraction)

    def emission_size(self, t: int) -> int:
        if t < self.generations:
            return int(self.schedule[t + 1])
        return int(self.schedule[self.generations])


@dataclass(frozen=True)
class CompositionRecord:
    """What went into one generation's training set."""

    generation: int
    total: int
    real_count: int
    synthetic_counts: dict[int, int]  # source generation -> count
    filtered: bool
    synthetic_pool_size: int
    synthetic_survivors: int
    real_pool_size: int
    real_survivors: int

    def __post_init__(self):
        if self.real_count + sum(self.synthetic_counts.values()) != self.total:
            raise ValidationError("composition counts do not sum to the training size")


@dataclass
class GenerationSnapshot:
    """One fit-then-sample round: model, emitted corpus, composition, and a
    metric report filled in by callers."""

    generation: int
    model: object | None
    synthetic: list
    composition: CompositionRecord
    metrics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChainResult:
    snapshots: tuple[GenerationSnapshot, ...]
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None


def _provenance_of(record) -> Provenance:
    return record.provenance


def compose_training_set(
    t: int,
    real_pool: Sequence,
    synthetic_pool: Sequence | None,
    rho_real: float,
    total: int,
    seed: int,
    text_filter: TextFilterConfig | None = None,
    image_filter: ImageFilterConfig | None = None,
    kernel_kind: str = TEXT_KERNEL,
) -> tuple[list, CompositionRecord]:
    """floor(rho * total) fresh real draws (without replacement) plus the
    synthetic remainder from the previous generation's output. When a filter
    is supplied, selection happens before counting; survivors exceeding the
    budget are drawn uniformly (seeded)."""
    if not (0.0 <= rho_real <= 1.0):
        raise ValidationError("rho_real must lie in [0, 1]")
    n_real = int(rho_real * total)
    n_synth = total - n_real

    real_candidates = list(real_pool)
    synth_candidates = list(synthetic_pool) if synthetic_pool is not None else []
    filtered = False
    syn_pool_size = len(synth_candidates)
    real_pool_size = len(real_candidates)

    if n_synth > 0 and synth_candidates:
        if kernel_kind == TEXT_KERNEL and text_filter is not None:
            synth_candidates, real_candidates, _logs = filter_text_pools(
                synth_candidates, real_candidates, text_filter
            )
            filtered = True
        elif kernel_kind == POPULATION_KERNEL and image_filter is not None:
            synth_candidates, _log = filter_image_pool(
                synth_candidates, real_candidates, image_filter
            )
            filtered = True

    if n_real > len(real_candidates):
        raise InsufficientPoolError(
            f"generation {t}: need {n_real} real records but only "
            f"{len(real_candidates)} survive (deficit {n_real - len(real_candidates)})",
            deficit=n_real - len(real_candidates),
        )
    if n_synth > len(synth_candidates):
        raise InsufficientPoolError(
            f"generation {t}: need {n_synth} synthetic records but only "
            f"{len(synth_candidates)} survive (deficit {n_synth - len(synth_candidates)})",
            deficit=n_synth - len(synth_candidates),
        )

    real_draw = draw_from_survivors(real_candidates, n_real, derive_seed(seed, t, "real-draw"))
    synth_draw = draw_from_survivors(
        synth_candidates, n_synth, derive_seed(seed, t, "synthetic-draw")
    )

    synth_by_gen: dict[int, int] = {}
    for rec in synth_draw:
        prov = _provenance_of(rec)
        if prov.is_real:
            raise ValidationError("synthetic pool contains real-provenance records")
        synth_by_gen[prov.generation] = synth_by_gen.get(prov.generation, 0) + 1

    record = CompositionRecord(
        generation=t,
        total=total,
        real_count=len(real_draw),
        synthetic_counts=synth_by_gen,
        filtered=filtered,
        synthetic_pool_size=syn_pool_size,
        synthetic_survivors=len(synth_candidates),
        real_pool_size=real_pool_size,
        real_survivors=len(real_candidates),
    )
    return real_draw + synth_draw, record


def run_chain(
    real_pool,
    config: ChainConfig,
    on_generation: Callable[[GenerationSnapshot], None] | None = None,
) -> ChainResult:
    """Run generations 0..G. Returns all completed snapshots; a kernel
    failure aborts the chain and reports the error alongside the snapshots
    that did complete (late-generation numerical failures stay analyzable).
    """
    pool = list(real_pool.documents) if isinstance(real_pool, Corpus) else list(real_pool)
    if not pool:
        raise ValidationError("real pool is empty")
    if config.kernel_kind == TEXT_KERNEL and not isinstance(pool[0], Document):
        raise ValidationError("text chains need a Document pool")
    if config.kernel_kind == POPULATION_KERNEL and not isinstance(pool[0], FeatureRecord):
        raise ValidationError("population chains need a FeatureRecord pool")
    if len(pool) < config.schedule[0]:
        raise ValidationError(
            f"real pool of {len(pool)} is smaller than the generation-0 size "
            f"{config.schedule[0]}"
        )

    snapshots: list[GenerationSnapshot] = []
    previous_emission: list | None = None
    for t in range(config.generations + 1):
        rho = 1.0 if t == 0 else config.rho_at(t)
        try:
            training, composition = compose_training_set(
                t,
                pool,
                previous_emission,
                rho,
                int(config.schedule[t]),
                seed=derive_seed(config.master_seed, "compose", t),
                text_filter=None if t == 0 else config.text_filter,
                image_filter=None if t == 0 else config.image_filter,
                kernel_kind=config.kernel_kind,
            )
            emission_size = config.emission_size(t)
            if config.kernel_kind == TEXT_KERNEL:
                model = fit_ngram(training, order=config.order, add_k=config.add_k)
                synthetic = sample_text(
                    model,
                    config.sampler,
                    emission_size,
                    seed=derive_seed(config.master_seed, "emit", t),
                    generation=t,
                )
            else:
                gmm, attrs = fit_population_model(
                    training,
                    m=config.components,
                    tolerance=config.em_tolerance,
                    max_iterations=config.em_max_iterations,
                    seed=derive_seed(config.master_seed, "em", t),
                )
                model = (gmm, attrs)
                synthetic = sample_population(
                    gmm,
                    attrs,
                    emission_size,
                    seed=derive_seed(config.master_seed, "emit", t),
                    generation=t,
                    temperature=config.sampler.temperature,
                )
        except CollapseLabError as exc:
            return ChainResult(
                snapshots=tuple(snapshots),
                error=f"generation {t}: {exc}",
            )
        for rec in synthetic:
            if rec.provenance.is_real or rec.provenance.generation != t:
                raise ValidationError("emitted records must carry Synthetic(t) provenance")
        snapshot = GenerationSnapshot(
            generation=t,
            model=model,
            synthetic=synthetic,
            composition=composition,
        )
        if on_generation is not None:
            on_generation(snapshot)
        if not config.retain_models:
            snapshot.model = None
        snapshots.append(snapshot)
        previous_emission = synthetic
    return ChainResult(snapshots=tuple(snapshots))
