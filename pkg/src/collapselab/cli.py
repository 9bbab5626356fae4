"""Experiment runner and reporting front door.

One validated JSON config describes named conditions (chain + corpus source
+ metric selection). A run writes, per condition, one subdirectory per
generation (model snapshot, synthetic corpus, composition record, metric
report) plus a tabular per-generation report, and a manifest recording the
config hash and derived seeds. Reruns with the same config and seed
reproduce every numeric artifact byte for byte (the manifest's wall-clock
field is the only exception).

Subcommands: synth-corpus, run, metrics, compare, plot-data.
COLLAPSELAB_DETERMINISTIC=1 forces single-worker execution.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .corpus import (
    Corpus,
    SectionSpec,
    ToyPopulationSpec,
    default_lexicon,
    ingest_documents,
    split_corpus,
    synthesize_toy_corpus,
    write_sectioned,
)
from .errors import CollapseLabError, ValidationError
from .fixtures import make_toy_feature_population
from .genkernel import SamplerConfig, model_perplexity
from .imagemetrics import (
    bootstrap_frechet,
    load_feature_population,
    probe_prevalence,
    save_feature_population,
    train_probe,
)
from .mitigation import ImageFilterConfig, TextFilterConfig
from .recursion import ChainConfig, ChainResult, GenerationSnapshot, run_chain
from .safety import default_detector, default_reassurance_patterns, positive_findings
from .seeding import derive_seed
from .stats import chi_square_gof, wasserstein1
from .textmetrics import lexical_profile, medical_term_metrics, content_ratio

REPORT_FORMAT_VERSION = 1

TEXT_METRICS = ("lexical", "perplexity", "medical_terms", "content", "findings")
POPULATION_METRICS = ("frechet", "demographics", "prevalence")


# ---------------------------------------------------------------------------
# Config parsing (strict: unknown keys are errors)
# ---------------------------------------------------------------------------


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    kind: str
    source: dict
    chain: dict
    metrics: tuple[str, ...]
    holdout_fractions: tuple[float, float, float] | None


@dataclass(frozen=True)
class ExperimentConfig:
    version: int
    seed: int
    conditions: tuple[ConditionSpec, ...]
    save_models: bool
    raw: dict

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_experiment_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path.name}: invalid JSON ({exc})") from exc
    _require_keys(
        raw,
        {"version", "seed", "conditions", "save_models"},
        {"version", "seed", "conditions"},
        path.name,
    )
    if raw["version"] != 1:
        raise ValidationError(f"unsupported config version {raw['version']!r}")
    if not isinstance(raw["conditions"], dict) or not raw["conditions"]:
        raise ValidationError("conditions must be a non-empty object")
    conditions = []
    for name, block in raw["conditions"].items():
        conditions.append(_parse_condition(name, block, path.parent))
    seed = int(seed_override if seed_override is not None else raw["seed"])
    effective = dict(raw)
    effective["seed"] = seed
    return ExperimentConfig(
        version=1,
        seed=seed,
        conditions=tuple(conditions),
        save_models=bool(raw.get("save_models", True)),
        raw=effective,
    )


_SOURCE_KEYS = {"toy_corpus", "toy_population", "corpus_file", "population_file"}

_TOY_CORPUS_KEYS = {
    "vocabulary_size",
    "zipf_exponent",
    "document_count",
    "section_schema",
    "male_fraction",
    "age_mean",
    "age_sd",
    "label_fraction",
    "phrase_inventory",
    "phrase_length",
    "branching",
    "successor_decay",
    "communities",
    "community_exponent",
    "entry_phrases",
    "shared_token_fraction",
    "holdout_document_count",
}

_TOY_POPULATION_KEYS = {
    "n",
    "d",
    "components",
    "weights",
    "separation",
    "scale",
    "male_fraction",
    "age_mean",
    "age_sd",
    "label_rare_component",
}

_CHAIN_KEYS = {
    "generations",
    "schedule",
    "real_fraction",
    "order",
    "add_k",
    "components",
    "em_tolerance",
    "em_max_iterations",
    "sampler",
    "text_filter",
    "image_filter",
}

_SAMPLER_KEYS = {"temperature", "top_k", "top_p", "max_length", "repetition_penalty"}
_TEXT_FILTER_KEYS = {"k", "synthetic_keep_quantile", "real_keep_quantile", "dim"}


def _parse_condition(name: str, block: dict, base_dir: Path) -> ConditionSpec:
    where = f"condition {name!r}"
    if not isinstance(block, dict):
        raise ValidationError(f"{where}: must be an object")
    _require_keys(
        block,
        {"kind", "source", "chain", "metrics", "holdout"},
        {"kind", "source", "chain", "metrics"},
        where,
    )
    kind = block["kind"]
    if kind not in ("text", "population"):
        raise ValidationError(f"{where}: kind must be text or population")
    source = block["source"]
    _require_keys(source, _SOURCE_KEYS, set(), f"{where}.source")
    if len(source) != 1:
        raise ValidationError(f"{where}.source: exactly one source block required")
    src_kind = next(iter(source))
    if src_kind == "toy_corpus":
        _require_keys(
            source[src_kind],
            _TOY_CORPUS_KEYS,
            {"vocabulary_size", "zipf_exponent", "document_count"},
            f"{where}.source.toy_corpus",
        )
    elif src_kind == "toy_population":
        _require_keys(source[src_kind], _TOY_POPULATION_KEYS, {"n", "d"}, f"{where}.source.toy_population")
    elif src_kind == "corpus_file":
        _require_keys(source[src_kind], {"path", "format"}, {"path"}, f"{where}.source.corpus_file")
        p = base_dir / source[src_kind]["path"]
        if not p.exists():
            raise ValidationError(f"{where}: corpus file {p} does not exist")
    elif src_kind == "population_file":
        _require_keys(source[src_kind], {"path"}, {"path"}, f"{where}.source.population_file")
        p = base_dir / source[src_kind]["path"]
        if not p.exists():
            raise ValidationError(f"{where}: population file {p} does not exist")
    if (kind == "text") != (src_kind in ("toy_corpus", "corpus_file")):
        raise ValidationError(f"{where}: source {src_kind} does not match kind {kind}")

    chain = block["chain"]
    _require_keys(chain, _CHAIN_KEYS, {"generations", "schedule"}, f"{where}.chain")
    if "sampler" in chain:
        _require_keys(chain["sampler"], _SAMPLER_KEYS, set(), f"{where}.chain.sampler")
    if chain.get("text_filter"):
        _require_keys(chain["text_filter"], _TEXT_FILTER_KEYS, set(), f"{where}.chain.text_filter")
    if chain.get("image_filter"):
        _require_keys(chain["image_filter"], {"exclusion_quantile"}, set(), f"{where}.chain.image_filter")

    metrics = block["metrics"]
    valid = TEXT_METRICS if kind == "text" else POPULATION_METRICS
    for m in metrics:
        if m not in valid:
            raise ValidationError(
                f"{where}: unknown metric {m!r} for kind {kind} (valid: {', '.join(valid)})"
            )
    holdout = None
    if "holdout" in block:
        _require_keys(block["holdout"], {"fractions"}, {"fractions"}, f"{where}.holdout")
        holdout = tuple(float(f) for f in block["holdout"]["fractions"])
        if len(holdout) != 3:
            raise ValidationError(f"{where}.holdout: fractions must be (train, val, test)")
    return ConditionSpec(
        name=name,
        kind=kind,
        source=source,
        chain=chain,
        metrics=tuple(metrics),
        holdout_fractions=holdout,
    )


# ---------------------------------------------------------------------------
# Condition execution
# ---------------------------------------------------------------------------


def _build_chain_config(spec: ConditionSpec, seed: int) -> ChainConfig:
    chain = spec.chain
    sampler_args = dict(chain.get("sampler", {}))
    sampler = SamplerConfig(**sampler_args)
    text_filter = None
    image_filter = None
    if chain.get("text_filter"):
        tf = dict(chain["text_filter"])
        dim = tf.pop("dim", None)
        if dim is not None:
            from .mitigation import EmbedderSpec

            tf["embedder"] = EmbedderSpec(dim=int(dim))
        text_filter = TextFilterConfig(**tf)
    if chain.get("image_filter"):
        image_filter = ImageFilterConfig(**chain["image_filter"])
    return ChainConfig(
        generations=int(chain["generations"]),
        schedule=tuple(int(s) for s in chain["schedule"]),
        real_fraction=float(chain.get("real_fraction", 0.0)),
        kernel_kind=spec.kind,
        sampler=sampler,
        master_seed=seed,
        order=int(chain.get("order", 3)),
        add_k=float(chain.get("add_k", 0.01)),
        components=int(chain.get("components", 4)),
        em_tolerance=float(chain.get("em_tolerance", 1e-6)),
        em_max_iterations=int(chain.get("em_max_iterations", 200)),
        text_filter=text_filter,
        image_filter=image_filter,
        retain_models=False,  # metrics run in the per-generation callback
    )


def _build_text_pools(spec: ConditionSpec, seed: int, base_dir: Path):
    src_kind = next(iter(spec.source))
    if src_kind == "toy_corpus":
        opts = dict(spec.source["toy_corpus"])
        holdout_n = int(opts.pop("holdout_document_count", 0))
        schema = opts.pop("section_schema", None)
        if schema is not None:
            opts["section_schema"] = tuple(
                SectionSpec(s["name"], float(s["mean_tokens"]), float(s["sd_tokens"]))
                for s in schema
            )
        if "phrase_length" in opts:
            opts["phrase_length"] = tuple(int(v) for v in opts["phrase_length"])
        pool = synthesize_toy_corpus(
            ToyPopulationSpec(seed=derive_seed(seed, "toy-pool"), **opts)
        )
        if holdout_n > 0:
            held = synthesize_toy_corpus(
                ToyPopulationSpec(
                    seed=derive_seed(seed, "toy-holdout"),
                    **{**opts, "document_count": holdout_n},
                )
            )
            return pool, held
        return pool, None
    corpus = ingest_documents(
        base_dir / spec.source["corpus_file"]["path"],
        spec.source["corpus_file"].get("format", "sectioned-text"),
    )
    if spec.holdout_fractions is not None:
        train, _val, test = split_corpus(
            corpus, spec.holdout_fractions, seed=derive_seed(seed, "holdout-split")
        )
        return train, test
    return corpus, None


def _build_population_pool(spec: ConditionSpec, seed: int, base_dir: Path):
    src_kind = next(iter(spec.source))
    if src_kind == "toy_population":
        opts = dict(spec.source["toy_population"])
        if "weights" in opts:
            opts["weights"] = tuple(float(w) for w in opts["weights"])
        return make_toy_feature_population(
            n=int(opts.pop("n")),
            d=int(opts.pop("d")),
            seed=derive_seed(seed, "toy-pool"),
            **opts,
        )
    return load_feature_population(base_dir / spec.source["population_file"]["path"])


class _TextMetricEvaluator:
    def __init__(self, spec: ConditionSpec, real_pool: Corpus, holdout):
        self.spec = spec
        self.holdout = holdout
        self.lexicon = default_lexicon()
        self.detector = default_detector()
        self.reassurance = default_reassurance_patterns()

    def row(self, snapshot: GenerationSnapshot) -> dict:
        docs = snapshot.synthetic
        out: dict = {
            "generation": snapshot.generation,
            "training_total": snapshot.composition.total,
            "training_real": snapshot.composition.real_count,
            "training_synthetic": sum(snapshot.composition.synthetic_counts.values()),
            "synthetic_count": len(docs),
        }
        metrics = self.spec.metrics
        if "lexical" in metrics:
            rep = lexical_profile(docs, self.lexicon.stopwords)
            out.update(
                ttr=rep.ttr,
                vocabulary=rep.distinct_tokens,
                vocabulary_no_stopwords=rep.vocabulary_size,
                repetition_rate_distinct_n1=rep.repetition_rate[1],
                repetition_rate_distinct_n2=rep.repetition_rate[2],
                repetition_rate_distinct_n3=rep.repetition_rate[3],
                mean_length=rep.mean_length,
                sd_length=rep.sd_length,
                uniqueness_ratio=rep.uniqueness_ratio,
                top_opening_trigram_share=rep.top_opening_trigram_share,
            )
        if "perplexity" in metrics:
            model = snapshot.model
            out["perplexity_synthetic"] = model_perplexity(model, docs)
            if self.holdout is not None:
                out["perplexity_real"] = model_perplexity(model, self.holdout)
                out["confidence_gap"] = out["perplexity_real"] / out["perplexity_synthetic"]
        if "medical_terms" in metrics:
            rep = medical_term_metrics(docs, self.lexicon)
            out["medical_term_density"] = rep.term_density
            out["unique_medical_terms"] = rep.unique_terms
        if "content" in metrics:
            rep = content_ratio(docs, self.lexicon)
            out["clinical_rate_per_1000"] = rep.clinical_rate
            out["template_rate_per_1000"] = rep.template_rate
            out["clinical_template_ratio"] = rep.ratio if rep.ratio_defined else ""
        if "findings" in metrics:
            n = len(docs)
            counts = {c: 0 for c in self.detector.findings}
            reassured = 0
            for d in docs:
                pos = positive_findings(d, self.detector)
                for c in pos:
                    counts[c] += 1
                low = d.text.lower()
                if any(p in low for p in self.reassurance):
                    reassured += 1
            for c, k in counts.items():
                out[f"prevalence_{c}"] = k / n
            out["reassurance_rate"] = reassured / n
        return out


class _PopulationMetricEvaluator:
    def __init__(self, spec: ConditionSpec, real_pool, seed: int):
        self.spec = spec
        self.real_pool = real_pool
        self.seed = seed
        self.real_ages = [r.demographics.age for r in real_pool if r.demographics]
        males = [
            1 for r in real_pool if r.demographics and r.demographics.sex == "male"
        ]
        self.real_male_fraction = len(males) / max(1, len(self.real_ages))
        self.probe = None
        if "prevalence" in spec.metrics:
            labels = sorted({lb for r in real_pool for lb in r.labels})
            if labels:
                self.probe = train_probe(real_pool, labels, seed=derive_seed(seed, "probe"))

    def row(self, snapshot: GenerationSnapshot) -> dict:
        recs = snapshot.synthetic
        out: dict = {
            "generation": snapshot.generation,
            "training_total": snapshot.composition.total,
            "training_real": snapshot.composition.real_count,
            "training_synthetic": sum(snapshot.composition.synthetic_counts.values()),
            "synthetic_count": len(recs),
        }
        metrics = self.spec.metrics
        if "frechet" in metrics:
            n = min(1000, len(recs), len(self.real_pool))
            mean, sd = bootstrap_frechet(
                self.real_pool,
                recs,
                n_per_condition=n,
                iterations=10,
                seed=derive_seed(self.seed, "fd", snapshot.generation),
            )
            out["fd_mean"] = mean
            out["fd_sd"] = sd
        if "demographics" in metrics:
            ages = [r.demographics.age for r in recs if r.demographics]
            males = sum(
                1 for r in recs if r.demographics and r.demographics.sex == "male"
            )
            out["male_fraction"] = males / max(1, len(ages))
            out["age_wasserstein"] = wasserstein1(ages, self.real_ages)
            stat, p = chi_square_gof(
                [males, len(ages) - males],
                [self.real_male_fraction, 1 - self.real_male_fraction],
            )
            out["gender_chi2"] = stat
            out["gender_chi2_p"] = p
        if "prevalence" in metrics and self.probe is not None:
            prev = probe_prevalence(self.probe, recs)
            for label, vals in prev.items():
                out[f"probe_mean_p_{label}"] = vals["mean_probability"]
                out[f"probe_positives_{label}"] = vals["positive_count"]
        return out


@dataclass
class ConditionOutcome:
    name: str
    rows: list[dict]
    error: str | None
    seed: int


def _run_condition(
    spec: ConditionSpec, master_seed: int, base_dir: Path, out_dir: Path, save_models: bool
) -> ConditionOutcome:
    seed = derive_seed(master_seed, "condition", spec.name)
    cond_dir = out_dir / spec.name
    cond_dir.mkdir(parents=True, exist_ok=True)
    chain_cfg = _build_chain_config(spec, seed)

    if spec.kind == "text":
        pool, holdout = _build_text_pools(spec, seed, base_dir)
        evaluator = _TextMetricEvaluator(spec, pool, holdout)
    else:
        pool = _build_population_pool(spec, seed, base_dir)
        evaluator = _PopulationMetricEvaluator(spec, pool, seed)

    rows: list[dict] = []

    def on_generation(snapshot: GenerationSnapshot) -> None:
        row = evaluator.row(snapshot)
        snapshot.metrics.update(row)
        rows.append(row)
        gen_dir = cond_dir / f"gen{snapshot.generation}"
        gen_dir.mkdir(exist_ok=True)
        _write_json(gen_dir / "composition.json", _composition_dict(snapshot))
        _write_json(gen_dir / "metrics.json", row)
        if spec.kind == "text":
            write_sectioned(Corpus(documents=tuple(snapshot.synthetic)), gen_dir / "synthetic.txt")
            if save_models:
                _write_json(gen_dir / "model.json", snapshot.model.to_json_dict())
        else:
            save_feature_population(snapshot.synthetic, gen_dir / "synthetic.csv")
            if save_models:
                gmm, attrs = snapshot.model
                payload = gmm.to_json_dict()
                if attrs is not None:
                    payload["attributes"] = {
                        "male_probability": attrs.male_probability,
                        "age_histogram": list(attrs.age_histogram),
                    }
                _write_json(gen_dir / "model.json", payload)

    result: ChainResult = run_chain(pool, chain_cfg, on_generation=on_generation)
    return ConditionOutcome(name=spec.name, rows=rows, error=result.error, seed=seed)


def _composition_dict(snapshot: GenerationSnapshot) -> dict:
    c = snapshot.composition
    return {
        "generation": c.generation,
        "total": c.total,
        "real_count": c.real_count,
        "synthetic_counts": {str(k): v for k, v in sorted(c.synthetic_counts.items())},
        "filtered": c.filtered,
        "synthetic_pool_size": c.synthetic_pool_size,
        "synthetic_survivors": c.synthetic_survivors,
        "real_pool_size": c.real_pool_size,
        "real_survivors": c.real_survivors,
    }


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    columns: list[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_rows_jsonl(rows: list[dict], path: Path) -> None:
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(
    config_path: str | Path,
    out_dir: str | Path,
    seed_override: int | None = None,
    workers: int = 1,
    report_format: str = "csv",
) -> dict:
    """Validate, execute all conditions, write artifacts, return the manifest."""
    if report_format not in ("csv", "jsonl"):
        raise ValidationError("format must be csv or jsonl")
    config = load_experiment_config(config_path, seed_override)
    out_dir = Path(out_dir)
    base_dir = Path(config_path).parent
    if os.environ.get("COLLAPSELAB_DETERMINISTIC") == "1":
        workers = 1
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.time()
    outcomes: dict[str, ConditionOutcome] = {}
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(
                    _run_condition, spec, config.seed, base_dir, out_dir, config.save_models
                ): spec.name
                for spec in config.conditions
            }
            for fut in concurrent.futures.as_completed(futures):
                outcome = fut.result()
                outcomes[outcome.name] = outcome
    else:
        for spec in config.conditions:
            outcomes[spec.name] = _run_condition(
                spec, config.seed, base_dir, out_dir, config.save_models
            )

    writer = _write_rows_csv if report_format == "csv" else _write_rows_jsonl
    suffix = "csv" if report_format == "csv" else "jsonl"
    artifact_paths: dict[str, str] = {}
    errors: dict[str, str] = {}
    for spec in config.conditions:
        outcome = outcomes[spec.name]
        report_path = out_dir / spec.name / f"metrics.{suffix}"
        writer(outcome.rows, report_path)
        _write_json(out_dir / spec.name / "rows.json", outcome.rows)
        artifact_paths[spec.name] = str(report_path.relative_to(out_dir))
        if outcome.error:
            errors[spec.name] = outcome.error

    manifest = {
        "tool_version": __version__,
        "report_format_version": REPORT_FORMAT_VERSION,
        "config_hash": config.config_hash(),
        "master_seed": config.seed,
        "condition_seeds": {o.name: o.seed for o in outcomes.values()},
        "artifacts": artifact_paths,
        "errors": errors,
        "complete": not errors,
        "wallclock_seconds": round(time.time() - started, 3),
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# Plot data / compare
# ---------------------------------------------------------------------------

_CI_COLUMNS = {"fd_mean": ("fd_mean", "fd_sd")}


def emit_plot_data(run_dir: str | Path, figure_spec: dict, out_dir: str | Path) -> list[Path]:
    """One CSV per panel: columns generation, condition, metric, value,
    ci_low, ci_high. A panel requesting a metric that was never evaluated is
    an error naming the available metrics."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    _require_keys(figure_spec, {"panels"}, {"panels"}, "figure spec")
    written = []
    for panel in figure_spec["panels"]:
        _require_keys(panel, {"name", "metric", "conditions"}, {"name", "metric"}, "panel")
        metric = panel["metric"]
        conditions = panel.get("conditions") or sorted(manifest["artifacts"])
        lines = ["generation,condition,metric,value,ci_low,ci_high"]
        for cond in conditions:
            rows_path = run_dir / cond / "rows.json"
            if not rows_path.exists():
                raise ValidationError(f"condition {cond!r} not found in run directory")
            rows = json.loads(rows_path.read_text())
            available = sorted({k for row in rows for k in row})
            if not any(metric in row for row in rows):
                raise ValidationError(
                    f"metric {metric!r} was not evaluated for condition {cond!r}; "
                    f"available: {', '.join(available)}"
                )
            for row in rows:
                if metric not in row:
                    continue
                value = row[metric]
                lo = hi = ""
                if metric in _CI_COLUMNS:
                    mcol, scol = _CI_COLUMNS[metric]
                    if scol in row:
                        lo = repr(row[mcol] - row[scol])
                        hi = repr(row[mcol] + row[scol])
                lines.append(
                    f"{row['generation']},{cond},{metric},{_format_cell(value)},{lo},{hi}"
                )
        path = out_dir / f"{panel['name']}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def compare_conditions(run_dir: str | Path, out_path: str | Path) -> Path:
    """Long-format comparison table over every condition and metric."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    lines = ["metric,generation,condition,value"]
    for cond in sorted(manifest["artifacts"]):
        rows = json.loads((run_dir / cond / "rows.json").read_text())
        for row in rows:
            for key in sorted(row):
                if key == "generation":
                    continue
                lines.append(f"{key},{row['generation']},{cond},{_format_cell(row[key])}")
    out_path = Path(out_path)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_path


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _cmd_synth_corpus(args) -> int:
    spec = ToyPopulationSpec(
        vocabulary_size=args.vocab,
        zipf_exponent=args.zipf,
        document_count=args.docs,
        seed=args.seed,
    )
    corpus = synthesize_toy_corpus(spec)
    write_sectioned(corpus, args.out)
    print(f"wrote {len(corpus)} documents to {args.out}")
    return 0


def _cmd_run(args) -> int:
    manifest = run_experiment(
        args.config,
        args.out,
        seed_override=args.seed,
        workers=args.workers,
        report_format=args.format,
    )
    for name, err in manifest["errors"].items():
        print(f"condition {name} failed: {err}", file=sys.stderr)
    print(
        f"run {'complete' if manifest['complete'] else 'INCOMPLETE'}; "
        f"config {manifest['config_hash'][:12]} -> {args.out}"
    )
    return 0 if manifest["complete"] else 2


def _cmd_metrics(args) -> int:
    corpus = ingest_documents(args.corpus, args.corpus_format)
    lexicon = default_lexicon()
    rep = lexical_profile(corpus, lexicon.stopwords)
    med = medical_term_metrics(corpus, lexicon)
    content = content_ratio(corpus, lexicon)
    row = {
        "documents": len(corpus),
        "total_tokens": rep.total_tokens,
        "ttr": rep.ttr,
        "vocabulary": rep.distinct_tokens,
        "vocabulary_no_stopwords": rep.vocabulary_size,
        "repetition_rate_distinct_n1": rep.repetition_rate[1],
        "repetition_rate_distinct_n2": rep.repetition_rate[2],
        "repetition_rate_distinct_n3": rep.repetition_rate[3],
        "uniqueness_ratio": rep.uniqueness_ratio,
        "medical_term_density": med.term_density,
        "unique_medical_terms": med.unique_terms,
        "clinical_rate_per_1000": content.clinical_rate,
        "template_rate_per_1000": content.template_rate,
    }
    if args.out:
        _write_rows_csv([row], Path(args.out))
        print(f"wrote metrics to {args.out}")
    else:
        for k, v in row.items():
            print(f"{k}: {_format_cell(v)}")
    return 0


def _cmd_compare(args) -> int:
    path = compare_conditions(args.run, args.out)
    print(f"wrote comparison to {path}")
    return 0


def _cmd_plot_data(args) -> int:
    figure_spec = json.loads(Path(args.figure).read_text(encoding="utf-8"))
    written = emit_plot_data(args.run, figure_spec, args.out)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collapselab",
        description="Reproduce, measure, and mitigate recursive-training collapse at desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"collapselab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="write a seeded toy corpus file")
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_corpus)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("metrics", help="evaluate text metrics over a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--corpus-format", choices=("sectioned-text", "line-record"), default="sectioned-text"
    )
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("compare", help="tabulate metrics across run conditions")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("plot-data", help="emit per-panel series files from a run")
    p.add_argument("--run", required=True)
    p.add_argument("--figure", required=True, help="figure spec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CollapseLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
