"""End-to-end pipeline: synth|ingest -> classify -> profiles -> validate -> fit -> report.

One TOML config drives everything; command-line flags override file values.
Every stage persists its output as JSONL/CSV so stages can run standalone,
and every report embeds the config hash and package version.  Reruns over
identical inputs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classify import MatcherConfig, classified_to_json, classify_query, evaluate_matcher_precision
from .corpus import (
    FOOD_GROUPS,
    FOOD_ITEMS,
    load_consumption,
    load_costs,
    load_expenditure,
    load_food_groups,
    load_indications,
    load_nutrient_table,
    load_recipe_corpus,
    load_synonyms,
    load_term_lexicon,
)
from .errors import B12MinerError, ConfigError, PipelineError
from .ingest import ParseStats, parse_log_file
from .models import (
    TermModelResult,
    fit_selected_terms,
    indications_model,
    rank_terms,
    target_vs_control,
)
from .profiles import (
    awareness_stats,
    build_profiles,
    cohort_compare,
    read_classified,
    read_profiles,
    write_profiles,
)
from .regional import consumption_sanity, regional_recipe_shares, validate_against_expenditure
from .synth import SynthConfig, TermEffect, generate

try:
    import tomllib
except ImportError:                      # Python 3.10
    import tomli as tomllib


@dataclass
class PipelineConfig:
    out_dir: Path = Path("out")
    logs: list = field(default_factory=list)
    log_format: str = "jsonl"
    # data files; None means the packaged default
    recipes: str | None = None
    targets: str | None = None
    controls: str | None = None
    nutrients: str | None = None
    expenditure: str | None = None
    costs: str | None = None
    consumption: str | None = None
    indications: str | None = None
    food_groups: str | None = None
    synonyms: str | None = None
    # knobs
    theta: float = 0.8
    cues: tuple = ("recipe", "recipes", "how to make", "cook")
    estimate_mode: str = "mean"
    threshold: int = 1000
    cohort_filter: str = "unaware"
    cob12_method: str = "pearson"
    top_k: int = 10
    threads: int = 1
    synth: SynthConfig | None = None
    config_hash: str = "unconfigured"

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(theta=self.theta, cues=tuple(self.cues))


def _opt(value) -> str | None:
    return value if value else None


def load_pipeline_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read the TOML config; `overrides` (from CLI flags) win over the file."""
    raw = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with p.open("rb") as f:
            raw = tomllib.load(f)
    overrides = overrides or {}

    paths = raw.get("paths", {})
    classifier = raw.get("classifier", {})
    prof = raw.get("profiles", {})
    fit = raw.get("fit", {})
    report = raw.get("report", {})

    cfg = PipelineConfig(
        out_dir=Path(overrides.get("out_dir") or paths.get("out_dir", "out")),
        logs=list(overrides.get("logs") or paths.get("logs", [])),
        log_format=overrides.get("log_format") or paths.get("log_format", "jsonl"),
        recipes=_opt(overrides.get("recipes") or paths.get("recipes")),
        targets=_opt(overrides.get("targets") or paths.get("targets")),
        controls=_opt(overrides.get("controls") or paths.get("controls")),
        nutrients=_opt(overrides.get("nutrients") or paths.get("nutrients")),
        expenditure=_opt(overrides.get("expenditure") or paths.get("expenditure")),
        costs=_opt(overrides.get("costs") or paths.get("costs")),
        consumption=_opt(overrides.get("consumption") or paths.get("consumption")),
        indications=_opt(overrides.get("indications") or paths.get("indications")),
        food_groups=_opt(overrides.get("food_groups") or paths.get("food_groups")),
        synonyms=_opt(overrides.get("synonyms") or paths.get("synonyms")),
        theta=float(overrides.get("theta") or classifier.get("theta", 0.8)),
        cues=tuple(overrides.get("cues") or classifier.get(
            "cues", ("recipe", "recipes", "how to make", "cook"))),
        estimate_mode=overrides.get("estimate_mode") or prof.get("estimate_mode", "mean"),
        threshold=int(overrides.get("threshold") or fit.get("threshold", 1000)),
        cohort_filter=overrides.get("cohort_filter") or fit.get("cohort_filter", "unaware"),
        cob12_method=overrides.get("cob12_method") or fit.get("cob12", "pearson"),
        top_k=int(overrides.get("top_k") or report.get("top_k", 10)),
        threads=int(overrides.get("threads") or raw.get("threads", 1)),
    )

    synth_raw = raw.get("synth", {})
    if synth_raw.get("enabled", False):
        terms = [TermEffect(t["term"], t.get("kind", "target"),
                            float(t.get("base_rate", 0.1)),
                            float(t.get("effect_per_mcg", 0.0)))
                 for t in synth_raw.get("terms", [])]
        gap = synth_raw.get("deficiency_intake_gap")
        cfg.synth = SynthConfig(
            n_users=int(synth_raw.get("n_users", 1000)),
            seed=int(overrides.get("seed") if overrides.get("seed") is not None
                     else synth_raw.get("seed", 0)),
            recipe_rate=float(synth_raw.get("recipe_rate", 8.0)),
            terms=terms,
            b12_rate=float(synth_raw.get("b12_rate", 0.0)),
            deficiency_rate=float(synth_raw.get("deficiency_rate", 0.0)),
            deficiency_intake_gap=float(gap) if gap is not None else None,
            supplement_rate_aware=float(synth_raw.get("supplement_rate_aware", 0.0)),
            supplement_rate_unaware=float(synth_raw.get("supplement_rate_unaware", 0.0)),
            matcher_noise=float(synth_raw.get("matcher_noise", 0.0)),
            single_food_recipes_only=bool(synth_raw.get("single_food_recipes_only", False)),
            food_noise_sigma=float(synth_raw.get("food_noise_sigma", 0.0)),
        )

    if cfg.estimate_mode not in ("mean", "sum"):
        raise ConfigError(f"unknown estimate mode '{cfg.estimate_mode}'")
    if cfg.cohort_filter not in ("unaware", "all"):
        raise ConfigError(f"unknown cohort filter '{cfg.cohort_filter}'")
    if cfg.cob12_method not in ("pearson", "spearman"):
        raise ConfigError(f"unknown cob12 method '{cfg.cob12_method}'")

    # hash only analysis-relevant config: where outputs land and how many
    # threads run must not change report content
    skip = {"synth", "out_dir", "threads", "config_hash"}
    payload = {k: (str(v) if isinstance(v, Path) else v)
               for k, v in sorted(vars(cfg).items()) if k not in skip}
    if cfg.synth is not None:
        payload["synth"] = {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in sorted(vars(cfg.synth).items()) if k != "terms"}
        payload["synth"]["terms"] = [vars(t) for t in cfg.synth.terms]
    cfg.config_hash = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:12]
    return cfg


def check_inputs_exist(cfg: PipelineConfig) -> None:
    """All referenced input paths must exist before any stage runs."""
    for name in ("recipes", "targets", "controls", "nutrients", "expenditure",
                 "costs", "consumption", "indications", "food_groups", "synonyms"):
        value = getattr(cfg, name)
        if value and not Path(value).exists():
            raise ConfigError(f"input path does not exist: {value} (--{name.replace('_', '-')})")
    if cfg.synth is None:
        if not cfg.logs:
            raise ConfigError("no input logs configured and synth is disabled")
        for log in cfg.logs:
            if not Path(log).exists():
                raise ConfigError(f"input path does not exist: {log} (--log)")


def _stamp(cfg: PipelineConfig) -> str:
    return f"b12miner {__version__} config={cfg.config_hash}"


class _StageWriter:
    """Write to '<path>.partial', rename into place on success."""

    def __init__(self, path: Path):
        self.final = Path(path)
        self.partial = Path(str(path) + ".partial")

    def __enter__(self):
        self.f = self.partial.open("w", encoding="utf-8", newline="")
        return self.f

    def __exit__(self, exc_type, exc, tb):
        self.f.close()
        if exc_type is None:
            os.replace(self.partial, self.final)
        return False


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_synth(cfg: PipelineConfig) -> tuple[Path, Path]:
    if cfg.synth is None:
        raise PipelineError("synth", "synth section not configured")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "log.jsonl"
    truth_path = out / "truth.jsonl"
    try:
        corpus = load_recipe_corpus(cfg.recipes, load_synonyms(cfg.synonyms))
        table = load_nutrient_table(cfg.nutrients)
        generate(cfg.synth, log_path, truth_path, corpus, table)
    except B12MinerError as exc:
        raise PipelineError("synth", str(exc)) from exc
    return log_path, truth_path


def stage_classify(cfg: PipelineConfig, logs=None) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    target = out / "classified.jsonl"
    logs = list(logs) if logs is not None else list(cfg.logs)
    try:
        corpus = load_recipe_corpus(cfg.recipes, load_synonyms(cfg.synonyms))
        lexicons = [load_term_lexicon(cfg.targets, "target"),
                    load_term_lexicon(cfg.controls, "control")]
        mc = cfg.matcher_config()
        stats = ParseStats()

        def classify_line(rec):
            return classified_to_json(rec, classify_query(rec, corpus, lexicons, mc))

        with _StageWriter(target) as f:
            for log in logs:
                records = parse_log_file(log, cfg.log_format, stats)
                if cfg.threads > 1:
                    from concurrent.futures import ThreadPoolExecutor

                    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                        for line in pool.map(classify_line, records, chunksize=512):
                            f.write(line + "\n")
                else:
                    for rec in records:
                        f.write(classify_line(rec) + "\n")
    except (B12MinerError, OSError) as exc:
        raise PipelineError("classify", str(exc)) from exc
    return target


def stage_profiles(cfg: PipelineConfig, classified: Path | None = None) -> Path:
    out = cfg.out_dir
    target = out / "profiles.jsonl"
    classified = classified or (out / "classified.jsonl")
    try:
        profiles = build_profiles(read_classified(classified))
        partial = Path(str(target) + ".partial")
        write_profiles(profiles, partial)
        os.replace(partial, target)
    except (B12MinerError, OSError) as exc:
        raise PipelineError("profiles", str(exc)) from exc
    return target


def stage_validate(cfg: PipelineConfig, profiles_path: Path | None = None) -> Path:
    out = cfg.out_dir
    target = out / "validation.csv"
    profiles_path = profiles_path or (out / "profiles.jsonl")
    try:
        profiles = read_profiles(profiles_path)
        costs = load_costs(cfg.costs)
        groups = load_food_groups(cfg.food_groups)
        expenditure = load_expenditure(cfg.expenditure)
        consumption = load_consumption(cfg.consumption)
        shares = regional_recipe_shares(profiles, costs, groups)
        result = validate_against_expenditure(shares, expenditure)
        sanity = consumption_sanity(profiles, consumption, groups)
        with _StageWriter(target) as f:
            f.write(f"# {_stamp(cfg)}\n")
            corr = result.correlation
            f.write(f"# expenditure_spearman_rho={corr.coefficient:.6f} "
                    f"p={corr.p_value:.6g} n={corr.n}\n")
            f.write(f"# consumption_spearman_rho={sanity.coefficient:.6f} "
                    f"p={sanity.p_value:.6g} n={sanity.n}\n")
            if shares.skipped_regions:
                f.write(f"# skipped_regions={','.join(shares.skipped_regions)}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["region", "group", "query_share", "expenditure_fraction"])
            for i, region in enumerate(result.regions):
                for j, group in enumerate(FOOD_GROUPS):
                    w.writerow([region, group,
                                f"{result.query_shares[i, j]:.9f}",
                                f"{result.expenditure_fractions[i, j]:.9f}"])
    except (B12MinerError, OSError) as exc:
        raise PipelineError("validate", str(exc)) from exc
    return target


def stage_fit(cfg: PipelineConfig, profiles_path: Path | None = None) -> Path:
    out = cfg.out_dir
    target = out / "results.csv"
    profiles_path = profiles_path or (out / "profiles.jsonl")
    try:
        profiles = read_profiles(profiles_path)
        table = load_nutrient_table(cfg.nutrients)
        results: list[TermModelResult] = []
        for kind, path in (("target", cfg.targets), ("control", cfg.controls)):
            lexicon = load_term_lexicon(path, kind)
            results.extend(fit_selected_terms(
                profiles, lexicon, table, threshold=cfg.threshold,
                cohort_filter=cfg.cohort_filter, cob12_method=cfg.cob12_method,
                threads=cfg.threads))
        with _StageWriter(target) as f:
            f.write(f"# {_stamp(cfg)}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["term", "kind", "n_askers", "n_fit", "r2", "cob12",
                        "cob12_spearman", "degenerate"]
                       + [f"coef_{food}" for food in FOOD_ITEMS])
            for r in sorted(results, key=lambda r: (r.kind, r.term)):
                w.writerow([r.term, r.kind, r.n_askers, r.n_fit, repr(r.r2_i),
                            repr(r.cob12), repr(r.cob12_spearman),
                            int(r.degenerate)]
                           + [repr(float(c)) for c in r.coefficients])
    except (B12MinerError, OSError) as exc:
        raise PipelineError("fit", str(exc)) from exc
    return target


def read_results_csv(path) -> list[TermModelResult]:
    results = []
    with Path(path).open(newline="") as f:
        rows = [line for line in f if not line.startswith("#")]
    for row in csv.DictReader(rows):
        coef = np.array([float(row[f"coef_{food}"]) for food in FOOD_ITEMS])
        results.append(TermModelResult(
            term=row["term"], kind=row["kind"], n_askers=int(row["n_askers"]),
            coefficients=coef, r2_i=float(row["r2"]), cob12=float(row["cob12"]),
            cob12_spearman=float(row["cob12_spearman"]), n_fit=int(row["n_fit"]),
            degenerate=bool(int(row["degenerate"])),
        ))
    return results


def _fmt(x, digits=6) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return f"{x:.{digits}g}"


def stage_report(cfg: PipelineConfig, results_path: Path | None = None,
                 profiles_path: Path | None = None) -> list[Path]:
    out = cfg.out_dir
    results_path = results_path or (out / "results.csv")
    profiles_path = profiles_path or (out / "profiles.jsonl")
    written = []
    try:
        results = read_results_csv(results_path)
        profiles = read_profiles(profiles_path)
        table = load_nutrient_table(cfg.nutrients)
        indications = load_indications(cfg.indications)
        targets = [r for r in results if r.kind == "target"]
        controls = [r for r in results if r.kind == "control"]

        # table2.md: top-k target terms by R^2
        path = out / "table2.md"
        with _StageWriter(path) as f:
            f.write(f"<!-- {_stamp(cfg)} -->\n")
            f.write("# Top terms by individual-level model fit\n\n")
            f.write("| term | R2_I | CoB12 |\n|---|---|---|\n")
            usable = [r for r in targets if not r.degenerate]
            if usable:
                for r in rank_terms(usable, cfg.top_k):
                    f.write(f"| {r.term} | {_fmt(r.r2_i)} | {_fmt(r.cob12)} |\n")
            else:
                f.write("| (no non-degenerate target models) | | |\n")
        written.append(path)

        # comparison.md: target vs control
        path = out / "comparison.md"
        with _StageWriter(path) as f:
            f.write(f"<!-- {_stamp(cfg)} -->\n")
            f.write("# Target vs control terms\n\n")
            try:
                cmp = target_vs_control(targets, controls)
                f.write(f"- modeled targets: {cmp.n_targets}, controls: {cmp.n_controls}"
                        f" (degenerate excluded: {cmp.n_degenerate})\n")
                f.write(f"- top-{cmp.top_k_used} median R2: targets {_fmt(cmp.median_r2_target)}"
                        f" vs controls {_fmt(cmp.median_r2_control)}"
                        f" (ratio {_fmt(cmp.median_r2_ratio)},"
                        f" ranksum p={_fmt(cmp.r2_ranksum_p)})\n")
                f.write(f"- mean CoB12: targets {_fmt(cmp.mean_cob12_target)}"
                        f" vs controls {_fmt(cmp.mean_cob12_control)}"
                        f" (ranksum p={_fmt(cmp.cob12_ranksum_p)})\n")
                if cmp.spearman_r2_cob12_target:
                    c = cmp.spearman_r2_cob12_target
                    f.write(f"- spearman(R2, CoB12) within targets: {_fmt(c.coefficient)}"
                            f" (p={_fmt(c.p_value)}, n={c.n})\n")
                if cmp.spearman_r2_cob12_control:
                    c = cmp.spearman_r2_cob12_control
                    f.write(f"- spearman(R2, CoB12) within controls: {_fmt(c.coefficient)}"
                            f" (p={_fmt(c.p_value)}, n={c.n})\n")
                if cmp.spearman_r2_askers_target:
                    c = cmp.spearman_r2_askers_target
                    f.write(f"- spearman(R2, askers) within targets: {_fmt(c.coefficient)}"
                            f" (p={_fmt(c.p_value)}, n={c.n})\n")
                f.write(f"- mean |coefficient|, tomatoes: {_fmt(cmp.tomato_mean_abs)};"
                        f" smallest other-food multiple: {_fmt(cmp.min_food_to_tomato_ratio)}x\n")
            except B12MinerError as exc:
                f.write(f"- comparison unavailable: {exc}\n")
        written.append(path)

        # indications.md
        path = out / "indications.md"
        with _StageWriter(path) as f:
            f.write(f"<!-- {_stamp(cfg)} -->\n")
            f.write("# Indications model (rank regression, R2-weighted)\n\n")
            try:
                im = indications_model(targets, indications)
                f.write(f"- rows: {im.n}\n")
                f.write(f"- R2 = {_fmt(im.r_squared)}\n")
                f.write(f"- slope(askers) = {_fmt(im.slope_askers)} (p={_fmt(im.p_askers)})\n")
                f.write(f"- slope(indications) = {_fmt(im.slope_indications)}"
                        f" (p={_fmt(im.p_indications)})\n")
                f.write(f"- slope(pain indications) = {_fmt(im.slope_pain)}"
                        f" (p={_fmt(im.p_pain)})\n")
                c = im.spearman_askers_indications
                f.write(f"- spearman(askers, indications) = {_fmt(c.coefficient)}"
                        f" (p={_fmt(c.p_value)}, n={c.n})\n")
                c = im.spearman_askers_pain
                f.write(f"- spearman(askers, pain indications) = {_fmt(c.coefficient)}"
                        f" (p={_fmt(c.p_value)}, n={c.n})\n")
            except B12MinerError as exc:
                f.write(f"- indications model unavailable: {exc}\n")
        written.append(path)

        # awareness.md: cohort comparison in both estimate modes
        path = out / "awareness.md"
        with _StageWriter(path) as f:
            f.write(f"<!-- {_stamp(cfg)} -->\n")
            f.write("# B12 awareness\n\n")
            aw = awareness_stats(profiles)
            f.write(f"- users: {aw.n_users}\n")
            f.write(f"- fraction asking nothing B12-related: {_fmt(aw.unaware_fraction)}\n")
            f.write(f"- deficiency-aware users: {aw.n_deficiency_aware}\n")
            f.write(f"- supplement ask rate, aware: {_fmt(aw.supplement_rate_aware)};"
                    f" unaware: {_fmt(aw.supplement_rate_unaware)};"
                    f" ratio: {_fmt(aw.supplement_ratio)}\n")
            for mode in ("mean", "sum"):
                try:
                    cc = cohort_compare(profiles, lambda p: p.asked_b12_deficiency,
                                        table, mode=mode,
                                        predicate_name="asked_b12_deficiency")
                    f.write(f"- intake ({mode} mode): aware {_fmt(cc.mean_a)} vs"
                            f" unaware {_fmt(cc.mean_b)} mcg,"
                            f" relative diff {_fmt(cc.relative_diff)},"
                            f" ranksum p={_fmt(cc.ranksum_p)}"
                            f" (n={cc.n_a}/{cc.n_b})\n")
                except B12MinerError as exc:
                    f.write(f"- intake ({mode} mode): unavailable: {exc}\n")
        written.append(path)
    except (B12MinerError, OSError) as exc:
        raise PipelineError("report", str(exc)) from exc
    return written


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run all stages; returns the bundle paths."""
    check_inputs_exist(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    bundle: dict = {}
    if cfg.synth is not None:
        log_path, truth_path = stage_synth(cfg)
        logs = [log_path]
        bundle["log"] = log_path
        bundle["truth"] = truth_path
    else:
        logs = list(cfg.logs)
    bundle["classified"] = stage_classify(cfg, logs)
    bundle["profiles"] = stage_profiles(cfg)
    bundle["validation"] = stage_validate(cfg)
    bundle["results"] = stage_fit(cfg)
    for p in stage_report(cfg):
        bundle[p.stem] = p
    return bundle
