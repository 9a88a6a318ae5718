"""The attack proper: heatmap-masked DE minimizing embedding distance.

Initialization is masked by the attention heatmap; mutation pulls toward
the population best (current-to-best); the fitness is the embedding
distance between the oracle's caption and the target text. Success is an
exact caption match or the fitness crossing the configured threshold.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ._fileio import atomic_write_text
from .engine import DEConfig, Individual, RunTrace, init_masked, run
from .image import (
    PerturbationStats,
    as_heatmap,
    as_image,
    perturbation_stats,
    resample_heatmap,
    save_heatmap,
    save_image,
)
from .metrics import SynonymLexicon, eval_report, s_clip

log = logging.getLogger(__name__)

TOY_SUCCESS_THRESHOLD = 0.05


@dataclass
class AttackResult:
    """Outcome of one attack run.

    `stats` is recomputed from the returned image, not trusted from the
    loop; `final_text` is the oracle's caption for `adversarial` at
    termination time (the oracle is deterministic, so the cached caption
    is that caption).
    """

    adversarial: np.ndarray
    final_text: str
    final_s_clip: float
    queries: int
    generations: int
    stats: PerturbationStats
    trace: RunTrace
    success: bool
    target_text: str
    epsilon: float
    config: DEConfig


def run_attack(
    clean,
    target_text: str,
    heatmap,
    gen_oracle,
    embed_oracle,
    config: DEConfig,
    epsilon: float,
    remask_each_generation: bool = False,
) -> AttackResult:
    """Search for a budget-bounded image whose caption matches `target_text`.

    The target embedding is computed once; caption embeddings are cached by
    exact text, so repeated captions across the population cost one embed
    query. The mask shapes initialization only, per the default; with
    `remask_each_generation` every trial's perturbation is additionally
    clamped to the per-element masked range after budget projection.
    """
    if not target_text.strip():
        raise ValueError("target text must be non-empty")
    clean_arr = as_image(clean)
    hm = resample_heatmap(as_heatmap(heatmap), clean_arr.shape[1], clean_arr.shape[0])
    if not hm.any():
        log.warning("zero attention heatmap: initial population degenerates to clones of the clean image")
    config = replace(config, strategy="current_to_best", direction="minimize")

    embed = getattr(embed_oracle, "embed", embed_oracle)
    generate = getattr(gen_oracle, "generate", gen_oracle)
    target_vec = np.asarray(embed(target_text), dtype=np.float64)

    cache: dict[str, np.ndarray] = {}
    cache_lock = threading.Lock()

    def embed_cached(text: str) -> np.ndarray:
        with cache_lock:
            vec = cache.get(text)
        if vec is None:
            vec = np.asarray(embed(text), dtype=np.float64)
            with cache_lock:
                cache.setdefault(text, vec)
        return vec

    # Already-satisfied objective: the clean image captions to the target.
    clean_caption = generate(clean_arr)
    if clean_caption == target_text:
        best = Individual(clean_arr, fitness=0.0, output_text=clean_caption)
        trace = RunTrace(records=[], best=best, reached_target=True)
        return AttackResult(
            adversarial=clean_arr,
            final_text=clean_caption,
            final_s_clip=float(s_clip(embed_cached(clean_caption), target_vec)),
            queries=1,
            generations=0,
            stats=perturbation_stats(clean_arr, clean_arr),
            trace=trace,
            success=True,
            target_text=target_text,
            epsilon=epsilon,
            config=config,
        )

    def fitness(genome: np.ndarray) -> tuple[float, str]:
        text = generate(genome)
        return s_clip(embed_cached(text), target_vec), text

    constrain = None
    if remask_each_generation:
        bound = hm.astype(np.float64)[:, :, None] * config.resolve_eta(epsilon)
        lo = np.clip(clean_arr - bound, 0.0, 255.0)
        hi = np.clip(clean_arr + bound, 0.0, 255.0)

        def constrain(genome: np.ndarray) -> np.ndarray:
            return np.clip(genome, lo, hi)

    def initializer(image, cfg, rng):
        return init_masked(image, hm, cfg, rng, epsilon)

    trace = run(
        clean_arr,
        initializer,
        fitness,
        config,
        epsilon,
        success=lambda individual: individual.output_text == target_text,
        constrain=constrain,
    )
    best = trace.best
    adversarial = best.genome
    return AttackResult(
        adversarial=adversarial,
        final_text=best.output_text,
        final_s_clip=float(best.fitness),
        queries=trace.queries + 1,  # +1 for the clean-image pre-check
        generations=trace.completed_generations,
        stats=perturbation_stats(adversarial, clean_arr),
        trace=trace,
        success=trace.reached_target,
        target_text=target_text,
        epsilon=epsilon,
        config=config,
    )


def write_bundle(
    out_dir: str | Path,
    result: AttackResult,
    clean,
    heatmap,
    embed_oracle,
    lexicon: Optional[SynonymLexicon] = None,
) -> Path:
    """Write the attack result bundle: adversarial and clean PNGs, the
    heatmap, and a JSON report. Returns the report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "adversarial.png", result.adversarial)
    save_image(out / "clean.png", clean)
    save_heatmap(out / "heatmap.aah", heatmap)

    embed = getattr(embed_oracle, "embed", embed_oracle)
    metrics = {
        "s_clip": result.final_s_clip,
        "clip_score": 1.0 - result.final_s_clip,
    }
    if lexicon is not None:
        report = eval_report(result.final_text, result.target_text, lexicon, embed, result.stats)
        metrics.update(report.as_dict())
    report_doc = {
        "target_text": result.target_text,
        "final_text": result.final_text,
        "success": result.success,
        "metrics": metrics,
        "queries": result.queries,
        "generations": result.generations,
        "epsilon": result.epsilon,
        "perturbation": {
            "mean_abs": result.stats.mean_abs,
            "max_abs": result.stats.max_abs,
            "num_changed": result.stats.num_changed,
        },
        "seed": result.config.seed,
        "config": {
            "pop_size": result.config.pop_size,
            "f": result.config.f,
            "cr": result.config.cr,
            "eta": result.config.resolve_eta(result.epsilon),
            "max_generations": result.config.max_generations,
            "target_fitness": result.config.target_fitness,
            "strategy": result.config.strategy,
            "direction": result.config.direction,
            "force_one_dimension": result.config.force_one_dimension,
        },
        "trace": result.trace.as_dict(),
    }
    report_path = out / "report.json"
    atomic_write_text(report_path, json.dumps(report_doc, indent=2) + "\n")
    return report_path
