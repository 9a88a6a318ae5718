"""Command-line frontend for the attacker workflow.

    ask       probe the oracle and harvest the target dictionary
    attend    obtain/validate the attention heatmap for a target text
    attack    run the masked evolutionary attack under the epsilon budget
    evaluate  score an adversarial caption (or a result bundle)

Exit codes: 0 success, 1 configuration error, 2 oracle error, 3 attack
budget exhausted without success (the result bundle is still written).
Flag values override the optional JSON config file, which overrides
built-in defaults. AAA_BRIDGE_URL supplies the default bridge address.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ._fileio import atomic_write_text
from .ask import run_ask
from .attack import TOY_SUCCESS_THRESHOLD, run_attack, write_bundle
from .attend import choose_category, fetch_heatmap, load_categories
from .engine import DEConfig, RunAborted
from .image import load_image, perturbation_stats, save_heatmap
from .metrics import EmbeddingProviderError, SynonymLexicon, eval_report
from .oracle import BridgeClient, HashingTextEmbedder, OracleError, QuadrantCaptioner

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ORACLE = 2
EXIT_BUDGET = 3

BRIDGE_URL_ENV = "AAA_BRIDGE_URL"

DE_DEFAULTS = {
    "np": 40,
    "f": 0.5,
    "cr": 0.9,
    "eta": None,
    "generations": 100,
    "seed": 0,
    "jobs": 1,
    "epsilon": 25.0,
    "target_fitness": TOY_SUCCESS_THRESHOLD,
}


class ConfigError(Exception):
    """User-facing configuration problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for oracle
    # failures, so usage problems exit 1 instead.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_de_flags(parser: argparse.ArgumentParser, with_epsilon: bool = True) -> None:
    group = parser.add_argument_group("search parameters")
    group.add_argument("--np", type=int, default=None, help="population size (default 40)")
    group.add_argument("--f", type=float, default=None, help="mutation scaling factor (default 0.5)")
    group.add_argument("--cr", type=float, default=None, help="crossover probability (default 0.9)")
    group.add_argument("--eta", type=float, default=None, help="max initial per-element search range (default 2*epsilon)")
    group.add_argument("--generations", type=int, default=None, help="generation budget (default 100)")
    group.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    group.add_argument("--jobs", type=int, default=None, help="max concurrent oracle evaluations (default 1)")
    if with_epsilon:
        group.add_argument("--epsilon", type=float, default=None, help="mean absolute per-element perturbation budget (default 25)")


def _merged(args: argparse.Namespace, keys: list[str]) -> dict:
    """flags > config file > defaults, per key."""
    merged = {k: DE_DEFAULTS.get(k) for k in keys}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        for key, value in file_values.items():
            norm = key.replace("-", "_")
            if norm in merged:
                merged[norm] = value
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _de_config(values: dict, strategy: str, direction: str, target_fitness=None) -> DEConfig:
    try:
        return DEConfig(
            pop_size=values["np"],
            f=values["f"],
            cr=values["cr"],
            eta=values["eta"],
            max_generations=values["generations"],
            target_fitness=target_fitness,
            seed=values["seed"],
            strategy=strategy,
            direction=direction,
            jobs=values["jobs"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _bridge_url(spec: str) -> str:
    if ":" in spec:
        return spec.split(":", 1)[1]
    url = os.environ.get(BRIDGE_URL_ENV)
    if not url:
        raise ConfigError(f"no bridge URL given and {BRIDGE_URL_ENV} is not set")
    return url


def _generate_oracle(spec: str):
    if spec == "toy":
        return QuadrantCaptioner()
    if spec == "bridge" or spec.startswith("bridge:"):
        return BridgeClient(_bridge_url(spec))
    raise ConfigError(f"unknown oracle spec {spec!r} (expected 'toy' or 'bridge:URL')")


def _embed_oracle(spec: str):
    if spec == "toy":
        return HashingTextEmbedder()
    if spec == "bridge" or spec.startswith("bridge:"):
        return BridgeClient(_bridge_url(spec))
    raise ConfigError(f"unknown embedder spec {spec!r} (expected 'toy' or 'bridge:URL')")


def _load_lexicon(path: str) -> SynonymLexicon:
    try:
        return SynonymLexicon.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load lexicon {path}: {exc}") from exc


def _cmd_ask(args: argparse.Namespace) -> int:
    values = _merged(args, ["np", "f", "cr", "eta", "generations", "seed", "jobs", "epsilon"])
    config = _de_config(values, strategy="rand1", direction="maximize")
    clean = load_image(args.image)
    lexicon = _load_lexicon(args.lexicon)
    oracle = _generate_oracle(args.oracle)
    dictionary, trace = run_ask(
        clean,
        args.semantics,
        oracle,
        lexicon,
        config,
        epsilon=values["epsilon"],
        include_initial=args.include_initial,
    )
    dictionary.save(args.out)
    trace_path = args.trace_out or f"{args.out}.trace.json"
    atomic_write_text(trace_path, json.dumps(trace.as_dict(), indent=2) + "\n")
    log.info("dictionary: %d entries -> %s (trace -> %s)", len(dictionary), args.out, trace_path)
    return EXIT_OK


def _cmd_attend(args: argparse.Namespace) -> int:
    clean = load_image(args.image)
    if args.categories:
        embedder = _embed_oracle(args.embed)
        categories = load_categories(args.categories)
        if not categories:
            raise ConfigError(f"category file {args.categories} is empty")
        chosen = choose_category(args.target_text, categories, getattr(embedder, "embed", embedder))
        log.info("chosen category: %s", chosen)
    source = args.source
    if source.startswith("file:"):
        source = source.split(":", 1)[1]
    elif source == "bridge" or source.startswith("bridge:"):
        source = BridgeClient(_bridge_url(source))
    heatmap = fetch_heatmap(clean, args.target_text, source)
    save_heatmap(args.out, heatmap)
    log.info("heatmap -> %s", args.out)
    return EXIT_OK


def _cmd_attack(args: argparse.Namespace) -> int:
    values = _merged(
        args,
        ["np", "f", "cr", "eta", "generations", "seed", "jobs", "epsilon", "target_fitness"],
    )
    config = _de_config(
        values,
        strategy="current_to_best",
        direction="minimize",
        target_fitness=values["target_fitness"],
    )
    clean = load_image(args.image)
    heatmap = fetch_heatmap(clean, args.target_text, args.heatmap)
    gen_oracle = _generate_oracle(args.oracle)
    embed_oracle = _embed_oracle(args.embed)
    lexicon = _load_lexicon(args.lexicon) if args.lexicon else None
    result = run_attack(
        clean,
        args.target_text,
        heatmap,
        gen_oracle,
        embed_oracle,
        config,
        epsilon=values["epsilon"],
        remask_each_generation=args.remask,
    )
    write_bundle(args.out, result, clean, heatmap, embed_oracle, lexicon)
    log.info(
        "attack %s after %d generations, %d queries; bundle -> %s",
        "succeeded" if result.success else "exhausted its budget",
        result.generations,
        result.queries,
        Path(args.out),
    )
    log.info("final caption: %s", result.final_text)
    return EXIT_OK if result.success else EXIT_BUDGET


def _cmd_evaluate(args: argparse.Namespace) -> int:
    if (args.adv_text is None) == (args.bundle is None):
        raise ConfigError("exactly one of --adv-text or --bundle is required")
    stats = None
    target_text = args.target_text
    if args.bundle is not None:
        report_file = Path(args.bundle) / "report.json"
        try:
            with open(report_file, encoding="utf-8") as fh:
                bundle_report = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read bundle report {report_file}: {exc}") from exc
        adv_text = bundle_report["final_text"]
        if target_text is None:
            target_text = bundle_report["target_text"]
        bundle_dir = Path(args.bundle)
        adv_png = bundle_dir / "adversarial.png"
        clean_png = bundle_dir / "clean.png"
        if adv_png.exists() and clean_png.exists():
            stats = perturbation_stats(load_image(adv_png), load_image(clean_png))
    else:
        adv_text = args.adv_text
    if target_text is None:
        raise ConfigError("--target-text is required with --adv-text")
    lexicon = _load_lexicon(args.lexicon)
    embedder = _embed_oracle(args.embed)
    report = eval_report(adv_text, target_text, lexicon, getattr(embedder, "embed", embedder), stats)
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capattack", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", parents=[], help="harvest the target dictionary around an image")
    ask.add_argument("--image", required=True, help="clean image (8-bit RGB PNG)")
    ask.add_argument("--semantics", required=True, help="attacker's target semantics text")
    ask.add_argument("--oracle", default="toy", help="'toy' or 'bridge:URL'")
    ask.add_argument("--lexicon", required=True, help="synonym lexicon TSV")
    ask.add_argument("--out", required=True, help="output dictionary TSV")
    ask.add_argument("--trace-out", default=None, help="trace JSON path (default <out>.trace.json)")
    ask.add_argument("--include-initial", action="store_true", help="harvest the initial population's captions too")
    ask.add_argument("--config", default=None, help="JSON config file mirroring flag names")
    _add_de_flags(ask)
    ask.set_defaults(func=_cmd_ask)

    attend = sub.add_parser("attend", help="obtain the attention heatmap for a target text")
    attend.add_argument("--image", required=True)
    attend.add_argument("--target-text", required=True)
    attend.add_argument("--source", required=True, help="'file:PATH' (AAH1) or 'bridge:URL'")
    attend.add_argument("--categories", default=None, help="category list file (logs the chosen category)")
    attend.add_argument("--embed", default="toy", help="embedder for category selection: 'toy' or 'bridge:URL'")
    attend.add_argument("--out", required=True, help="output heatmap (AAH1)")
    attend.set_defaults(func=_cmd_attend)

    attack = sub.add_parser("attack", help="run the masked evolutionary attack")
    attack.add_argument("--image", required=True)
    attack.add_argument("--target-text", required=True)
    attack.add_argument("--heatmap", required=True, help="attention heatmap (AAH1)")
    attack.add_argument("--oracle", default="toy", help="'toy' or 'bridge:URL'")
    attack.add_argument("--embed", default="toy", help="'toy' or 'bridge:URL'")
    attack.add_argument("--lexicon", default=None, help="optional lexicon TSV; enriches bundle metrics")
    attack.add_argument("--out", required=True, help="output bundle directory")
    attack.add_argument("--target-fitness", type=float, default=None, help="embedding-distance success threshold (default 0.05)")
    attack.add_argument("--remask", action="store_true", help="re-clamp perturbations to the masked range every generation")
    attack.add_argument("--config", default=None, help="JSON config file mirroring flag names")
    _add_de_flags(attack)
    attack.set_defaults(func=_cmd_attack)

    evaluate = sub.add_parser("evaluate", help="score an adversarial caption against a target text")
    evaluate.add_argument("--adv-text", default=None, help="adversarial caption to score")
    evaluate.add_argument("--bundle", default=None, help="attack bundle directory to score")
    evaluate.add_argument("--target-text", default=None)
    evaluate.add_argument("--lexicon", required=True)
    evaluate.add_argument("--embed", default="toy", help="'toy' or 'bridge:URL'")
    evaluate.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"capattack: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, RunAborted, EmbeddingProviderError) as exc:
        print(f"capattack: oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (OSError, ValueError) as exc:
        print(f"capattack: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
