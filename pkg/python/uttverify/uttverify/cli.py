"""
The ``uttverify`` command line: model training, single-pair verification and
alignment, synthetic corpus generation, batch evaluation and threshold sweeps.

Exit codes: 0 on success (``verify``: match), 1 when ``verify`` rejects the
pair, 2 on usage and pipeline errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Tuple

import numpy as np
from pydantic import ValidationError

from uttverify_core.acoustic_model import SYNTHETIC_FINGERPRINT, AcousticModel, load_model, save_model, train_em
from uttverify_core.aligner import write_alignment
from uttverify_core.frontend import FeatureMatrix, compute_mfcc, featurize, load_wav, read_features
from uttverify_core.lexicon import (
    Lexicon,
    PhoneInventory,
    load_inventory,
    load_lexicon,
    save_inventory,
    save_lexicon,
    toy_inventory,
    toy_lexicon,
)
from uttverify_core.verifier import Decision, Method, Verifier, report_header
from uttverify_lab.evaluation import (
    EvalResult,
    ScoredPair,
    evaluate_scores,
    method_rows,
    optimize,
    score_manifest,
    sweep_threshold,
    write_curve,
    write_eval_result,
)
from uttverify_lab.generator import (
    GeneratorSpec,
    StyleShift,
    spike_degenerate,
    synthesize_corpus,
    training_segments,
)
from uttverify_lab.manifest import (
    Label,
    MismatchMode,
    load_manifest,
    load_training_set,
    make_mismatch_set,
    save_manifest,
    save_training_set,
)

from .config import RunConfig, read_config_file

logger = logging.getLogger(__file__)

EXIT_MATCH = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2

MANIFEST_NAME = "manifest.tsv"
TRAINING_SET_NAME = "train/segments.tsv"


# -- argument parsing -------------------------------------------------------


def _choices(enum) -> str:
    return "{" + ",".join(member.value for member in enum) + "}"


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="file of key=value defaults; flags win")
    parser.add_argument("--workers", type=int, help="worker threads for batch scoring [default: CPU count]")
    parser.add_argument("--seed", type=int, help="seed of every random choice [default: 0]")
    parser.add_argument(
        "-v", "--verbose", action="count", help="log progress (-v) or per-item detail (-vv) on stderr"
    )


def _model_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-m", "--model", type=Path, help="acoustic model file")
    parser.add_argument("-l", "--lexicon", type=Path, help="pronunciation lexicon [default: toy lexicon]")
    parser.add_argument("--min-duration", type=int, help="minimum frames per phone [default: 3]")
    parser.add_argument("--expansion-cap", type=int, help="maximum pronunciation expansions [default: 32]")


def _frontend(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("front end")
    group.add_argument("--frame-length-ms", type=float)
    group.add_argument("--frame-shift-ms", type=float)
    group.add_argument("--pre-emphasis", type=float)
    group.add_argument("--num-mel-filters", type=int)
    group.add_argument("--delta-window", type=int)


def _decision(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("decision")
    group.add_argument(
        "--method",
        type=Method,
        choices=list(Method),
        metavar=_choices(Method),
        help="verification score [default: APR]",
    )
    group.add_argument("--tau", type=float, help="LLR threshold [default: 0]")
    group.add_argument("--theta", type=float, help="APR threshold [default: 1.5]")


def _pair(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("script", help="the expected script")
    parser.add_argument("input", type=Path, help="16-bit PCM WAV or feature dump")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uttverify",
        description="Verify that spoken utterances match their written scripts.",
        argument_default=argparse.SUPPRESS,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help, description=help, argument_default=argparse.SUPPRESS)
        _common(sub)
        return sub

    train = command("train", "train the phone GMMs and the anti-model")
    train.add_argument("-i", "--inventory", type=Path, help="phone inventory file")
    train.add_argument("-o", "--output", type=Path, help="model file to write")
    source = train.add_mutually_exclusive_group()
    source.add_argument("--segments", type=Path, help="labeled training segments (gen-corpus --training-set)")
    source.add_argument("--synthetic", action="store_true", help="sample segments from the seeded generator")
    train.add_argument("-K", "--components", type=int, help="Gaussians per phone [default: 4]")
    train.add_argument("--iterations", type=int, help="maximum EM iterations [default: 100]")
    train.add_argument("--variance-floor", type=float)
    train.add_argument("--per-phone", type=int, help="synthetic segments per phone [default: 40]")
    train.add_argument("--spread", type=float, help="synthetic phone centre spread [default: 1]")

    verify = command("verify", "score one script/utterance pair and decide")
    _model_inputs(verify)
    _decision(verify)
    _frontend(verify)
    _pair(verify)
    verify.add_argument("-o", "--output", type=Path, help="write the report here instead of stdout")

    align = command("align", "dump the forced alignment of one pair")
    _model_inputs(align)
    _frontend(align)
    _pair(align)
    align.add_argument("-o", "--output", type=Path, help="write the alignment here instead of stdout")

    gen = command("gen-corpus", "generate a synthetic corpus and its manifest")
    gen.add_argument("-o", "--output", type=Path, help="corpus directory")
    gen.add_argument("-i", "--inventory", type=Path, help="phone inventory [default: toy inventory]")
    gen.add_argument("-l", "--lexicon", type=Path, help="lexicon to draw scripts from [default: toy lexicon]")
    gen.add_argument("-n", "--pairs", type=int, help="correct pairs [default: 200]")
    gen.add_argument("--words", type=int, nargs=2, metavar=("MIN", "MAX"), help="words per script [default: 2 5]")
    gen.add_argument(
        "--mode",
        type=MismatchMode,
        choices=list(MismatchMode),
        metavar=_choices(MismatchMode),
        help="mismatch construction [default: none]"
    )
    gen.add_argument("-k", "--edits", type=int, help="words deleted/inserted/substituted [default: 4]")
    gen.add_argument("--gamma", type=float, help="covariance inflation of the style shift [default: 1]")
    gen.add_argument("--offset", type=float, help="norm of the style shift mean offset [default: 0]")
    gen.add_argument("--gain-std", type=float, help="per-utterance gain deviation [default: 0]")
    gen.add_argument("--style", help="style label written to the manifest [default: read]")
    gen.add_argument("--degenerate", type=float, help="fraction of pairs made degenerate [default: 0]")
    gen.add_argument("--perturbation", type=float, help="move test generators away from training ones")
    gen.add_argument("--spread", type=float, help="phone centre spread [default: 1]")
    gen.add_argument("--training-set", action="store_true", help="also write training segments")
    gen.add_argument("--per-phone", type=int, help="training segments per phone [default: 40]")

    evaluate = command("evaluate", "accuracy of one or more methods on a manifest")
    _model_inputs(evaluate)
    _decision(evaluate)
    _frontend(evaluate)
    evaluate.add_argument("-M", "--manifest", type=Path, help="manifest TSV")
    evaluate.add_argument(
        "--methods",
        type=lambda s: tuple(Method(m) for m in s.split(",")),
        help="comma separated methods, deltas against the first [default: LRT,APR]",
    )
    evaluate.add_argument("--optimize", action="store_true", help="sweep each method's threshold first")
    evaluate.add_argument("-o", "--output", type=Path, help="directory for per-method result files")

    sweep = command("sweep", "accuracy over a threshold grid")
    _model_inputs(sweep)
    _decision(sweep)
    _frontend(sweep)
    sweep.add_argument("-M", "--manifest", type=Path, help="manifest TSV")
    sweep.add_argument("--grid", help="LOW:HIGH:STEP [default: every distinct decision]")
    sweep.add_argument("-o", "--output", type=Path, help="curve file")

    return parser


def parse_config(parser: argparse.ArgumentParser, argv: Optional[Sequence[str]] = None) -> RunConfig:
    args = vars(parser.parse_args(argv))
    config_path = args.pop("config", None)
    values = read_config_file(config_path) if config_path is not None else {}
    values.update(args)
    try:
        return RunConfig(**values)
    except ValidationError as err:
        parser.error("; ".join(e["msg"].removeprefix("Value error, ") for e in err.errors()))


def configure_logging(verbose: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


# -- shared steps -----------------------------------------------------------


def generator_spec(cfg: RunConfig, inventory: PhoneInventory) -> GeneratorSpec:
    """The seeded generator shared by ``gen-corpus`` and ``train --synthetic``."""
    return GeneratorSpec.random(inventory, spread=cfg.spread, seed=cfg.seed)


def style_shift(cfg: RunConfig, dim: int) -> Optional[StyleShift]:
    if cfg.gamma == 1.0 and cfg.offset == 0.0 and cfg.gain_std == 0.0:
        return None
    if cfg.offset:
        return StyleShift.with_offset(cfg.gamma, cfg.offset, dim=dim, seed=cfg.seed, gain_std=cfg.gain_std)
    return StyleShift(gamma=cfg.gamma, gain_std=cfg.gain_std)


def load_lexicon_for(cfg: RunConfig, inventory: Optional[PhoneInventory] = None) -> Lexicon:
    if cfg.lexicon is None:
        return toy_lexicon()
    if inventory is None:
        inventory = load_inventory(cfg.inventory) if cfg.inventory is not None else toy_inventory()
    return load_lexicon(cfg.lexicon, inventory)


def read_input(path: Path, model: AcousticModel, cfg: RunConfig) -> FeatureMatrix:
    """A WAV file goes through the front end (deltas when the model is 39-dimensional); anything else is a feature dump."""
    if path.suffix.lower() == ".wav":
        waveform = load_wav(path)
        if model.feature_dim == 13:
            return compute_mfcc(waveform, cfg.frontend())
        return featurize(waveform, cfg.frontend())
    return read_features(path)


def _open(output: Optional[Path], stdout: TextIO):
    if output is None:
        return _Borrowed(stdout)
    return open(output, "w", encoding="utf-8")


class _Borrowed:
    """Context manager over a stream it does not close."""

    def __init__(self, stream: TextIO):
        self.stream = stream

    def __enter__(self) -> TextIO:
        return self.stream

    def __exit__(self, *exc) -> None:
        self.stream.flush()


def _score(cfg: RunConfig) -> List[ScoredPair]:
    model = load_model(cfg.model)
    lexicon = load_lexicon_for(cfg, model.inventory)
    manifest = load_manifest(cfg.manifest, cfg.frontend())
    return score_manifest(manifest, model, lexicon, options=cfg.align_options(), workers=cfg.workers)


# -- commands ---------------------------------------------------------------


def cmd_train(cfg: RunConfig, stdout: TextIO) -> int:
    inventory = load_inventory(cfg.inventory)
    if cfg.synthetic:
        spec = generator_spec(cfg, inventory)
        segments = training_segments(spec, per_phone=cfg.per_phone, seed=cfg.seed + 1)
        fingerprint = SYNTHETIC_FINGERPRINT
    else:
        segments, fingerprint = load_training_set(cfg.segments)

    def report(phone: str, iteration: int, loglik: float) -> None:
        stdout.write(f"{phone}\t{iteration}\t{loglik!r}\n")

    model = train_em(
        segments,
        inventory,
        K=cfg.components,
        iters=cfg.iterations,
        seed=cfg.seed,
        variance_floor=cfg.variance_floor,
        fingerprint=fingerprint,
        callback=report,
    )
    save_model(model, cfg.output)
    logger.info("Wrote model to %s", cfg.output)
    return EXIT_MATCH


def _verifier(cfg: RunConfig) -> Tuple[Verifier, FeatureMatrix]:
    model = load_model(cfg.model)
    verifier = Verifier(model, load_lexicon_for(cfg, model.inventory), cfg.verifier_config(), cfg.align_options())
    return verifier, read_input(cfg.input, model, cfg)


def cmd_verify(cfg: RunConfig, stdout: TextIO) -> int:
    verifier, feat = _verifier(cfg)
    report = verifier.verify(cfg.script, feat, pair_id=cfg.input.stem)
    with _open(cfg.output, stdout) as fobj:
        fobj.write(report_header() + "\n")
        fobj.write(report.to_line() + "\n")
    return EXIT_MATCH if report.decision == Decision.MATCH else EXIT_MISMATCH


def cmd_align(cfg: RunConfig, stdout: TextIO) -> int:
    verifier, feat = _verifier(cfg)
    alignment, _, _ = verifier.score(cfg.script, feat)
    with _open(cfg.output, stdout) as fobj:
        write_alignment(fobj, alignment)
    return EXIT_MATCH


def cmd_gen_corpus(cfg: RunConfig, stdout: TextIO) -> int:
    lexicon = load_lexicon_for(cfg)
    inventory = lexicon.inventory
    spec = generator_spec(cfg, inventory)
    test_spec = spec.perturbed(cfg.perturbation, cfg.seed + 2) if cfg.perturbation > 0 else spec

    manifest = synthesize_corpus(
        lexicon,
        test_spec,
        cfg.pairs,
        words=cfg.words,
        shift=style_shift(cfg, spec.dim),
        style=cfg.style,
        seed=cfg.seed,
    )
    if cfg.mode == MismatchMode.DEGENERATE:
        # degenerate pairs replace reassigned ones, all of them by default
        manifest = make_mismatch_set(manifest, MismatchMode.REASSIGN, seed=cfg.seed)
        manifest = spike_degenerate(manifest, lexicon, test_spec, fraction=cfg.degenerate or 0.5, seed=cfg.seed)
    else:
        if cfg.mode != MismatchMode.NONE:
            manifest = make_mismatch_set(
                manifest, cfg.mode, k=cfg.edits, seed=cfg.seed, vocabulary=lexicon.words()
            )
        if cfg.degenerate > 0:
            manifest = spike_degenerate(manifest, lexicon, test_spec, fraction=cfg.degenerate, seed=cfg.seed)

    cfg.output.mkdir(parents=True, exist_ok=True)
    path = save_manifest(manifest, cfg.output / MANIFEST_NAME)
    save_inventory(inventory, cfg.output / "inventory.txt")
    save_lexicon(lexicon, cfg.output / "lexicon.txt")
    if cfg.training_set:
        save_training_set(
            training_segments(spec, per_phone=cfg.per_phone, seed=cfg.seed + 1),
            cfg.output / TRAINING_SET_NAME,
            fingerprint=SYNTHETIC_FINGERPRINT,
        )
    counts = manifest.counts()
    stdout.write(
        f"{len(manifest)} pairs ({counts[Label.CORRECT]} correct, {counts[Label.INCORRECT]} incorrect) in {path}\n"
    )
    return EXIT_MATCH


def _summary(results: Sequence[EvalResult], stdout: TextIO) -> None:
    stdout.write("#method\tthreshold\ttau\tACC\tdelta\trelative\n")
    for row in method_rows(results):
        r = row.result
        stdout.write(
            f"{r.method.value}\t{r.threshold!r}\t{r.tau!r}\t{r.accuracy:.4f}\t{row.delta:+.4f}\t{row.relative:+.1f}%\n"
        )


def cmd_evaluate(cfg: RunConfig, stdout: TextIO) -> int:
    pairs = _score(cfg)
    if cfg.optimize:
        results = [optimize(pairs, m, tau=cfg.tau) for m in cfg.methods]
    else:
        results = [evaluate_scores(pairs, m, cfg.threshold(m), cfg.tau) for m in cfg.methods]
    _summary(results, stdout)
    if cfg.output is not None:
        cfg.output.mkdir(parents=True, exist_ok=True)
        for result in results:
            write_eval_result(cfg.output / f"{result.method.value}.tsv", result)
    return EXIT_MATCH


def cmd_sweep(cfg: RunConfig, stdout: TextIO) -> int:
    pairs = _score(cfg)
    grid = None
    if cfg.grid is not None:
        low, high, step = cfg.grid
        grid = np.arange(low, high + step / 2, step).tolist()
    sweep = sweep_threshold(pairs, cfg.method, grid=grid, tau=cfg.tau)
    if cfg.output is not None:
        write_curve(cfg.output, sweep)
    low, high = sweep.plateau()
    stdout.write(
        f"{cfg.method.value}\tbest {sweep.best.threshold!r}\taccuracy {sweep.best.accuracy!r}\tplateau {low!r}:{high!r}\n"
    )
    return EXIT_MATCH


COMMANDS = {
    "train": cmd_train,
    "verify": cmd_verify,
    "align": cmd_align,
    "gen-corpus": cmd_gen_corpus,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None) -> int:
    parser = build_parser()
    try:
        cfg = parse_config(parser, argv)
    except (ValueError, FileNotFoundError) as err:
        parser.error(str(err))
    configure_logging(cfg.verbose)
    try:
        return COMMANDS[cfg.command](cfg, stdout or sys.stdout)
    except (ValueError, OSError) as err:
        logger.debug("%s failed", cfg.command, exc_info=True)
        sys.stderr.write(f"uttverify: error: {err}\n")
        return EXIT_ERROR
