"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .annotations import Annotation, RttmFormatError, rttm_read, rttm_write
from .config import ConfigError, PipelineConfig, load_config, load_geometry, load_scene_config
from .dump import DumpFormatError, write_dump
from .fusion import fuse
from .model import (CLOSE_DEGREES, TrainingDivergedError, load_checkpoint, load_features, save_checkpoint,
                    save_features, train)
from .pipeline import (BandFeatures, diarize, estimate_speaker_doas,
                       pooled_der, recording_features, scene_training_example)
from .profiles import SpeakerProfile, read_profiles, write_profiles
from .scoring import der
from .signals import WavError, read_wav
from .simulator import InfeasibleSceneError, SceneConfig, synthesize_scene, write_scene
from .spatial import DEFAULT_PAIRS, ArrayGeometry, min_angular_difference

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
HELP_WIDTH = 80

logger = logging.getLogger("spatialdiar")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=30)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialdiar", formatter_class=_formatter,
                description="Spatial-feature speaker diarization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def cmd(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_formatter)

    def pipeline_config(sp):
        sp.add_argument("--config", metavar="FILE",
                        help="pipeline config (default: $SPATIALDIAR_CONFIG, else built-in)")

    def geometry(sp):
        sp.add_argument("--geometry", metavar="FILE",
                        help="array geometry file (default: 8-mic circle, r=4.25 cm)")

    s = cmd("simulate", "render synthetic scenes to WAV, RTTM and profile files")
    s.add_argument("--config", metavar="FILE", help="scene config file")
    s.add_argument("--seed", type=int, help="scene seed (overrides the config)")
    s.add_argument("--count", type=int, default=1, help="number of scenes, seeds seed..seed+count-1")
    s.add_argument("--out-dir", default=".", metavar="DIR", help="output directory")
    s.add_argument("--encoding", choices=("float32", "pcm16"), default="float32",
                   help="WAV sample encoding")
    s.add_argument("--jobs", type=int, default=1, help="parallel scenes")

    s = cmd("extract", "compute angle-feature and LPS dumps for one recording")
    s.add_argument("--wav", required=True, metavar="FILE", help="multichannel WAV")
    geometry(s)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--profiles", metavar="FILE", help="speaker profiles: fused model features")
    g.add_argument("--thetas", metavar="LIST", help="comma-separated degrees: raw AF/LPS dump")
    s.add_argument("--session", help="session name (default: WAV file stem)")
    s.add_argument("--out", required=True, metavar="FILE", help="output dump")
    pipeline_config(s)

    s = cmd("estimate-doa", "estimate each annotated speaker's direction")
    s.add_argument("--wav", required=True, metavar="FILE", help="multichannel WAV")
    s.add_argument("--rttm", required=True, metavar="FILE", help="speaker segments")
    geometry(s)
    s.add_argument("--profiles", metavar="FILE", help="embeddings to carry into --out")
    s.add_argument("--session", help="RTTM session to use (default: WAV file stem)")
    s.add_argument("--out", metavar="FILE", help="write profiles with estimated directions")
    pipeline_config(s)

    s = cmd("train", "train the activity model on a directory of scenes")
    s.add_argument("--scene-dir", required=True, metavar="DIR",
                   help="directory of <stem>.wav, <stem>.rttm, <stem>.profile")
    geometry(s)
    s.add_argument("--out", required=True, metavar="FILE", help="checkpoint to write")
    s.add_argument("--seed", type=int, help="training seed (overrides the config)")
    s.add_argument("--oracle-doa", action="store_true",
                   help="use profile directions instead of estimating them")
    s.add_argument("--no-augment", action="store_true", help="disable AF augmentation")
    s.add_argument("--jobs", type=int, default=1, help="parallel feature extraction")
    pipeline_config(s)

    s = cmd("infer", "diarize feature dumps with a trained checkpoint")
    s.add_argument("--checkpoint", required=True, metavar="FILE", help="model checkpoint")
    s.add_argument("--features", required=True, nargs="+", metavar="FILE", help="fused feature dumps")
    s.add_argument("--threshold", type=float, help="activity threshold (overrides the config)")
    s.add_argument("--out", required=True, metavar="FILE", help="output RTTM")
    pipeline_config(s)

    s = cmd("score", "score a hypothesis RTTM against a reference")
    s.add_argument("--ref", required=True, metavar="FILE", help="reference RTTM")
    s.add_argument("--hyp", required=True, metavar="FILE", help="hypothesis RTTM")
    s.add_argument("--collar", type=float, help="collar in seconds (overrides the config)")
    s.add_argument("--format", choices=("table", "kv"), default="table", help="report style")
    s.add_argument("--jobs", type=int, default=1, help="parallel sessions")
    pipeline_config(s)

    s = cmd("fuse", "fuse several hypothesis RTTMs by label voting")
    s.add_argument("--hyp", required=True, nargs="+", metavar="FILE", help="hypothesis RTTMs")
    s.add_argument("--weights", metavar="LIST", help="comma-separated positive weights")
    s.add_argument("--anchor", type=int, default=1, help="1-based hypothesis giving the labels")
    s.add_argument("--exclude", metavar="FILE",
                   help="lines 'SESSION N [N ...]' dropping hypotheses N for a session")
    s.add_argument("--out", required=True, metavar="FILE", help="output RTTM")
    return p


# ---------------------------------------------------------------------------
# helpers


def _pipeline_config(args) -> PipelineConfig:
    return load_config(args.config)


def _geometry(args):
    if getattr(args, "geometry", None):
        return load_geometry(args.geometry)
    return ArrayGeometry.circular(), DEFAULT_PAIRS


def _floats(text: str, what: str) -> List[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: empty list")
    return vals


def _jobs(n: int) -> int:
    if n < 1:
        raise UsageError("--jobs must be >= 1")
    return n


def _pmap(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _session(annotations: List[Annotation], wanted: Optional[str], path) -> Annotation:
    if not annotations:
        raise ValueError(f"{path}: no segments")
    if wanted is not None:
        for a in annotations:
            if a.session == wanted:
                return a
        if len(annotations) > 1:
            raise ValueError(f"{path}: session {wanted!r} not found")
    if len(annotations) > 1 and wanted is None:
        raise ValueError(f"{path}: several sessions, choose one with --session")
    return annotations[0]


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, out) -> int:
    base = load_scene_config(args.config) if args.config else SceneConfig()
    seed0 = base.seed if args.seed is None else args.seed
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    from dataclasses import replace

    def one(seed):
        truth = synthesize_scene(replace(base, seed=seed))
        return write_scene(truth, args.out_dir, encoding=args.encoding)

    for path in _pmap(one, list(range(seed0, seed0 + args.count)), _jobs(args.jobs)):
        print(path, file=out)
    return EXIT_OK


def cmd_extract(args, out) -> int:
    cfg = _pipeline_config(args)
    geom, pairs = _geometry(args)
    settings = cfg.feature_settings(pairs)
    audio = read_wav(args.wav)
    band = BandFeatures(audio, geom, settings)
    session = args.session or Path(args.wav).stem
    if args.profiles:
        profiles = read_profiles(args.profiles)
        if not profiles:
            raise ValueError(f"{args.profiles}: no speakers")
        dims = {p.embedding.shape for p in profiles}
        if len(dims) != 1 or dims.pop()[0] != cfg.n_bands:
            raise ValueError(f"{args.profiles}: embeddings must all have {cfg.n_bands} values")
        feats = recording_features(audio, geom, profiles, settings, band)
        save_features(feats, args.out, session)
        print(f"{args.out}: {feats.frames} frames, {feats.n_slots} slots "
              f"({int(feats.real.sum())} real)", file=out)
    else:
        thetas = np.asarray(_floats(args.thetas, "--thetas")) % 360.0
        write_dump(args.out, {"lps": band.lps, "af": band.af(thetas), "thetas": thetas},
                   {"kind": "spatialdiar-raw", "session": session,
                    "hop_seconds": repr(band.hop_seconds)})
        print(f"{args.out}: {band.frames} frames, {len(thetas)} directions", file=out)
    return EXIT_OK


def cmd_estimate_doa(args, out) -> int:
    cfg = _pipeline_config(args)
    geom, pairs = _geometry(args)
    settings = cfg.feature_settings(pairs)
    audio = read_wav(args.wav)
    ann = _session(rttm_read(args.rttm), args.session or Path(args.wav).stem, args.rttm)
    band = BandFeatures(audio, geom, settings)
    names = ann.speakers
    est = estimate_speaker_doas(band.spec, geom, ann, names, settings)
    thetas = [est[n].theta for n in names]
    dtheta = min_angular_difference(thetas)
    print(f"{'speaker':<12} {'theta':>7} {'dtheta':>7} {'close':>5} {'score':>7} {'conf':>7} "
          f"{'ambig':>5}", file=out)
    for n, d in zip(names, dtheta):
        e = est[n]
        print(f"{n:<12} {e.theta:7.1f} {d:7.1f} {int(d <= CLOSE_DEGREES):5d} {e.score:7.4f} "
              f"{e.confidence:7.4f} {int(e.ambiguous):5d}", file=out)
    if args.out:
        emb: Dict[str, np.ndarray] = {}
        if args.profiles:
            emb = {p.name: p.embedding for p in read_profiles(args.profiles)}
        write_profiles([SpeakerProfile(n, est[n].theta, emb.get(n, np.zeros(0))) for n in names],
                       args.out)
    return EXIT_OK


def _scene_files(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    wavs = sorted(d.glob("*.wav"))
    if not wavs:
        raise ValueError(f"{d}: no .wav files")
    for w in wavs:
        for ext in (".rttm", ".profile"):
            if not w.with_suffix(ext).exists():
                raise FileNotFoundError(f"{w.with_suffix(ext)}: missing")
    return wavs


def cmd_train(args, out) -> int:
    cfg = _pipeline_config(args)
    geom, pairs = _geometry(args)
    settings = cfg.feature_settings(pairs)
    wavs = _scene_files(args.scene_dir)

    def one(wav: Path):
        from .simulator import SceneTruth
        ann = _session(rttm_read(wav.with_suffix(".rttm")), wav.stem, wav.with_suffix(".rttm"))
        truth = SceneTruth(ann, read_profiles(wav.with_suffix(".profile")), read_wav(wav))
        return scene_training_example(truth, geom, settings, args.oracle_doa)

    scenes = _pmap(one, wavs, _jobs(args.jobs))
    hyper = cfg.train_config()
    if args.no_augment:
        hyper.aug_prob = 0.0
    seed = cfg.seed if args.seed is None else args.seed
    result = train(scenes, hyper, seed, progress=lambda r: logger.info(
        "epoch %d train %.4f val %.4f", r["epoch"], r["train"], r["val"]))
    best = min(result.history, key=lambda r: r["val"])
    save_checkpoint(result.params, args.out, {"seed": seed, "scenes": len(scenes),
                                              "best_epoch": best["epoch"],
                                              "aug_prob": hyper.aug_prob})
    print(f"{args.out}: {len(scenes)} scenes, best epoch {best['epoch']}, "
          f"val loss {best['val']:.4f}, sha256 {result.params.checksum()[:16]}", file=out)
    return EXIT_OK


def cmd_infer(args, out) -> int:
    cfg = _pipeline_config(args)
    threshold = cfg.threshold if args.threshold is None else args.threshold
    if not 0.0 < threshold < 1.0:
        raise UsageError("--threshold must lie in (0, 1)")
    params, _ = load_checkpoint(args.checkpoint)
    hyps = []
    for path in args.features:
        feats, session = load_features(path)
        hyps.append(diarize(params, feats, session, threshold, cfg.min_on, cfg.max_gap))
    rttm_write(hyps, args.out)
    print(f"{args.out}: {len(hyps)} sessions", file=out)
    return EXIT_OK


def cmd_score(args, out) -> int:
    cfg = _pipeline_config(args)
    collar = cfg.collar if args.collar is None else args.collar
    if collar < 0:
        raise UsageError("--collar must be >= 0")
    refs = rttm_read(args.ref)
    hyps = {a.session: a for a in rttm_read(args.hyp)}
    if not refs:
        raise ValueError(f"{args.ref}: empty reference")
    for extra in sorted(set(hyps) - {r.session for r in refs}):
        logger.warning("hypothesis session %s has no reference; ignored", extra)
    pairs = [(r, hyps.get(r.session, Annotation(r.session, []))) for r in refs]
    reports = _pmap(lambda rh: der(rh[0], rh[1], collar), pairs, _jobs(args.jobs))
    total = pooled_der([r for r, _ in pairs], [h for _, h in pairs], collar) if len(refs) > 1 else reports[0]
    if args.format == "kv":
        if len(refs) > 1:
            for (r, _), rep in zip(pairs, reports):
                for line in rep.to_kv().splitlines():
                    print(f"{r.session}.{line}", file=out)
        out.write(total.to_kv())
    else:
        if len(refs) > 1:
            width = max(len("SESSION"), *(len(r.session) for r in refs))
            head, _ = total.to_table().splitlines()
            print(f"{'SESSION':<{width}} {head}", file=out)
            for (r, _), rep in zip(pairs, reports):
                print(f"{r.session:<{width}} {rep.to_table().splitlines()[1]}", file=out)
            print(f"{'ALL':<{width}} {total.to_table().splitlines()[1]}", file=out)
        else:
            out.write(total.to_table())
    return EXIT_OK


def read_exclusions(path, n_hyp: int) -> Dict[str, set]:
    """``session -> {hypothesis indices}`` (0-based) from a filter file."""
    excl: Dict[str, set] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split("#", 1)[0].split()
            if not fields:
                continue
            if len(fields) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'SESSION N [N ...]'")
            try:
                nums = [int(x) for x in fields[1:]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: hypothesis numbers must be integers") from None
            if any(not 1 <= k <= n_hyp for k in nums):
                raise ValueError(f"{path}:{lineno}: hypothesis number outside 1..{n_hyp}")
            excl.setdefault(fields[0], set()).update(k - 1 for k in nums)
    return excl


def cmd_fuse(args, out) -> int:
    n = len(args.hyp)
    weights = _floats(args.weights, "--weights") if args.weights else [1.0] * n
    if len(weights) != n:
        raise UsageError(f"--weights has {len(weights)} values for {n} hypotheses")
    if any(w <= 0 for w in weights):
        raise UsageError("--weights must be positive")
    if not 1 <= args.anchor <= n:
        raise UsageError(f"--anchor must lie in 1..{n}")
    excl = read_exclusions(args.exclude, n) if args.exclude else {}
    per_hyp = [{a.session: a for a in rttm_read(p)} for p in args.hyp]
    sessions = []
    for h in per_hyp:
        sessions += [s for s in h if s not in sessions]
    fused = []
    for s in sessions:
        keep = [k for k in range(n) if k not in excl.get(s, set())]
        if not keep:
            logger.warning("session %s: every hypothesis excluded; skipped", s)
            continue
        anchor = args.anchor - 1 if args.anchor - 1 in keep else keep[0]
        order = [anchor] + [k for k in keep if k != anchor]
        hyps = [per_hyp[k].get(s, Annotation(s, [])) for k in order]
        fused.append(fuse(hyps, [weights[k] for k in order], anchor=0))
    rttm_write(fused, args.out)
    print(f"{args.out}: {len(fused)} sessions", file=out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "extract": cmd_extract, "estimate-doa": cmd_estimate_doa,
    "train": cmd_train, "infer": cmd_infer, "score": cmd_score, "fuse": cmd_fuse,
}


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    """Execute one subcommand and return its exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if any(a in ("-h", "--help") for a in argv):
            out.write(help_text([a for a in argv if a in COMMANDS][:1]))
            return EXIT_OK
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"spatialdiar: choose a subcommand: {', '.join(COMMANDS)}")
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=err, format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (OSError, WavError, RttmFormatError, DumpFormatError, InfeasibleSceneError,
            KeyError, ValueError, IndexError) as exc:
        print(f"data error: {exc}", file=err)
        return EXIT_DATA


def help_text(argv: Sequence[str] = ()) -> str:
    """The help message of the top-level parser or of one subcommand."""
    parser = build_parser()
    if not argv:
        return parser.format_help()
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[argv[0]].format_help()


def main() -> None:
    sys.exit(run())
