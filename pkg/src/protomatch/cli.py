"""Command-line entry point.

Subcommands: synth, match, train, eval, vlas, explain, bench.  Exit codes:
0 success, 2 input/format error, 3 infeasible instance, 4 internal invariant
violation.  Every command is deterministic under a fixed --seed (default:
the PROTOMATCH_SEED environment variable, then 0) and writes only under its
declared output path.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import RunConfig, desk_config
from .errors import (
    FormatError,
    InstanceTooSmallError,
    InvariantError,
    ValidationError,
)
from .feature_io import QAExample, enhance, load_dataset, load_features, load_tokens
from .geometry import GridSpec, patch_to_box
from .matching import MatchResult, match_all, ranked_patches, top_k_patches
from .model import ModelParams, evaluate, init_params, load_model, save_model, train
from .projection import project_tokens
from .prototypes import PrototypeSet, build_prototypes
from .synth import generate_dataset, reference_projector
from .vlas import vlas
from . import bruteforce, explain


def _default_seed() -> int:
    env = os.environ.get("PROTOMATCH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ValidationError(f"PROTOMATCH_SEED must be an integer, got {env!r}") from exc


def _parse_grid(text: str) -> GridSpec:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValidationError(f"--grid expects HxWxP, got {text!r}")
    try:
        h, w, p = (int(v) for v in parts)
        return GridSpec(h, w, p)
    except ValueError as exc:
        raise ValidationError(f"--grid {text!r}: {exc}") from exc


def _resolve_config(args, base: RunConfig) -> RunConfig:
    """Layered config: defaults < dataset config < --config JSON < flags."""
    cfg = base
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                cfg = RunConfig.from_dict({**cfg.to_dict(), **json.load(fh)})
        except OSError as exc:
            raise ValidationError(f"cannot read --config {config_path}: {exc}") from exc
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise FormatError(f"--config {config_path}: {exc}") from exc
    overrides = {}
    for name in ("m", "k", "r", "theta", "d", "d_text", "epochs", "lr", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "grid", None) is not None:
        overrides["grid"] = _parse_grid(args.grid)
    seed = getattr(args, "seed", None)
    overrides["seed"] = seed if seed is not None else _default_seed()
    return cfg.with_overrides(**overrides)


def _dataset_base_config(manifest_path: str) -> RunConfig | None:
    """Pick up the generator's config stored next to the dataset, if any."""
    for candidate in (
        os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "synth_config.json"),
        os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(manifest_path))),
                     "synth_config.json"),
    ):
        if os.path.isfile(candidate):
            try:
                with open(candidate, "r", encoding="utf-8") as fh:
                    return RunConfig.from_dict(json.load(fh)["config"])
            except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError):
                return None
    return None


def _config_from_data(cfg: RunConfig, dataset: list[QAExample]) -> RunConfig:
    """Force the data-determined dimensions; they are not a free choice."""
    first = dataset[0]
    return cfg.with_overrides(
        d=first.features.d,
        d_text=int(first.question.tokens.shape[1]),
        grid=first.features.grid,
    )


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _matcher_state(args, cfg: RunConfig, d: int, d_text: int):
    """Question projector + slot weights, from a checkpoint or the reference."""
    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint:
        params = load_model(checkpoint)
        return params.question_projector, params.slot_weights, params.config
    projector = reference_projector(d_text, d)
    return projector, np.full(cfg.k, 1.0 / cfg.k), cfg


def _match_example(projector, slot_weights, cfg: RunConfig, features,
                   question) -> list[MatchResult]:
    projected = project_tokens(projector, question)
    protos = PrototypeSet(
        protos=build_prototypes(projected, cfg.m, cfg.k),
        slot_weights=np.asarray(slot_weights, dtype=np.float64),
        m=cfg.m,
        k=cfg.k,
    )
    return match_all(enhance(features), protos, features.grid, cfg.r)


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve_config(args, desk_config())
    stats = generate_dataset(args.out, args.n_train, args.n_test, cfg,
                             pathway=args.pathway)
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return 0


def cmd_match(args) -> int:
    features = load_features(args.features)
    question = load_tokens(args.question)
    cfg = _resolve_config(args, RunConfig())
    projector, slot_weights, match_cfg = _matcher_state(
        args, cfg, features.d, int(question.tokens.shape[1]))
    cfg = cfg.with_overrides(m=match_cfg.m if args.m is None else cfg.m,
                             k=match_cfg.k if args.k is None else cfg.k,
                             r=match_cfg.r if args.r is None else cfg.r)
    results = _match_example(projector, slot_weights, cfg, features, question)
    doc = {
        "m": cfg.m,
        "k": cfg.k,
        "r": cfg.r,
        "results": [res.to_dict() for res in results],
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.manifest)
    if not dataset:
        raise ValidationError("training manifest lists no examples")
    base = _dataset_base_config(args.manifest) or RunConfig()
    cfg = _config_from_data(_resolve_config(args, base), dataset)
    params = init_params(cfg)
    log = train(params, dataset, epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed,
                batch_size=cfg.batch_size)
    save_model(params, args.out)
    lines = "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in log)
    _write_text(os.path.join(args.out, "metrics.jsonl"), lines)
    final = log[-1] if log else {"epoch": None, "loss": None, "accuracy": None}
    print(json.dumps({"checkpoint": args.out, **final}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.manifest)
    if not dataset:
        raise ValidationError("evaluation manifest lists no examples")
    params = load_model(args.checkpoint)
    accuracy = evaluate(params, dataset)
    print(f"accuracy: {accuracy:.4f}")
    if args.out:
        doc = {"n": len(dataset), "accuracy": accuracy}
        _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def _load_match_file(matches_dir: str, image_id: str) -> list[MatchResult]:
    path = os.path.join(matches_dir, f"{image_id}.matches.json")
    if not os.path.isfile(path):
        raise ValidationError(f"example {image_id}: no match file {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return [MatchResult.from_dict(d) for d in doc["results"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"match file {path}: {exc}") from exc


def cmd_vlas(args) -> int:
    dataset = load_dataset(args.manifest)
    if not dataset:
        raise ValidationError("manifest lists no examples")
    base = _dataset_base_config(args.manifest) or RunConfig()
    cfg = _config_from_data(_resolve_config(args, base), dataset)
    semantics = args.semantics
    k_semantics = "top_k_patches" if semantics == "patches" else "top_k_prototypes"

    projector = slot_weights = None
    if not args.matches_dir:
        projector, slot_weights, match_cfg = _matcher_state(
            args, cfg, cfg.d, cfg.d_text)
        if args.checkpoint:
            cfg = cfg.with_overrides(m=match_cfg.m, k=match_cfg.k, r=match_cfg.r)

    examples = []
    skipped = 0
    for ex in dataset:
        if ex.evidence_box is None:
            skipped += 1
            continue
        if args.matches_dir:
            results = _load_match_file(args.matches_dir, ex.image_id)
        else:
            results = _match_example(projector, slot_weights, cfg, ex.features,
                                     ex.question)
        patches = top_k_patches(results, args.vlas_k, semantics=semantics)
        boxes = [patch_to_box(ex.features.grid, p) for p in patches]
        examples.append((ex.image_id, boxes, ex.evidence_box))
    if not examples:
        raise ValidationError("no examples carry an evidence box; VLAS is undefined")

    report = vlas(examples, cfg.theta, args.vlas_k, strict=args.strict,
                  k_semantics=k_semantics)
    doc = report.to_dict()
    doc["skipped_no_gt"] = skipped
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text)
    print(f"vlas@{args.vlas_k} (theta={cfg.theta}): {report.score:.4f} "
          f"({report.hits}/{report.n_qa})")
    return 0


def cmd_explain(args) -> int:
    dataset = load_dataset(args.manifest)
    if args.image_id is not None:
        matching_examples = [ex for ex in dataset if ex.image_id == args.image_id]
        if not matching_examples:
            raise ValidationError(f"no example with image_id {args.image_id!r}")
        ex = matching_examples[0]
    else:
        if not 0 <= args.index < len(dataset):
            raise ValidationError(f"--index {args.index} out of range for "
                                  f"{len(dataset)} examples")
        ex = dataset[args.index]
    if ex.evidence_box is None:
        raise ValidationError(f"example {ex.image_id} has no evidence box to draw")
    base = _dataset_base_config(args.manifest) or RunConfig()
    cfg = _config_from_data(_resolve_config(args, base), [ex])
    projector, slot_weights, match_cfg = _matcher_state(args, cfg, cfg.d, cfg.d_text)
    if args.checkpoint:
        cfg = cfg.with_overrides(m=match_cfg.m, k=match_cfg.k, r=match_cfg.r)
    results = _match_example(projector, slot_weights, cfg, ex.features, ex.question)
    ranked = ranked_patches(results, semantics=args.semantics)[: args.vlas_k]
    matches = [(patch, patch_to_box(ex.features.grid, patch), sim)
               for patch, sim in ranked]
    _write_text(args.out, explain.build_overlay_svg(ex.features.grid,
                                                    ex.evidence_box, matches))
    _write_text(args.out + ".json",
                explain.build_sidecar(ex.image_id, ex.features.grid, ex.evidence_box,
                                      matches))
    print(f"wrote {args.out} and {args.out}.json")
    return 0


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    rng = np.random.default_rng(seed)
    from .feature_io import EnhancedFeatures
    from .matching import greedy_match

    mismatches = 0
    max_score_gap = 0.0
    greedy_seconds = 0.0
    oracle_seconds = 0.0
    for _ in range(args.instances):
        while True:
            rows = int(rng.integers(1, 5))
            cols = int(rng.integers(1, 5))
            if rows * cols <= args.max_n:
                break
        k = int(rng.integers(1, args.k_max + 1))
        if rows * cols < k:
            k = rows * cols
        r = int(rng.integers(0, 4))
        d = int(rng.integers(2, 7))
        grid = GridSpec(rows * 16, cols * 16, 16)
        patches = rng.standard_normal((rows * cols, d))
        proto = rng.standard_normal((k, d))
        weights = rng.standard_normal(k)

        t0 = time.perf_counter()
        got = greedy_match(EnhancedFeatures(patches), proto, grid, r, weights)
        t1 = time.perf_counter()
        ref_sel, ref_score = bruteforce.match_reference(
            patches.tolist(), proto.tolist(), rows, cols, r, weights.tolist())
        t2 = time.perf_counter()
        greedy_seconds += t1 - t0
        oracle_seconds += t2 - t1

        got_sel = [(s.t, s.patch, s.subpatch) for s in got.selections]
        want_sel = [(t, p, j) for t, p, j, _ in ref_sel]
        gap = abs(got.score - ref_score)
        max_score_gap = max(max_score_gap, gap)
        if got_sel != want_sel or gap > 1e-9:
            mismatches += 1

    doc = {
        "instances": args.instances,
        "mismatches": mismatches,
        "max_score_gap": max_score_gap,
        "greedy_seconds": round(greedy_seconds, 6),
        "oracle_seconds": round(oracle_seconds, 6),
        "seed": seed,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text)
    print(text, end="")
    return 0


# -- parser --------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, training: bool = False) -> None:
    p.add_argument("--m", type=int, default=None, help="number of prototypes")
    p.add_argument("--k", type=int, default=None, help="sub-patches per prototype")
    p.add_argument("--r", type=int, default=None, help="adjacency radius")
    p.add_argument("--theta", type=float, default=None, help="alignment threshold")
    p.add_argument("--seed", type=int, default=None,
                   help="rng seed (default: $PROTOMATCH_SEED, then 0)")
    p.add_argument("--grid", type=str, default=None, help="grid as HxWxP, e.g. 224x224x16")
    p.add_argument("--d", type=int, default=None, help="visual feature dimension")
    p.add_argument("--d-text", dest="d_text", type=int, default=None,
                   help="token embedding dimension")
    p.add_argument("--config", type=str, default=None,
                   help="JSON file with config overrides (flags win)")
    if training:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomatch",
        description="Prototype matching, training, and explanation alignment tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--pathway", choices=("text", "coord"), default="text")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="match prototypes for one feature/question pair")
    p.add_argument("--features", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--checkpoint", default=None,
                   help="model checkpoint directory (default: reference projector)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("train", help="train on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint output directory")
    _add_config_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("vlas", help="alignment score over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--vlas-k", dest="vlas_k", type=int, default=3)
    p.add_argument("--matches-dir", dest="matches_dir", default=None,
                   help="directory of <image_id>.matches.json files from `match`")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--strict", action="store_true",
                   help="require IoU strictly greater than theta")
    p.add_argument("--semantics", choices=("patches", "prototypes"), default="patches")
    _add_config_flags(p)
    p.set_defaults(func=cmd_vlas)

    p = sub.add_parser("explain", help="SVG overlay of gt box and top-K matches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--image-id", dest="image_id", default=None)
    p.add_argument("--vlas-k", dest="vlas_k", type=int, default=3)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--semantics", choices=("patches", "prototypes"), default="patches")
    _add_config_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="greedy vs exhaustive oracle comparison")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--max-n", dest="max_n", type=int, default=16)
    p.add_argument("--k-max", dest="k_max", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstanceTooSmallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except (FormatError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 -- last-resort structured exit
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
