"""Command-line entry point: ``voxtok <subcommand> ...``.

Every subcommand prints one JSON summary line on stdout. Batch commands
are lenient by default (exit 0, failures counted); ``--strict`` makes any
per-item failure exit 1. Fatal errors exit 2.

Settings may come from a key-value file given by ``--config``: keys in a
``[voxtok]`` section apply to every subcommand, keys in a section named
after the subcommand override them, and command-line flags override both.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import corpus, latent_coder, metrics, shape_prior, voxelizer
from .errors import VoxtokError
from .mesh_io import load_obj, normalize_to_unit_cube

log = logging.getLogger("voxtok")

GRID_EXT = ".vox"
TOKENS_EXT = ".tok"

EXIT_OK, EXIT_FAILURES, EXIT_FATAL = 0, 1, 2


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers

def _inputs(path, ext):
    """Sorted files with ``ext`` if ``path`` is a directory, else ``[path]``."""
    p = Path(path)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix.lower() == ext and q.is_file())
    if not p.exists():
        raise CliError(f"input {p} does not exist")
    return [p]


def _outputs(inputs, src, out, ext):
    """Output path per input; directory mode mirrors stems into ``out``."""
    if Path(src).is_dir():
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return [out / (p.stem + ext) for p in inputs]
    parent = Path(out).parent
    if not parent.is_dir():
        raise CliError(f"output directory {parent} does not exist")
    return [Path(out)]


def _batch(fn, jobs, items):
    """Apply ``fn`` to items in order; returns ``(result, error)`` pairs."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _report(results, inputs):
    failures = []
    for p, (_, err) in zip(inputs, results):
        if err is not None:
            print(f"{p}: {err}", file=sys.stderr)
            failures.append({"file": str(p), "error": err})
    return failures


# workers live at module level so they pickle for process pools

def _voxelize_one(args):
    src, dst, fill = args
    try:
        grid = voxelizer.voxelize_surface(normalize_to_unit_cube(load_obj(src)))
        if fill == "solid":
            grid = voxelizer.solid_fill(grid)
        voxelizer.save_grid(grid, dst)
        return grid.count, None
    except (VoxtokError, OSError, UnicodeDecodeError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _encode_one(args):
    model_path, src, dst = args
    try:
        model = latent_coder.load_model(model_path)
        latent_coder.save_tokens(latent_coder.encode(voxelizer.load_grid(src), model), dst)
        return None, None
    except (VoxtokError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _decode_one(args):
    model_path, src, dst = args
    try:
        model = latent_coder.load_model(model_path)
        vocab = max(model.codebook.size, latent_coder.CODEBOOK_SIZE)
        grid = latent_coder.decode(latent_coder.load_tokens(src, vocab), model)
        voxelizer.save_grid(grid, dst)
        return grid.count, None
    except (VoxtokError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _load_grids(path):
    files = _inputs(path, GRID_EXT)
    return files, [voxelizer.load_grid(p) for p in files]


# --------------------------------------------------------------------------
# subcommands; each returns (summary dict, exit status)

def cmd_voxelize(a):
    inputs = _inputs(a.input, ".obj")
    if not inputs:
        log.warning("no .obj files in %s", a.input)
    outputs = _outputs(inputs, a.input, a.output, GRID_EXT)
    results = _batch(_voxelize_one, a.jobs, [(s, d, a.fill) for s, d in zip(inputs, outputs)])
    failures = _report(results, inputs)
    summary = {"files": len(inputs), "written": len(inputs) - len(failures), "failures": len(failures),
               "failed": failures, "fill": a.fill, "formats": {"VOX64GRD": voxelizer.GRID_VERSION}}
    return summary, EXIT_FAILURES if a.strict and failures else EXIT_OK


def cmd_fit(a):
    files, grids = _load_grids(a.grids)
    model, history = latent_coder.train_model(grids, k=a.k, seed=a.seed, epochs=a.epochs,
                                              threshold=a.threshold)
    latent_coder.save_model(model, a.output)
    stage1 = model.codebook.history
    summary = {
        "grids": len(files), "k": a.k, "epochs": a.epochs,
        "stage1_mse": [stage1[0], stage1[-1]] if stage1 else [],
        "stage1_epochs": max(len(stage1) - 1, 0),
        "stage2_voxel_mse": [vars(h) for h in history],
        "formats": {"VOX64GRD": voxelizer.GRID_VERSION, "VOXTOKMD": latent_coder.MODEL_VERSION},
    }
    return summary, EXIT_OK


def _codec_batch(a, fn, in_ext, out_ext, fmt):
    latent_coder.load_model(a.model)  # fail fast on a bad model
    inputs = _inputs(a.input, in_ext)
    outputs = _outputs(inputs, a.input, a.output, out_ext)
    results = _batch(fn, a.jobs, [(a.model, s, d) for s, d in zip(inputs, outputs)])
    failures = _report(results, inputs)
    summary = {"files": len(inputs), "failures": len(failures), "failed": failures,
               "formats": {"VOXTOKMD": latent_coder.MODEL_VERSION, **fmt}}
    status = EXIT_OK
    if failures and (a.strict or len(inputs) == 1):
        status = EXIT_FAILURES
    return summary, status


def cmd_encode(a):
    return _codec_batch(a, _encode_one, GRID_EXT, TOKENS_EXT,
                        {"VOX64GRD": voxelizer.GRID_VERSION, "VOXTOKSQ": latent_coder.TOKENS_VERSION})


def cmd_decode(a):
    return _codec_batch(a, _decode_one, TOKENS_EXT, GRID_EXT,
                        {"VOX64GRD": voxelizer.GRID_VERSION, "VOXTOKSQ": latent_coder.TOKENS_VERSION})


def cmd_eval(a):
    _, grids = _load_grids(a.grids)
    if not grids:
        raise VoxtokError(f"no grids in {a.grids}")
    reports = []
    prefix = Path(a.output)
    for path in a.model:
        rep = metrics.roundtrip_report(grids, latent_coder.load_model(path), n_points=a.points, seed=a.seed)
        _write_text(f"{prefix}.k{rep.codebook_size}.jsonl", rep.to_jsonl())
        reports.append(rep)
    table = metrics.format_table(reports)
    _write_text(f"{prefix}.txt", table)
    sys.stderr.write(table)
    summary = {"grids": len(grids), "points": a.points,
               "models": {str(r.codebook_size): r.aggregates() for r in reports},
               "formats": {"VOX64GRD": voxelizer.GRID_VERSION, "VOXTOKMD": latent_coder.MODEL_VERSION}}
    return summary, EXIT_OK


def cmd_corpus(a):
    assets = corpus.load_manifest(a.manifest)
    text = []
    if a.ultrachat:
        with open(a.ultrachat, "r", encoding="utf-8") as fh:
            text = [corpus.text_record(json.loads(line)["messages"], i)
                    for i, line in enumerate(fh) if line.strip()]
    stats = corpus.build_corpus(assets, a.output, seed=a.seed,
                                mapping=corpus.VocabMapping(a.base_vocab),
                                templates_path=a.templates, text_records=text, text_ratio=a.text_ratio)
    corpus.save_stats(stats, f"{a.output}.stats")
    sys.stderr.write(stats.format_table())
    summary = {"assets": len(assets), "stats": stats.to_dict(),
               "formats": {"VOXTOKSQ": latent_coder.TOKENS_VERSION, "corpus": "jsonl"}}
    return summary, EXIT_OK


def cmd_fit_ngram(a):
    files = _inputs(a.tokens, TOKENS_EXT)
    seqs = [latent_coder.load_tokens(p) for p in files]
    model = shape_prior.fit_ngram(seqs, n=a.order, discount=a.discount)
    shape_prior.save_ngram(model, a.output)
    summary = {"sequences": len(seqs), "order": a.order, "discount": a.discount,
               "distinct_ngrams": int(len(model.counts)),
               "formats": {"VOXTOKSQ": latent_coder.TOKENS_VERSION, "VOXNGRAM": shape_prior.NGRAM_VERSION}}
    return summary, EXIT_OK


def cmd_sample(a):
    model = latent_coder.load_model(a.model)
    ngram = shape_prior.load_ngram(a.ngram)
    config = shape_prior.SamplerConfig(a.top_k, a.top_p, a.temperature, a.seed)
    tokens = shape_prior.sample_sequence(ngram, config)
    grid = latent_coder.decode(tokens, model)
    latent_coder.save_tokens(tokens, f"{a.output}{TOKENS_EXT}")
    voxelizer.save_grid(grid, f"{a.output}{GRID_EXT}")
    summary = {"top_k": a.top_k, "top_p": a.top_p, "temperature": a.temperature, "occupied": grid.count,
               "formats": {"VOXTOKMD": latent_coder.MODEL_VERSION, "VOXNGRAM": shape_prior.NGRAM_VERSION,
                           "VOXTOKSQ": latent_coder.TOKENS_VERSION, "VOX64GRD": voxelizer.GRID_VERSION}}
    return summary, EXIT_OK


def _write_text(path, text):
    tmp = Path(f"{path}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# --------------------------------------------------------------------------
# parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for batch commands")
    common.add_argument("--config", help="key-value settings file (flags take precedence)")
    common.add_argument("--strict", action="store_true", help="exit 1 if any item fails")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="voxtok", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", parents=[common], help="OBJ mesh(es) -> 64^3 grid file(s)")
    p.add_argument("input", help=".obj file or directory of .obj files")
    p.add_argument("output", help="grid file, or directory in batch mode")
    p.add_argument("--fill", choices=("solid", "surface"), default="solid",
                   help="fill enclosed interiors (default) or keep the surface shell")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("fit", parents=[common], help="train a codec model on a directory of grids")
    p.add_argument("grids")
    p.add_argument("output")
    p.add_argument("--k", type=int, default=latent_coder.CODEBOOK_SIZE, help="codebook size")
    p.add_argument("--epochs", type=int, default=5, help="joint refinement epochs (0 = codebook only)")
    p.add_argument("--threshold", type=float, default=latent_coder.DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_fit)

    for name, func, what in (("encode", cmd_encode, "grid(s) -> token file(s)"),
                             ("decode", cmd_decode, "token file(s) -> grid(s)")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("model")
        p.add_argument("input")
        p.add_argument("output")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="round-trip Chamfer/Hausdorff/IoU report")
    p.add_argument("grids")
    p.add_argument("output", help="report prefix")
    p.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    p.add_argument("--points", type=int, default=metrics.DEFAULT_N_POINTS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corpus", parents=[common], help="dialogue corpus from an asset manifest")
    p.add_argument("manifest")
    p.add_argument("output")
    p.add_argument("--templates", help="template JSON (default: bundled)")
    p.add_argument("--base-vocab", type=int, default=corpus.DEFAULT_BASE_VOCAB)
    p.add_argument("--ultrachat", help="JSON-lines text-only dialogues to pass through")
    p.add_argument("--text-ratio", type=float, default=0.0, help="text-only records per 3D record")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("fit-ngram", parents=[common], help="train the n-gram shape prior on token files")
    p.add_argument("tokens")
    p.add_argument("output")
    p.add_argument("--order", type=int, default=shape_prior.DEFAULT_ORDER)
    p.add_argument("--discount", type=float, default=shape_prior.DEFAULT_DISCOUNT)
    p.set_defaults(func=cmd_fit_ngram)

    p = sub.add_parser("sample", parents=[common], help="sample a shape from the n-gram prior")
    p.add_argument("model")
    p.add_argument("ngram")
    p.add_argument("output", help="prefix for the .tok and .vox outputs")
    p.add_argument("--top-k", type=int, default=shape_prior.VOCAB)
    p.add_argument("--top-p", type=float, default=0.7)
    p.add_argument("--temperature", type=float, default=0.7)
    p.set_defaults(func=cmd_sample)
    return parser


def _config_defaults(path, command):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise CliError(f"config file {path} not found")
    values = {}
    for section in ("voxtok", command):
        if cp.has_section(section):
            values.update(cp.items(section, raw=True))
    return {k.replace("-", "_"): v for k, v in values.items()}


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = _config_defaults(args.config, args.command)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        for key, raw in values.items():
            if key not in known or key in ("config", "help"):
                raise CliError(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                raw = raw.strip().lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                raw = action.type(raw)
            if isinstance(action, argparse._AppendAction):
                raw = [raw]
            sub.set_defaults(**{key: raw})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    t0 = time.perf_counter()
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"voxtok: {exc}", file=sys.stderr)
        return EXIT_FATAL
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        summary, status = args.func(args)
    except (VoxtokError, CliError, OSError) as exc:
        summary, status = {"error": f"{type(exc).__name__}: {exc}"}, EXIT_FATAL
        print(f"voxtok {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    out = {"command": args.command, "seed": args.seed, "status": status, **summary,
           "wall_time": round(time.perf_counter() - t0, 3)}
    print(json.dumps(out, sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
