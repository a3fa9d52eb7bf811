"""Command-line entry point.

Every subcommand works inside a workspace directory (``--workspace``,
else ``$SERNAS_WORKSPACE``, else the current directory), writes a run
manifest under ``runs/`` and prints one JSON summary line. Failures print
one JSON error line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import PROFILES, ConfigError, PipelineConfig, dump_config, flatten, load_config, parse_overrides

log = logging.getLogger("sernas")

WORKSPACE_ENV = "SERNAS_WORKSPACE"
EXIT_FAILURE, EXIT_USAGE = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--workspace", help=f"workspace root (default ${WORKSPACE_ENV} or the current directory)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="paper", help="base defaults before the config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="root seed (same as --set seed=N)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="sernas", description="Architecture search for two-branch speech emotion recognition.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--out", help="output directory (default <workspace>/data)")
    p.add_argument("--sessions", type=int)
    p.add_argument("--speakers", type=int, help="speakers per session")
    p.add_argument("--utterances", type=int, help="utterances per speaker and class")
    p.add_argument("--noise", type=float)
    p.add_argument("--cue-dropout", type=float)

    p = sub.add_parser("features", parents=[common], help="extract spectrograms and ingest sequence features")
    p.add_argument("--manifest", help="manifest CSV (default <workspace>/data/manifest.csv)")

    p = sub.add_parser("search", parents=[common], help="spectrogram cell search")
    p.add_argument("--fold", type=int, action="append", help="fold index (repeatable; default all)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("select", parents=[common], help="recurrent cell selection")
    p.add_argument("--fold", type=int, action="append")

    p = sub.add_parser("train", parents=[common], help="retrain the derived or selected branch model")
    p.add_argument("--branch", choices=("spectrogram", "sequence"), required=True)
    p.add_argument("--fold", type=int, action="append")

    p = sub.add_parser("fuse", parents=[common], help="train decision-level fusion")
    p.add_argument("--fold", type=int, action="append")

    p = sub.add_parser("eval", parents=[common], help="UA table across folds")
    p.add_argument("--out", help="CSV path (default <workspace>/reports/ua_table.csv)")

    p = sub.add_parser("export-dot", parents=[common], help="DOT graphs of a genotype or recurrent cell")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--genotype")
    src.add_argument("--cell")
    p.add_argument("--out", help="output directory (default beside the input)")

    p = sub.add_parser("run", parents=[common], help="synth (if needed), features, every fold, eval")
    p.add_argument("--manifest", help="use this corpus instead of <workspace>/data")

    p = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    return parser


def _overrides(args) -> dict[str, str]:
    flat = parse_overrides(args.set)
    if args.seed is not None:
        flat["seed"] = str(args.seed)
    if args.command == "synth":
        for flag, key in (("sessions", "num_sessions"), ("speakers", "speakers_per_session"), ("utterances", "utterances_per_class"), ("noise", "noise"), ("cue_dropout", "cue_dropout")):
            if getattr(args, flag) is not None:
                flat[f"synth.{key}"] = str(getattr(args, flag))
    if args.command == "search" and args.epochs is not None:
        flat["spectrogram.search.epochs"] = str(args.epochs)
    return flat


def _rel(path: Path, root: Path) -> str:
    try:
        return Path(path).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return Path(path).as_posix()


def write_run_manifest(ws: Path, args, cfg: PipelineConfig, outputs: list[Path], tag: str) -> Path:
    """Resolved config, seed and arguments; paths relative to the workspace
    so two workspaces produce identical manifests."""
    skip = {"workspace", "verbose", "config", "set", "seed"}
    argv = {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}
    for key in ("out", "manifest", "genotype", "cell"):
        if key in argv:
            argv[key] = _rel(Path(argv[key]), ws)
    body = {
        "command": args.command,
        "arguments": argv,
        "profile": args.profile,
        "seed": cfg.seed,
        "config": flatten(cfg),
        "outputs": sorted(_rel(p, ws) for p in outputs),
    }
    path = ws / "runs" / f"{tag}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _write_dot(graphs: dict[str, str], out: Path, stem: str) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in graphs.items():
        p = out / f"{stem}_{name}.dot"
        p.write_text(text)
        paths.append(p)
    return paths


def _fold_tag(command: str, folds) -> str:
    return command if not folds else f"{command}_fold" + "-".join(str(k) for k in sorted(set(folds)))


def run(args) -> dict:
    from ..darts import Genotype
    from ..rnn import CellBank
    from . import pipeline as pl
    from .dot import export_dot
    from .synth import synth_dataset

    ws = Path(args.workspace or os.environ.get(WORKSPACE_ENV) or ".")
    ws.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config, args.profile, _overrides(args))
    store = pl.FeatureStore(ws / "features")
    outputs: list[Path] = []
    summary: dict = {"command": args.command}
    folds_arg = getattr(args, "fold", None)
    tag = _fold_tag(args.command, folds_arg)

    if args.command == "config":
        sys.stdout.write(dump_config(cfg))
        return {}

    if args.command == "synth":
        out = Path(args.out) if args.out else ws / "data"
        synth_cfg = replace(cfg.synth, seed=cfg.seed)
        records = synth_dataset(synth_cfg, out)
        outputs = [out / "manifest.csv"]
        summary.update(utterances=len(records), manifest=_rel(out / "manifest.csv", ws))

    elif args.command == "features":
        manifest = Path(args.manifest) if args.manifest else ws / "data" / "manifest.csv"
        if not manifest.is_file():
            raise pl.MissingFeaturesError(f"manifest {manifest} not found")
        records = store.build(manifest, cfg)
        outputs = [store.records_path]
        summary.update(utterances=len(records))

    elif args.command == "search":
        for fold in pl.folds_for(store, folds_arg):
            out = pl.fold_dir(ws, fold.index)
            result = pl.run_search(store, fold, cfg)
            pl.save_search(result, out)
            dots = _write_dot(export_dot(result.genotype), out, "genotype")
            outputs += [out / "genotype.json", out / "search_history.csv", *dots]
        summary.update(genotypes=[_rel(p, ws) for p in outputs if p.name == "genotype.json"])
        if cfg.spectrogram.search.epochs == 0:
            summary["warning"] = "zero-epoch search: genotype reflects the initial architecture logits"

    elif args.command == "select":
        bank = pl.load_bank(cfg)
        for fold in pl.folds_for(store, folds_arg):
            out = pl.fold_dir(ws, fold.index)
            selection = pl.run_select(store, fold, cfg)
            pl.save_selection(selection, bank, out)
            dots = _write_dot(export_dot(bank[selection.best]), out, "cell")
            outputs += [out / "selection.csv", out / "cell.json", *dots]
            summary.setdefault("selected", {})[fold.index] = selection.best

    elif args.command == "train":
        for fold in pl.folds_for(store, folds_arg):
            out = pl.fold_dir(ws, fold.index)
            if args.branch == "spectrogram":
                result = pl.retrain_spectrogram(pl.load_genotype(out), store, fold, cfg)
            else:
                result = pl.retrain_sequence(pl.load_selected_cell(out), store, fold, cfg)
            pl.save_branch_run(result, fold, out)
            outputs += [out / f"{args.branch}_{s}" for s in ("metrics.csv", "val_probs.csv", "test_probs.csv", "train_history.csv")]
            summary.setdefault("ua", {})[fold.index] = round(result.metrics.ua, 6)
        tag = _fold_tag(f"train_{args.branch}", folds_arg)

    elif args.command == "fuse":
        for fold in pl.folds_for(store, folds_arg):
            result = pl.fuse_fold(ws, fold, cfg)
            out = pl.fold_dir(ws, fold.index)
            outputs += [out / "fused_metrics.csv", out / "fused_test_probs.csv"]
            summary.setdefault("ua", {})[fold.index] = round(result.metrics.ua, 6)

    elif args.command == "eval":
        rows = pl.ua_table(ws, pl.folds_for(store))
        out = Path(args.out) if args.out else ws / "reports" / "ua_table.csv"
        pl.write_ua_table(rows, out)
        outputs = [out]
        summary.update(report=_rel(out, ws), mean={k: round(v, 6) for k, v in rows[-1].items() if k.endswith("_ua")})

    elif args.command == "export-dot":
        src = Path(args.genotype or args.cell)
        if not src.is_file():
            raise pl.MissingFeaturesError(f"{src} not found")
        if args.genotype:
            graphs, stem = export_dot(Genotype.load(src)), src.stem
        else:
            cells = list(CellBank.load(src))
            graphs, stem = {}, src.stem
            for c in cells:
                graphs.update(export_dot(c))
        outputs = _write_dot(graphs, Path(args.out) if args.out else src.parent, stem)
        summary.update(files=[_rel(p, ws) for p in outputs])

    elif args.command == "run":
        manifest = Path(args.manifest) if args.manifest else ws / "data" / "manifest.csv"
        if args.manifest is None and not manifest.is_file():
            synth_dataset(replace(cfg.synth, seed=cfg.seed), ws / "data")
        store.build(manifest, cfg)
        for fold in pl.folds_for(store):
            pl.run_fold(ws, store, fold, cfg)
            out = pl.fold_dir(ws, fold.index)
            _write_dot(export_dot(pl.load_genotype(out)), out, "genotype")
            _write_dot(export_dot(pl.load_selected_cell(out)), out, "cell")
        rows = pl.ua_table(ws, pl.folds_for(store))
        pl.write_ua_table(rows, ws / "reports" / "ua_table.csv")
        outputs = [ws / "reports" / "ua_table.csv"]
        summary.update(report="reports/ua_table.csv", mean={k: round(v, 6) for k, v in rows[-1].items() if k.endswith("_ua")})

    write_run_manifest(ws, args, cfg, outputs, tag)
    return summary


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
        summary = run(args)
        if summary:
            print(json.dumps(summary, sort_keys=True))
        return 0
    except (UsageError, ConfigError) as exc:
        _error(command, exc)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        _error(command, exc)
        return EXIT_FAILURE


def _error(command, exc: BaseException) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": command}, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
