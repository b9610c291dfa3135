"""``anticap <command> --config <path> [--override key=value ...]``

Exit status: 0 on success, 2 when the config or inputs fail validation,
1 for anything else. Every output is staged next to its destination and
moved into place only when the command succeeds.
"""
from __future__ import annotations

import argparse
import copy
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

from . import pipeline as P
from .concepts import SchemaError
from .config import ConfigError, PipelineConfig, load_config
from .eval import MONOTONIC_FIELDS, NEXT_SENTENCE_FIELDS, Entry, format_report, verify_monotonic, verify_next_sentence
from .kg import export_dot
from .synthetic import make_synthetic_corpus

log = logging.getLogger("anticap")

COMMANDS = ("make-corpus", "build-graph", "train", "caption", "verify-dataset", "evaluate", "ablate-m")


class ValidationFailure(ValueError):
    """Inputs are present but inconsistent with the config."""


class Staging:
    """Collects outputs in temporary siblings; :meth:`commit` moves them into place."""

    def __init__(self):
        self._pending: list[tuple[Path, Path]] = []

    def path(self, dest) -> Path:
        dest = Path(dest)
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.parent / f".{dest.name}.partial-{os.getpid()}"
        if tmp.is_dir():
            shutil.rmtree(tmp)
        elif tmp.exists():
            tmp.unlink()
        self._pending.append((tmp, dest))
        return tmp

    def text(self, dest, content: str) -> None:
        self.path(dest).write_text(content, encoding="utf-8")

    def commit(self) -> None:
        for tmp, dest in self._pending:
            if dest.is_dir():
                shutil.rmtree(dest)
            os.replace(tmp, dest)
        self._pending.clear()

    def discard(self) -> None:
        for tmp, _ in self._pending:
            if tmp.is_dir():
                shutil.rmtree(tmp, ignore_errors=True)
            elif tmp.exists():
                tmp.unlink()
        self._pending.clear()


@contextmanager
def staged():
    s = Staging()
    try:
        yield s
    except BaseException:
        s.discard()
        raise
    s.commit()


def _report(cfg: PipelineConfig, name: str) -> Path:
    return cfg.path("report_dir") / name


def cmd_make_corpus(cfg: PipelineConfig) -> None:
    with staged() as out:
        corpus = out.path(cfg.path("corpus"))
        edges = out.path(cfg.path("edge_dump"))
        manifest = make_synthetic_corpus(cfg, out_dir=corpus, edge_path=edges)
    log.info("corpus written: %s", ", ".join(f"{k}={v}" for k, v in sorted(manifest["sizes"].items())))


def cmd_build_graph(cfg: PipelineConfig) -> None:
    ws = P.open_workspace(cfg)
    samples = P.load_split(cfg, cfg.eval_split, ws.manifest)
    lines = ["id\tnodes\tdetected\tforecasted\tedges"]
    with staged() as out:
        gdir = out.path(_report(cfg, "graphs"))
        gdir.mkdir()
        for s in samples:
            g = P.graph_for(ws, s)
            log.info("%s nodes=%d", s.id, g.n_nodes)
            lines.append(f"{s.id}\t{g.n_nodes}\t{g.n_detected}\t{g.n_nodes - g.n_detected}\t{len(g.edges)}")
            (gdir / f"{s.id}.dot").write_text(export_dot(g, name=s.id), encoding="utf-8")
        out.text(_report(cfg, "graph_counts.tsv"), "\n".join(lines) + "\n")


def _train(cfg: PipelineConfig, ws: P.Workspace | None = None):
    """Pretrain the backbone (unless ``ws`` already carries one), then fit the graph stack."""
    if ws is None:
        ws = P.open_workspace(cfg)
        if cfg.pretrain_epochs > 0:
            pre = P.load_split(cfg, "pretrain", ws.manifest)
            P.pretrain_backbone(ws, pre, progress=lambda e, l: log.debug("pretrain epoch %d loss %.6f", e, l))
    frozen = ws.decoder.digest()
    train = P.load_split(cfg, "train", ws.manifest)
    pairs = list(zip(train, P.graphs_for(ws, train)))
    stack, losses = P.train_model(ws, pairs, progress=lambda e, l: log.debug("epoch %d loss %.6f", e, l))
    if ws.decoder.digest() != frozen:
        raise AssertionError("frozen decoder changed during training")
    return ws, stack, losses, frozen


def cmd_train(cfg: PipelineConfig) -> None:
    ws, stack, losses, frozen = _train(cfg)
    curve = "epoch\tloss\n" + "".join(f"{i}\t{l:.6f}\n" for i, l in enumerate(losses))
    with staged() as out:
        P.save_model(out.path(cfg.path("checkpoint")), ws, stack, {"frozen_digest": frozen, "M": cfg.M})
        out.text(_report(cfg, "loss.tsv"), curve)
    log.info("trained %d epochs, final loss %.6f", len(losses), losses[-1] if losses else float("nan"))


def _load(cfg: PipelineConfig):
    ws, stack, header = P.load_model(cfg.path("checkpoint"), cfg)
    meta = header["config"]
    if ws.decoder.digest() != meta.get("frozen_digest"):
        raise ValidationFailure("checkpoint decoder differs from the backbone frozen at training time")
    if meta.get("M") != cfg.M:
        raise ValidationFailure(f"checkpoint was trained with M={meta.get('M')} but the config sets M={cfg.M}")
    return ws, stack


def _captions(cfg: PipelineConfig, ws, stack):
    samples = P.load_split(cfg, cfg.eval_split, ws.manifest)
    before = ws.decoder.digest()
    caps = P.caption_all(ws, stack, list(zip(samples, P.graphs_for(ws, samples))))
    if ws.decoder.digest() != before:
        raise AssertionError("frozen decoder changed while captioning")
    return samples, caps


def cmd_caption(cfg: PipelineConfig) -> None:
    ws, stack = _load(cfg)
    _, caps = _captions(cfg, ws, stack)
    with staged() as out:
        out.text(_report(cfg, "captions.tsv"), "".join(f"{i}\t{c}\n" for i, c in caps))


def cmd_evaluate(cfg: PipelineConfig) -> None:
    ws, stack = _load(cfg)
    samples, caps = _captions(cfg, ws, stack)
    metrics = P.score_captions(ws, samples, caps)
    with staged() as out:
        out.text(_report(cfg, "metrics.txt"), format_report(metrics, P.METRIC_FIELDS))


def cmd_verify_dataset(cfg: PipelineConfig) -> None:
    samples = P.load_split(cfg, cfg.eval_split)
    entries = [Entry(s.id, sentences=s.story) for s in samples]
    for e in entries:
        if not e.sentences:
            raise ValidationFailure(f"sample {e.id} carries no story sentences")
    mono = verify_monotonic(entries)
    nsp = verify_next_sentence(entries)
    values = {f"monotonic.{k}": v for k, v in mono.items()}
    values.update({f"next_sentence.{k}": v for k, v in nsp.items()})
    fields = [f"monotonic.{k}" for k in MONOTONIC_FIELDS] + [f"next_sentence.{k}" for k in NEXT_SENTENCE_FIELDS]
    with staged() as out:
        out.text(_report(cfg, "verification.txt"), format_report(values, fields))


def cmd_ablate_m(cfg: PipelineConfig) -> None:
    """Train and evaluate once per M; the pretrained backbone is shared since it does not depend on M."""
    base = P.open_workspace(cfg)
    if cfg.pretrain_epochs > 0:
        P.pretrain_backbone(base, P.load_split(cfg, "pretrain", base.manifest))
    rows = ["M\t" + "\t".join(P.METRIC_FIELDS)]
    for M in cfg.ablate_m:
        sub = cfg.replace(M=M)
        ws = P.Workspace(sub, base.manifest, copy.deepcopy(base.decoder), base.provider, base.scorer, base.index)
        ws, stack, _, _ = _train(sub, ws)
        samples, caps = _captions(sub, ws, stack)
        m = P.score_captions(ws, samples, caps)
        rows.append(f"{M}\t" + "\t".join(f"{m[k]:.6f}" for k in P.METRIC_FIELDS))
        log.info("M=%d exact=%.3f b1=%.3f", M, m["exact"], m["b1"])
    with staged() as out:
        out.text(_report(cfg, "ablation.tsv"), "\n".join(rows) + "\n")


HANDLERS = {
    "make-corpus": cmd_make_corpus,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "caption": cmd_caption,
    "verify-dataset": cmd_verify_dataset,
    "evaluate": cmd_evaluate,
    "ablate-m": cmd_ablate_m,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anticap", description="Anticipation captioning pipeline.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="flat key = value config file")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="replace one config value; may be repeated")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    return ap


def run_command(cfg: PipelineConfig, command: str) -> None:
    HANDLERS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config, args.override)
        run_command(cfg, args.command)
    except (ConfigError, SchemaError, ValidationFailure) as exc:
        log.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
