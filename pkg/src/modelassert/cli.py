"""Command-line interface: check, select, weak-label, tracks, simulate, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields, is_dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .assertions import (DEFAULT_AGREE_IOU, DEFAULT_MULTIBOX_IOU, ecg_window, flicker_appear,
                         register_agree, register_ecg, register_flicker_appear, register_multibox)
from .bandit import BASELINES, RoundState, bal_select
from .consistency import apply_edits, interpolate_boxes
from .engine import (AssertionRegistry, confidence_percentile_report, evaluate_stream,
                     record_confidence)
from .errors import (ConfigError, EditConflictError, IngestError, InvariantError, RegistryError,
                     StreamError)
from .logio import atomic_write, box_to_dict, ingest, load_camera, serialize, write_json
from .records import AV, LABELS, SCHEMAS, VIDEO, DetectionBox
from .sim import POLICIES, SimConfig, labels_to_target, reference_config, run_experiment
from .tracks import tracks_from_stream, presence_timeline

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

ASSERTIONS = {
    VIDEO: ("multibox", "flicker", "appear", "class"),
    AV: ("agree", "multibox"),
    LABELS: ("ecg",),
}
DEFAULT_ASSERTIONS = {
    VIDEO: ["multibox", "flicker", "appear"],
    AV: ["agree", "multibox"],
    LABELS: ["ecg"],
}


@dataclass
class RunConfig:
    schema: str = VIDEO
    assertions: list[str] | None = None
    multibox_iou: float = DEFAULT_MULTIBOX_IOU
    agree_iou: float = DEFAULT_AGREE_IOU
    match_iou: float = 0.5
    t_persist: float | None = None
    camera: str | None = None
    baseline: str = "random"
    budget: int = 100
    explore_fraction: float = 0.25
    fallback_threshold: float = 0.01
    seed: int = 0

    def validate(self) -> RunConfig:
        if self.schema not in SCHEMAS:
            raise ConfigError(f"schema must be one of {SCHEMAS}")
        if self.assertions is None:
            self.assertions = list(DEFAULT_ASSERTIONS[self.schema])
        bad = [a for a in self.assertions if a not in ASSERTIONS[self.schema]]
        if bad:
            raise ConfigError(f"assertions {bad} not available for schema {self.schema}")
        if self.t_persist is None:
            self.t_persist = 30.0 if self.schema == LABELS else 1.0
        for name in ("multibox_iou", "agree_iou", "match_iou"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.t_persist < 0:
            raise ConfigError("t_persist must be non-negative")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if not 0 <= self.explore_fraction <= 1:
            raise ConfigError("explore_fraction must lie in [0, 1]")
        if self.fallback_threshold < 0:
            raise ConfigError("fallback_threshold must be non-negative")
        if self.schema == AV and "agree" in self.assertions and not self.camera:
            raise ConfigError("the agree assertion needs --camera")
        return self


def load_run_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    if isinstance(data.get("assertions"), str):
        data["assertions"] = [a for a in data["assertions"].split(",") if a]
    try:
        return RunConfig(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def build_registry(cfg: RunConfig) -> AssertionRegistry:
    reg = AssertionRegistry()
    temporal_added = False
    for name in cfg.assertions:
        if name == "multibox":
            register_multibox(reg, cfg.multibox_iou)
        elif name == "agree":
            register_agree(reg, load_camera(cfg.camera), cfg.agree_iou)
        elif name == "ecg":
            register_ecg(reg, cfg.t_persist)
        elif name in ("flicker", "appear", "class") and not temporal_added:
            register_flicker_appear(reg, cfg.match_iou, cfg.t_persist,
                                    class_check="class" in cfg.assertions)
            temporal_added = True
    # flicker/appear/class register as a block; drop the ones not requested
    keep = [n for n in reg.names if n in cfg.assertions]
    if keep != reg.names:
        pruned = AssertionRegistry(reg.max_window)
        for entry in reg.entries():
            if entry.descriptor.name in cfg.assertions:
                pruned.register(entry.descriptor, entry.evaluator)
        reg = pruned
    return reg.freeze()


def _jsonable(obj):
    if isinstance(obj, DetectionBox):
        return box_to_dict(obj)
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    return obj


def edit_to_dict(edit) -> dict:
    source = edit.source
    src = None
    if source is not None:
        src = {"type": type(source).__name__}
        src.update(_jsonable(source))
    return {"kind": edit.kind, "point_id": edit.point_id, "index": edit.index, "key": edit.key,
            "value": _jsonable(edit.value), "time": edit.time, "source": src}


# -- commands --------------------------------------------------------------

def cmd_check(args) -> int:
    cfg = load_run_config(args)
    stream = ingest(args.input, cfg.schema)
    registry = build_registry(cfg)
    matrix, report = evaluate_stream(stream, registry)
    out = {"kind": "check", "schema": cfg.schema}
    out.update(report.to_dict())
    out["records"] = [
        {"point_id": rec.point_id, "confidence": record_confidence(rec),
         "severities": {name: float(matrix.scores[i, m]) for m, name in enumerate(matrix.names)}}
        for i, rec in enumerate(stream)
    ]
    write_json(args.out, out)
    for a in report.assertions:
        print(f"{a.name}\t{a.trigger_count}/{report.n}\t{a.total_severity:g}")
    return EXIT_OK


def _read_state(path: Path) -> dict:
    if not path.exists():
        return {"round": 0, "prev_counts": None, "labeled": [], "assertions": None}
    try:
        state = json.loads(path.read_text(encoding="utf-8"))
        int(state["round"])
        list(state["labeled"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"bad state file {path}: {exc}") from None
    return state


def cmd_select(args) -> int:
    cfg = load_run_config(args)
    state_path = Path(args.state)
    state = _read_state(state_path)
    stream = ingest(args.input, cfg.schema)
    registry = build_registry(cfg)
    if state.get("assertions") not in (None, registry.names):
        raise ConfigError(f"state was written for assertions {state['assertions']}, "
                          f"config has {registry.names}")
    t = int(state["round"])
    matrix, _ = evaluate_stream(stream, registry, round_tag=t)
    counts = matrix.trigger_counts().tolist()
    rs = RoundState(t, cfg.budget, state.get("prev_counts"), counts, cfg.baseline,
                    cfg.explore_fraction, cfg.fallback_threshold)
    confidences = [record_confidence(r) for r in stream]
    result = bal_select(rs, matrix, confidences, seed=[cfg.seed, t], exclude=state["labeled"])
    if len(set(result.chosen)) != len(result.chosen) or set(result.chosen) & set(state["labeled"]):
        raise InvariantError("selection repeated a point")
    selection = {
        "round": t,
        "mode": result.mode,
        "chosen": result.chosen,
        "allocation": dict(zip(matrix.names, result.totals)),
        "explore": dict(zip(matrix.names, result.explore)),
        "baseline": result.baseline_picks,
    }
    new_state = {"round": t + 1, "prev_counts": counts,
                 "labeled": list(state["labeled"]) + result.chosen, "assertions": registry.names}
    write_json(args.out, selection)
    write_json(state_path, new_state)
    print(f"round {t}: {result.mode}, {len(result.chosen)} chosen")
    return EXIT_OK


def cmd_weak_label(args) -> int:
    cfg = load_run_config(args)
    stream = ingest(args.input, cfg.schema)
    if cfg.schema == LABELS:
        res = ecg_window(stream, cfg.t_persist)
        edits = res.edits
        n_viol = len(res.violations)
    else:
        res = flicker_appear(stream, cfg.match_iou, cfg.t_persist, interpolate_boxes)
        edits = res.edits
        n_viol = len(res.temporal_violations) + len(res.attribute_violations)
    try:
        corrected = apply_edits(stream, edits)
    except EditConflictError as exc:
        raise InvariantError(str(exc)) from None
    atomic_write(args.out, serialize(corrected, cfg.schema))
    atomic_write(args.edits, "".join(json.dumps(edit_to_dict(e)) + "\n" for e in edits))
    print(f"{n_viol} violations, {len(edits)} edits")
    return EXIT_OK


def cmd_tracks(args) -> int:
    cfg = load_run_config(args)
    if cfg.schema == LABELS:
        raise ConfigError("tracks need a detection schema")
    stream = ingest(args.input, cfg.schema)
    tracks = tracks_from_stream(stream, cfg.match_iou, max_gap=args.max_gap,
                                class_gated=not args.ungated)
    times = {r.frame: r.timestamp for r in stream}
    lines = []
    for tr in tracks:
        lines.append(json.dumps({
            "track_id": tr.track_id, "class": tr.class_label,
            "members": [{"point_id": m.point_id, "frame": m.frame, "index": m.index, "box": box_to_dict(m.box)}
                        for m in tr.members],
            "intervals": [[iv.start, iv.end] for iv in presence_timeline(tr, times=times)],
        }) + "\n")
    atomic_write(args.out, "".join(lines))
    print(f"{len(tracks)} tracks")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.sim_config:
        try:
            sim_cfg = SimConfig(**json.loads(Path(args.sim_config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad simulation config: {exc}") from None
    else:
        sim_cfg = reference_config(args.seed)
    policies = [p for p in args.policies.split(",") if p]
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown policies {bad}; choose from {POLICIES}")
    curves = {}
    for p in policies:
        curves[p] = run_experiment(p, sim_cfg, args.rounds, args.budget, args.seeds).mean_curve()
    half = {}
    for p, c in curves.items():
        v = labels_to_target(c["triggers"], c["labels"], 0.5)
        half[p] = None if v == float("inf") else v
    write_json(args.out, {"kind": "experiment", "config": sim_cfg.to_dict(), "rounds": args.rounds,
                          "budget": args.budget, "seeds": args.seeds, "policies": curves,
                          "labels_to_half": half})
    for p, c in curves.items():
        print(p + "\t" + "\t".join(f"{v:.1f}" for v in c["triggers"]))
    return EXIT_OK


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_report(args) -> int:
    from .plots import plot_curves, plot_percentiles

    try:
        data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read {args.input}: {exc}") from None
    out_dir = Path(args.out_dir)
    kind = data.get("kind")
    if kind == "experiment":
        rows = []
        for p, c in data["policies"].items():
            for t, (lab, trig, res) in enumerate(zip(c["labels"], c["triggers"], c["residual"])):
                rows.append([p, t, lab, trig, res])
        text = _csv(rows, ["policy", "round", "labels", "triggers", "residual"])
        atomic_write(out_dir / "curves.csv", text)
        plot_curves(data["policies"], out_dir / "triggers.png", "triggers")
        plot_curves(data["policies"], out_dir / "residual.png", "residual")
    elif kind == "check":
        conf = {r["point_id"]: r["confidence"] for r in data["records"]}
        population = list(conf.values())
        table = {}
        rows = []
        for a in data["assertions"]:
            flagged = [(pid, conf[pid]) for pid, _ in a["flagged"]]
            table[a["name"]] = confidence_percentile_report(flagged, population, args.k) if population else []
            rows.extend([a["name"], rank, pct] for rank, pct in table[a["name"]])
        text = _csv(rows, ["assertion", "rank", "percentile"])
        atomic_write(out_dir / "percentiles.csv", text)
        plot_percentiles(table, out_dir / "percentiles.png")
    else:
        raise IngestError(f"{args.input} is neither an experiment nor a check report")
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_flags(p: argparse.ArgumentParser, select: bool = False) -> None:
    p.add_argument("--config", help="JSON file with run configuration defaults")
    p.add_argument("--schema", choices=SCHEMAS)
    p.add_argument("--assertions", help="comma-separated assertion names")
    p.add_argument("--multibox-iou", dest="multibox_iou", type=float)
    p.add_argument("--agree-iou", dest="agree_iou", type=float)
    p.add_argument("--match-iou", dest="match_iou", type=float)
    p.add_argument("--t-persist", dest="t_persist", type=float)
    p.add_argument("--camera", help="camera sidecar JSON for av-paired input")
    p.add_argument("--seed", type=int)
    if select:
        p.add_argument("--baseline", choices=BASELINES)
        p.add_argument("--budget", type=int)
        p.add_argument("--explore-fraction", dest="explore_fraction", type=float)
        p.add_argument("--fallback-threshold", dest="fallback_threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modelassert", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="evaluate assertions over a prediction log")
    _run_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("select", help="choose points to label for one round")
    _run_flags(p, select=True)
    p.add_argument("--input", required=True)
    p.add_argument("--state", required=True, help="round state JSON, created if missing")
    p.add_argument("--out", required=True, help="selection JSON")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("weak-label", help="propose and apply consistency corrections")
    _run_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="corrected stream (JSONL)")
    p.add_argument("--edits", required=True, help="edit log (JSONL)")
    p.set_defaults(func=cmd_weak_label)

    p = sub.add_parser("tracks", help="dump IoU tracks")
    _run_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-gap", dest="max_gap", type=int, default=0)
    p.add_argument("--ungated", action="store_true", help="match boxes across classes")
    p.set_defaults(func=cmd_tracks)

    p = sub.add_parser("simulate", help="run the synthetic active-learning experiment")
    p.add_argument("--sim-config", dest="sim_config")
    p.add_argument("--policies", default="bal,random,uncertainty,uniform")
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="tables and figures from a check report or experiment")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("-k", type=int, default=10, help="flagged points per assertion in percentile tables")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, StreamError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, RegistryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
