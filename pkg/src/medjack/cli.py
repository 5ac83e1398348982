"""``medjack`` command line.

Exit codes: 0 success, 1 validation/domain error (including usage errors),
2 I/O or file-format error, 3 malformed input data. Every failure prints a
single ``error: ...`` line on stderr. Results are JSON on stdout, or written
atomically to ``--out``.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

from . import adv_model, fingerprint, presence, ranging, scene, threat_tree, triage

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_MALFORMED = 0, 1, 2, 3

DATA_DIR = Path(__file__).resolve().parent / "data"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


def _resolve(path: str) -> Path:
    """Use ``path`` as given, else look for it among the bundled data files."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and (DATA_DIR / p).exists():
        return DATA_DIR / p
    return p


def _read_text(path: str) -> str:
    return _resolve(path).read_text(encoding="utf-8")


def _load_json(path: str):
    return json.loads(_read_text(path))


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj, pretty: bool) -> str:
    if pretty:
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False) + "\n"


def _table(rows: list[dict], columns: list[str]) -> str:
    cells = [[("" if r.get(c) is None else f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c])) for c in columns]
             for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _emit(args, obj, table: tuple[list[dict], list[str]] | None = None) -> None:
    if args.pretty and table is not None:
        text = _table(*table)
    else:
        text = _dumps(obj, args.pretty)
    if getattr(args, "out", None):
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# -- subcommands ------------------------------------------------------------

def cmd_adv_parse(args):
    try:
        payload = bytes.fromhex(args.hex.replace(" ", "").replace(":", ""))
    except ValueError:
        raise adv_model.MalformedError(0, "invalid hex string") from None
    pdu = adv_model.parse_advertisement(payload)
    _emit(args, pdu.to_dict())


def cmd_fingerprint_classify(args):
    registry = fingerprint.load_registry(_load_json(args.registry))
    with _resolve(args.capture).open(encoding="utf-8") as fh:
        observations = adv_model.read_capture(fh)
    seen: dict[str, dict] = {}
    for obs in observations:
        try:
            pdu = adv_model.parse_advertisement(obs.payload)
        except adv_model.MalformedError:
            pdu = adv_model.AdvertisementPdu()
        key = fingerprint.identity_key(pdu, obs.address).key
        if key not in seen:
            matches = fingerprint.classify(pdu, registry)
            seen[key] = {
                "device_key": key,
                "address": obs.address,
                "first_ts_ms": obs.ts_ms,
                "observations": 0,
                "matches": [{**m.to_dict(), "device_label": registry[m.rule_id].device_label,
                             "category": registry[m.rule_id].category.value} for m in matches],
            }
        seen[key]["observations"] += 1
    rows = list(seen.values())
    _emit(args, rows, ([{"device_key": r["device_key"], "best_match": r["matches"][0]["device_label"] if r["matches"] else None,
                         "observations": r["observations"]} for r in rows], ["device_key", "best_match", "observations"]))


def cmd_calibrate_fit(args):
    with _resolve(args.csv).open(encoding="utf-8", newline="") as fh:
        table = ranging.read_calibration_csv(fh)
    model = ranging.fit_path_loss(table)
    out = model.to_dict()
    out["samples"] = table.n_samples
    out["bearing_residuals"] = {b.value: v for b, v in ranging.bearing_residuals(model, table).items()}
    _emit(args, out)


def _load_model(path: str) -> ranging.PathLossModel:
    try:
        return ranging.PathLossModel.from_dict(_load_json(path))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad model file: missing {exc}") from None


def cmd_track_replay(args):
    model = _load_model(args.model)
    registry = fingerprint.load_registry(_load_json(args.registry)) if args.registry else fingerprint.bundled_registry()
    config = presence.GeofenceConfig(args.boundary, args.hysteresis, args.dwell, args.timeout)
    filt = ranging.RssiFilterState(args.alpha, args.window)
    with _resolve(args.capture).open(encoding="utf-8") as fh:
        observations = adv_model.read_capture(fh)
    buf = io.StringIO()
    queue = presence.NotificationQueue(presence.JsonlSink(buf))
    report = scene.replay(observations, registry, model, config, filt, queue)
    if args.events_out:
        atomic_write(args.events_out, buf.getvalue())
    _emit(args, report.to_dict())


def cmd_simulate_run(args):
    sc = scene.load_scene(_load_json(args.scene))
    traj_doc = _load_json(args.trajectory)
    traj = scene.load_trajectory(traj_doc)
    tracked = args.tracked or traj_doc.get("tracked_device") or "Hearing aids"
    duration = args.duration_ms if args.duration_ms is not None else traj.end_ms
    spec = scene.SimulationSpec(args.seed, duration, args.noise, _load_model(args.model), tracked)
    trace = scene.simulate(sc, traj, spec)
    buf = io.StringIO()
    trace.write(buf)
    if args.out:
        atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _profile(args) -> threat_tree.AdversaryProfile:
    vectors = [v.strip() for v in args.vectors.split(",") if v.strip()] if args.vectors else list(threat_tree.AccessVector)
    return threat_tree.AdversaryProfile(frozenset(threat_tree.AccessVector(v) for v in vectors),
                                        threat_tree.Sophistication(args.max_soph))


def cmd_tree(args):
    if args.action == "map":
        if not args.tree_dir or not args.scene:
            raise UsageError("tree map needs --tree-dir and --scene")
        trees = [threat_tree.parse_tree(_load_json(str(p))) for p in sorted(_resolve(args.tree_dir).glob("*.json"))]
        sc = scene.load_scene(_load_json(args.scene))
        report = threat_tree.map_inventory(sc.inventory(), trees)
        _emit(args, report.to_dict(), ([{"device": d.device_label, "category": d.category.value,
                                          "leaves": len(d.leaves), "flag": d.flag} for d in report.devices],
                                        ["device", "category", "leaves", "flag"]))
        return
    if not args.tree:
        raise UsageError(f"tree {args.action} needs --tree")
    tree = threat_tree.parse_tree(_load_json(args.tree))
    if args.action == "validate":
        _emit(args, {"valid": True, "goal": tree.goal.value, "nodes": len(tree.nodes()),
                     "leaves": len(tree.leaves()), "scenarios": [s.id for s in tree.scenarios]})
        return
    paths = threat_tree.enumerate_paths(tree, cap=args.cap)
    if args.action == "filter":
        paths = threat_tree.filter_paths(paths, _profile(args), tree)
    _emit(args, [p.to_dict() for p in paths],
          ([{"size": len(p.leaves), "leaves": " + ".join(p.sorted_leaves)} for p in paths], ["size", "leaves"]))


def cmd_triage_score(args):
    with _resolve(args.responses).open(encoding="utf-8", newline="") as fh:
        responses = triage.read_responses_csv(fh)
    devices = scene.load_scene(_load_json(args.scene)).names if args.scene else None
    metrics = triage.triage_metrics(responses, devices)
    rows = [d.to_dict() for d in metrics.devices]
    _emit(args, metrics.to_dict(), (rows, ["device", "respondents", "identification_rate", "knowledge_rate",
                                           "exploitability_rate", "gap"]))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="write result here instead of stdout")
    common.add_argument("--pretty", action="store_true", help="human-readable output")

    p = _Parser(prog="medjack", description="BLE tracking, attack-tree and triage toolkit")
    sub = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    adv = sub.add_parser("adv").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = adv.add_parser("parse", parents=[common])
    a.add_argument("--hex", required=True)
    a.set_defaults(func=cmd_adv_parse)

    fp = sub.add_parser("fingerprint").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = fp.add_parser("classify", parents=[common])
    a.add_argument("--registry", default="registry/table2.json")
    a.add_argument("--capture", required=True)
    a.set_defaults(func=cmd_fingerprint_classify)

    cal = sub.add_parser("calibrate").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = cal.add_parser("fit", parents=[common])
    a.add_argument("--csv", required=True)
    a.set_defaults(func=cmd_calibrate_fit)

    trk = sub.add_parser("track").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = trk.add_parser("replay", parents=[common])
    a.add_argument("--capture", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--registry")
    a.add_argument("--boundary", type=float, required=True)
    a.add_argument("--hysteresis", type=float, default=0.5)
    a.add_argument("--dwell", type=int, default=3)
    a.add_argument("--timeout", type=int, default=30_000)
    a.add_argument("--alpha", type=float, default=0.75, help="EWMA weight")
    a.add_argument("--window", type=int, default=3, help="median prefilter length")
    a.add_argument("--events-out")
    a.set_defaults(func=cmd_track_replay)

    sim = sub.add_parser("simulate").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = sim.add_parser("run", parents=[common])
    a.add_argument("--scene", default="scene/table2.json")
    a.add_argument("--trajectory", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--noise", type=float, default=0.0)
    a.add_argument("--tracked")
    a.add_argument("--duration-ms", type=int)
    a.set_defaults(func=cmd_simulate_run)

    a = sub.add_parser("tree", parents=[common])
    a.add_argument("action", choices=["validate", "paths", "filter", "map"])
    a.add_argument("--tree")
    a.add_argument("--tree-dir")
    a.add_argument("--scene")
    a.add_argument("--vectors", help="comma-separated access vectors")
    a.add_argument("--max-soph", default="high", choices=[s.value for s in threat_tree.Sophistication])
    a.add_argument("--cap", type=int, default=100_000)
    a.set_defaults(func=cmd_tree)

    tri = sub.add_parser("triage").add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = tri.add_parser("score", parents=[common])
    a.add_argument("--responses", required=True)
    a.add_argument("--scene", help="scene document naming the valid devices")
    a.set_defaults(func=cmd_triage_score)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_DOMAIN
    if isinstance(exc, (adv_model.MalformedError, ranging.NoSamplesError, triage.ResponseFormatError)):
        return EXIT_MALFORMED
    if isinstance(exc, ranging.CalibrationError) and not isinstance(exc, ranging.DegenerateCalibrationError):
        return EXIT_MALFORMED
    if isinstance(exc, (OSError, json.JSONDecodeError, UnicodeDecodeError, adv_model.CaptureFormatError)):
        return EXIT_IO
    return EXIT_DOMAIN


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except (UsageError, ValueError, KeyError, OSError, threat_tree.PathOverflowError) as exc:
        message = str(exc).strip() or type(exc).__name__
        first, _, rest = message.partition("\n")
        print(f"error: {first}", file=sys.stderr)
        if rest and isinstance(exc, UsageError):
            print(rest, file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
