"""Command-line pipeline over a study workspace.

Subcommands: plan, serve, simulate, score, erp, stats, report. Every
stage reads and writes files under one workspace directory (flag
--workspace, else $OSVS_WORKSPACE, else ./osvs-workspace):

    plans/    session plans, one text file per participant or seed
    logs/     event logs
    eeg/      EEG recordings
    scored/   per-participant metrics (+ metrics.csv, erp.csv)
    reports/  statistics tables, summary, per-figure CSVs
    participants.csv, manifest.txt

Files are written atomically (temp file + rename), so a failed stage
never leaves a truncated file over a previous result. All randomness
enters through the --seed flags. Exit codes: 0 ok, 2 validation error,
3 conformance error, 4 I/O error; errors print one line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, EegError, LogError, PlanError, WireError
from .erp import (
    DEFAULT_ARTIFACT_THRESHOLD_UV,
    DEFAULT_MEASUREMENT_CHANNEL,
    eeg_from_bytes,
    eeg_to_bytes,
    erp_metrics,
    extract_epochs,
    reject_artifacts,
)
from .protocol import (
    Group,
    build_session_plan,
    parse_plan_text,
    plan_hash,
    plan_to_text,
)
from .report import (
    friedman_csv,
    group_medians,
    medians_csv,
    pivot_csv,
    render_friedman_text,
    render_medians_block,
)
from .runtime import EventKind, EventLog, verify_conformance
from .scoring import cohort_csv, score_participant, score_to_text
from .simulate import (
    build_cohort,
    participant_seeds,
    simulate_participant,
    synthesize_eeg,
)
from .stats import (
    RepeatedMeasures,
    correlation_table,
    correlation_table_csv,
    correlation_table_text,
    friedman,
)
from .wire import SessionServer

DEFAULT_WORKSPACE = "osvs-workspace"
ENV_WORKSPACE = "OSVS_WORKSPACE"
SUBDIRS = ("plans", "logs", "eeg", "scored", "reports")
CONDITIONS = ("P1", "P3", "P5")
GROUPS = ("young", "elderly")

# Friedman rows in display order; ERP rows appear when erp.csv exists.
BEHAVIOR_METRICS = ("tp", "tn", "fp", "fn", "accuracy", "precision",
                    "sensitivity", "median_rt_s")
ERP_METRICS = ("erp_amplitude_uv", "erp_latency_s")

COHORT_KEYS = ("n_young", "n_elderly", "coupling", "noise_sigma_uv")


class Workspace:
    """Directory layout plus atomic writes and the hash manifest."""

    def __init__(self, root) -> None:
        self.root = Path(root)

    def ensure(self) -> None:
        for sub in SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def write_bytes(self, rel: str, data: bytes) -> None:
        target = self.root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, target)

    def write_text(self, rel: str, text: str) -> None:
        self.write_bytes(rel, text.encode("utf-8"))

    def read_text(self, rel: str) -> str:
        return (self.root / rel).read_text("utf-8")

    def update_manifest(self) -> None:
        rels = []
        for sub in SUBDIRS:
            d = self.root / sub
            if d.is_dir():
                for f in d.rglob("*"):
                    if f.is_file() and not f.name.endswith(".tmp"):
                        rels.append(f.relative_to(self.root).as_posix())
        if (self.root / "participants.csv").is_file():
            rels.append("participants.csv")
        rels.sort()
        pids = sorted(read_participants(self, optional=True))
        lines = ["osvs-manifest 1"]
        lines.append("participants: " + (" ".join(pids) if pids else "none"))
        lines.append("files:")
        for rel in rels:
            digest = hashlib.sha256((self.root / rel).read_bytes()).hexdigest()
            lines.append(f"{digest}  {rel}")
        self.write_text("manifest.txt", "\n".join(lines) + "\n")


def write_participants(ws: Workspace, profiles) -> None:
    lines = ["participant,group,age,gender,handedness,vision_correction,"
             "has_licence,licence_years"]
    for p in profiles:
        years = "" if p.licence_years is None else str(p.licence_years)
        lines.append(
            f"{p.id},{p.group.value},{p.age:g},{p.gender.value},"
            f"{p.handedness.value},{p.vision_correction.value},"
            f"{int(p.has_licence)},{years}"
        )
    ws.write_text("participants.csv", "\n".join(lines) + "\n")


def read_participants(ws: Workspace, optional: bool = False) -> dict[str, dict]:
    path = ws.path("participants.csv")
    if not path.is_file():
        if optional:
            return {}
        raise FileNotFoundError(
            f"{path} not found (run `osvs simulate` or create it by hand)")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for row in rows:
        pid = (row.get("participant") or "").strip()
        if not pid:
            raise ConfigError("participants.csv has a row without a participant id")
        if row.get("group") not in ("young", "elderly"):
            raise ConfigError(f"participants.csv: bad group for {pid!r}")
        try:
            float(row.get("age", ""))
        except ValueError:
            raise ConfigError(f"participants.csv: bad age for {pid!r}") from None
        out[pid] = row
    return out


# ---------------------------------------------------------------- stages

def cmd_plan(ws: Workspace, args) -> int:
    plan = build_session_plan(seed=args.seed)
    name = args.participant or f"seed{args.seed}"
    rel = f"plans/{name}.plan.txt"
    ws.write_text(rel, plan_to_text(plan))
    ws.update_manifest()
    print(f"plan {name} sets={len(plan.sets)} hash={plan_hash(plan)[:16]} -> {rel}")
    return 0


def _resolve_input(ws: Workspace, given: str) -> Path:
    p = Path(given)
    if p.is_file():
        return p
    q = ws.path(given)
    if q.is_file():
        return q
    raise FileNotFoundError(f"{given} not found (tried {p} and {q})")


def cmd_serve(ws: Workspace, args) -> int:
    plan = parse_plan_text(_resolve_input(ws, args.plan).read_text("utf-8"))
    server = SessionServer(plan, host=args.host, port=args.port,
                           accept_timeout_s=args.accept_timeout_s)
    host, port = server.address
    print(f"listening {host}:{port}", flush=True)
    try:
        log = server.run(participant=args.participant, cue_mode=args.cue_mode,
                         cue_duration_ms=args.cue_duration_ms)
    finally:
        server.close()
    rel = f"logs/{args.participant}.log.txt"
    ws.write_text(rel, log.to_text())
    ws.update_manifest()
    shown = len(log.events(EventKind.STIM_ON))
    presses = len(log.events(EventKind.RESPONSE))
    print(f"log {rel} displays={shown} responses={presses} aborted={int(log.aborted)}")
    return 0


def parse_cohort_file(path: Path) -> dict:
    cfg: dict = {}
    for lineno, raw in enumerate(path.read_text("utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in COHORT_KEYS:
            raise ConfigError(f"{path.name}:{lineno}: unknown key {key!r}")
        try:
            cfg[key] = int(value) if key.startswith("n_") else float(value)
        except ValueError:
            raise ConfigError(f"{path.name}:{lineno}: bad number {value!r}") from None
    return cfg


def cmd_simulate(ws: Workspace, args) -> int:
    cfg = {"n_young": 10, "n_elderly": 15, "coupling": 1.0, "noise_sigma_uv": 10.0}
    if args.cohort != "default":
        cfg.update(parse_cohort_file(_resolve_input(ws, args.cohort)))
    for key in COHORT_KEYS:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    cohort = build_cohort(n_young=cfg["n_young"], n_elderly=cfg["n_elderly"],
                          coupling=cfg["coupling"], seed=args.seed,
                          noise_sigma_uv=cfg["noise_sigma_uv"])
    profiles = []
    for idx, (profile, behavior, erp_model) in enumerate(cohort):
        plan_seed, sim_seed, eeg_seed = participant_seeds(args.seed, idx)
        plan = build_session_plan(seed=plan_seed)
        log = simulate_participant(plan, behavior, seed=sim_seed,
                                   participant=profile.id)
        ws.write_text(f"plans/{profile.id}.plan.txt", plan_to_text(plan))
        ws.write_text(f"logs/{profile.id}.log.txt", log.to_text())
        if args.eeg:
            eeg = synthesize_eeg(log, erp_model, seed=eeg_seed)
            ws.write_bytes(f"eeg/{profile.id}.eeg", eeg_to_bytes(eeg))
        profiles.append(profile)
    write_participants(ws, profiles)
    ws.update_manifest()
    print(f"simulated {len(profiles)} participants seed={args.seed} "
          f"eeg={'on' if args.eeg else 'off'}")
    return 0


def cmd_score(ws: Workspace, args) -> int:
    log_files = sorted(ws.path("logs").glob("*.log.txt"))
    if not log_files:
        raise ConfigError("no logs in workspace (run `osvs simulate` or `osvs serve`)")
    plans = {}
    for pf in sorted(ws.path("plans").glob("*.plan.txt")):
        plan = parse_plan_text(pf.read_text("utf-8"))
        plans[plan_hash(plan)] = plan
    participants = read_participants(ws)
    scored = []
    for lf in log_files:
        log = EventLog.from_text(lf.read_text("utf-8"))
        plan = plans.get(log.plan_hash)
        if plan is None:
            raise LogError(f"{lf.name}: no plan in workspace matches "
                           f"hash {log.plan_hash[:16]}")
        issues = verify_conformance(log, plan)
        if issues:
            more = f" (+{len(issues) - 1} more)" if len(issues) > 1 else ""
            raise LogError(f"{lf.name}: does not conform to its plan: "
                           f"{issues[0]}{more}")
        pid = log.participant
        if pid not in participants:
            raise ConfigError(f"participant {pid!r} missing from participants.csv")
        score = score_participant(log, plan, check=False)  # verified above
        scored.append((Group(participants[pid]["group"]), score))
        ws.write_text(f"scored/{pid}.score.txt", score_to_text(score))
    ws.write_text("scored/metrics.csv", cohort_csv(scored))
    ws.update_manifest()
    print(f"scored {len(scored)} participants -> scored/metrics.csv")
    return 0


def cmd_erp(ws: Workspace, args) -> int:
    eeg_files = sorted(ws.path("eeg").glob("*.eeg"))
    if not eeg_files:
        raise ConfigError("no EEG recordings in workspace (simulate with --eeg)")
    csv_lines = ["participant,condition,erp_amplitude_uv,erp_latency_s,"
                 "n_epochs,rejected"]
    for ef in eeg_files:
        pid = ef.name[:-len(".eeg")]
        log_path = ws.path(f"logs/{pid}.log.txt")
        if not log_path.is_file():
            raise FileNotFoundError(f"{log_path} (log required to epoch {ef.name})")
        log = EventLog.from_text(log_path.read_text("utf-8"))
        eeg = eeg_from_bytes(ef.read_bytes())
        lines = [f"osvs-erp 1 participant={pid} channel={args.channel}"]
        for cond in CONDITIONS:
            epochs = extract_epochs(eeg, log, channel=args.channel, condition=cond)
            kept = reject_artifacts(epochs, threshold_uv=args.artifact_threshold_uv)
            m = erp_metrics(kept)
            csv_lines.append(f"{pid},{cond},{m.amplitude_uv:.6f},"
                             f"{m.latency_s:.6f},{m.n_epochs_used},{kept.rejected}")
            lines.append(f"condition {cond} amplitude_uv={m.amplitude_uv:.6f} "
                         f"latency_s={m.latency_s:.6f} n_epochs={m.n_epochs_used} "
                         f"rejected={kept.rejected}")
        ws.write_text(f"scored/{pid}.erp.txt", "\n".join(lines) + "\n")
    ws.write_text("scored/erp.csv", "\n".join(csv_lines) + "\n")
    ws.update_manifest()
    print(f"erp metrics for {len(eeg_files)} participants channel={args.channel}")
    return 0


def load_metric_rows(ws: Workspace) -> tuple[list, bool]:
    """Long-format rows from metrics.csv plus erp.csv when present."""
    path = ws.path("scored/metrics.csv")
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found (run `osvs score` first)")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            value = row["value"]
            rows.append((row["participant"], row["group"], row["condition"],
                         row["metric"], float(value) if value else None))
    erp_path = ws.path("scored/erp.csv")
    has_erp = erp_path.is_file()
    if has_erp:
        groups = {pid: r["group"] for pid, r in read_participants(ws).items()}
        with erp_path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                pid = row["participant"]
                group = groups.get(pid, "unknown")
                for metric in ERP_METRICS:
                    rows.append((pid, group, row["condition"], metric,
                                 float(row[metric])))
    return rows, has_erp


def cmd_stats(ws: Workspace, args) -> int:
    rows, has_erp = load_metric_rows(ws)
    participants = read_participants(ws)
    profiles = {pid: {"age": float(r["age"])} for pid, r in participants.items()}
    group_of = {pid: r["group"] for pid, r in participants.items()}

    metric_order = list(BEHAVIOR_METRICS) + (list(ERP_METRICS) if has_erp else [])
    values = {(pid, cond, metric): v for pid, _g, cond, metric, v in rows}
    results = {}
    for group in GROUPS:
        pids = sorted(p for p in participants if group_of[p] == group)
        for metric in metric_order:
            matrix = []
            for pid in pids:
                vals = [values.get((pid, c, metric)) for c in CONDITIONS]
                if all(v is not None for v in vals):
                    matrix.append(vals)
            if len(matrix) >= 2:
                results[(group, metric)] = friedman(
                    RepeatedMeasures(matrix, CONDITIONS))
            else:
                results[(group, metric)] = None
    ws.write_text("reports/friedman.txt",
                  render_friedman_text(results, GROUPS, metric_order))
    ws.write_text("reports/friedman.csv",
                  friedman_csv(results, GROUPS, metric_order))

    tables = [
        ("correlation-age-counts", ["age"], ["tp", "fn", "fp", "tn"]),
        ("correlation-age-rates", ["age"],
         ["accuracy", "precision", "sensitivity"]),
        ("correlation-age-rt", ["age"], ["median_rt_s"]),
    ]
    if has_erp:
        tables += [
            ("correlation-age-erp", ["age"], list(ERP_METRICS)),
            ("correlation-erp-behavior",
             ["tn@P1", "fp@P1", "accuracy@P1", "precision@P1"],
             list(ERP_METRICS)),
        ]
    for name, row_vars, col_vars in tables:
        table = correlation_table(rows, profiles, row_vars, col_vars)
        ws.write_text(f"reports/{name}.txt", correlation_table_text(table))
        ws.write_text(f"reports/{name}.csv", correlation_table_csv(table))
    ws.update_manifest()
    print(f"stats -> reports/friedman.txt + {len(tables)} correlation tables")
    return 0


def _age_span(participants: dict, group: str) -> str:
    ages = sorted(float(r["age"]) for r in participants.values()
                  if r["group"] == group)
    if not ages:
        return "none"
    return f"{ages[0]:g}-{ages[-1]:g} years"


def cmd_report(ws: Workspace, args) -> int:
    rows, has_erp = load_metric_rows(ws)
    participants = read_participants(ws)
    medians = group_medians(rows)
    metric_order = list(BEHAVIOR_METRICS) + (list(ERP_METRICS) if has_erp else [])

    ws.write_text("reports/medians.csv", medians_csv(medians, metric_order, GROUPS))
    ws.write_text("reports/figure-counts.csv",
                  pivot_csv(rows, ["tp", "tn", "fp", "fn"]))
    ws.write_text("reports/figure-rates.csv",
                  pivot_csv(rows, ["accuracy", "precision", "sensitivity"]))
    ws.write_text("reports/figure-rt.csv", pivot_csv(rows, ["median_rt_s"]))
    figure_files = ["figure-counts.csv", "figure-rates.csv", "figure-rt.csv"]
    if has_erp:
        ws.write_text("reports/figure-erp.csv", pivot_csv(rows, list(ERP_METRICS)))
        figure_files.append("figure-erp.csv")

    n_young = sum(1 for r in participants.values() if r["group"] == "young")
    n_elderly = sum(1 for r in participants.values() if r["group"] == "elderly")
    out = ["Oddball serial visual search: cohort report",
           "============================================", ""]
    out.append(f"Participants: {n_young} young ({_age_span(participants, 'young')}), "
               f"{n_elderly} elderly ({_age_span(participants, 'elderly')})")
    out.append("")
    blocks = [
        ("tp", "Median correct detections (TP of 96 targets)"),
        ("fp", "Median false alarms (FP of 384 nontargets)"),
        ("median_rt_s", "Median reaction time (s)"),
    ]
    if has_erp:
        blocks += [
            ("erp_amplitude_uv", "Median ERP peak amplitude (uV)"),
            ("erp_latency_s", "Median ERP peak latency (s)"),
        ]
    for metric, title in blocks:
        out.append(title)
        out.append(render_medians_block(medians, metric, GROUPS))
        out.append("")

    sections = [("friedman.txt",
                 "Within-group condition effects (Friedman + pairwise)")]
    sections += [
        ("correlation-age-counts.txt", "Age vs detection counts (pooled)"),
        ("correlation-age-rates.txt", "Age vs performance rates (pooled)"),
        ("correlation-age-rt.txt", "Age vs reaction time (pooled)"),
    ]
    if has_erp:
        sections += [
            ("correlation-age-erp.txt", "Age vs ERP measures (pooled)"),
            ("correlation-erp-behavior.txt",
             "Single-target behavior vs ERP measures (pooled)"),
        ]
    for fname, title in sections:
        out.append(title)
        path = ws.path(f"reports/{fname}")
        if path.is_file():
            out.append(path.read_text("utf-8").rstrip("\n"))
        else:
            out.append("  (stats stage has not run)")
        out.append("")

    out.append("Per-figure data files: " + ", ".join(figure_files))
    out.append("Machine-readable medians: medians.csv")
    ws.write_text("reports/summary.txt", "\n".join(out) + "\n")
    ws.update_manifest()
    print("report -> reports/summary.txt")
    return 0


# ------------------------------------------------------------- dispatch

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit; surface as validation
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workspace", default=None,
                        help="workspace root (default $OSVS_WORKSPACE or "
                             "./" + DEFAULT_WORKSPACE + ")")
    parser = _Parser(prog="osvs",
                     description="Oddball serial visual search pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common],
                       help="write a seeded session plan")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--participant", default=None)

    p = sub.add_parser("serve", parents=[common],
                       help="run one live session over TCP")
    p.add_argument("--plan", required=True, help="plan file (path or workspace-relative)")
    p.add_argument("--participant", default="anon")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--cue-mode", choices=("confirm", "fixed"), default="confirm")
    p.add_argument("--cue-duration-ms", type=int, default=2000)
    p.add_argument("--accept-timeout-s", type=float, default=30.0)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a simulated cohort")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cohort", default="default",
                   help='"default" or a key=value config file')
    p.add_argument("--n-young", dest="n_young", type=int, default=None)
    p.add_argument("--n-elderly", dest="n_elderly", type=int, default=None)
    p.add_argument("--coupling", type=float, default=None)
    p.add_argument("--noise-sigma-uv", dest="noise_sigma_uv", type=float,
                   default=None)
    p.add_argument("--eeg", action="store_true",
                   help="also synthesize EEG recordings")

    sub.add_parser("score", parents=[common],
                   help="score every log against its plan")

    p = sub.add_parser("erp", parents=[common],
                       help="average EEG epochs and measure peaks")
    p.add_argument("--channel", default=DEFAULT_MEASUREMENT_CHANNEL)
    p.add_argument("--artifact-threshold-uv", type=float,
                   default=DEFAULT_ARTIFACT_THRESHOLD_UV)

    sub.add_parser("stats", parents=[common],
                   help="Friedman and correlation tables")
    sub.add_parser("report", parents=[common],
                   help="bundle medians, figures, and tables")
    return parser


_COMMANDS = {
    "plan": cmd_plan,
    "serve": cmd_serve,
    "simulate": cmd_simulate,
    "score": cmd_score,
    "erp": cmd_erp,
    "stats": cmd_stats,
    "report": cmd_report,
}


def _fail(code: int, category: str, exc: Exception) -> int:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"osvs: error: {category}: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        root = args.workspace or os.environ.get(ENV_WORKSPACE) or DEFAULT_WORKSPACE
        ws = Workspace(root)
        ws.ensure()
        return _COMMANDS[args.command](ws, args)
    except ConfigError as exc:
        return _fail(2, "validation", exc)
    except LogError as exc:
        return _fail(3, "conformance", exc)
    except (PlanError, EegError, WireError, OSError) as exc:
        return _fail(4, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
