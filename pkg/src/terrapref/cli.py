"""Command-line entry point: collect demonstrations, train, evaluate, replay.

Subcommand overview:

  terrapref collect --scripted         drive the bundled course, save a dataset
  terrapref collect --serve            record a human over the teleop websocket
  terrapref train                      fit the preference classifier
  terrapref eval                       closed-loop scenario table with pass/fail
  terrapref replay episode.jsonl       render top-down track images

Configuration is layered: built-in defaults, then --config FILE, then
TERRAPREF_* environment variables, then flags. Every command logs the
resolved config it ran with; --print-config echoes it and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, ImageDraw

from .camera import LABEL_COLORS, render_segmentation, save_colormapped
from .config import ConfigError, RunConfig, config_to_dict, resolve_config
from .learner import (
    Classifier,
    DatasetFormatError,
    EpochStats,
    ModelFormatError,
    TrainingError,
    load_dataset,
    load_model,
    load_reference_model,
    save_dataset,
    save_model,
    train,
)
from .planner import EpisodeLog, EpisodeLogFormatError, load_episode_log, run_episode, save_episode_log
from .scenarios import scenario_by_name, test_scenarios, training_course
from .sim import collect_course, scripted_oracle
from .teleop import TeleopSession, serve
from .world import Circle, ConvexPolygon, Rect, Scenario, ScenarioFormatError, TerrainLabel, load_scenario

__all__ = ["main", "build_parser"]

log = logging.getLogger("terrapref")

PATH_COLOR = (238, 234, 208)
TRACK_COLOR = (25, 25, 25)
START_COLOR = (250, 250, 250)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terrapref",
        description="Demonstration-learned terrain preferences for a simulated vehicle.",
    )
    parser.add_argument("--config", help="JSON config file; TERRAPREF_* env vars override it")
    parser.add_argument("--seed", type=int, help="override the training seed")
    parser.add_argument(
        "--print-config", action="store_true", help="echo the fully-resolved config and exit"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("collect", help="record demonstrations into a dataset file")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument(
        "--scripted",
        action="store_true",
        help="drive the bundled training course with the scripted demonstrator (default)",
    )
    mode.add_argument(
        "--serve", action="store_true", help="serve the teleop websocket and record a human driver"
    )
    p.add_argument("--out", help="dataset file to write (default: config dataset path)")
    p.add_argument("--scenario", help="world for --serve: a bundled name or a scenario JSON file")
    p.add_argument("--host", default="127.0.0.1", help="bind address for --serve")
    p.add_argument("--port", type=int, default=8000, help="port for --serve")
    p.add_argument("--ui", help="directory of UI static files to serve at /")
    p.add_argument(
        "--pace", type=float, default=1.0, help="sim speed as a multiple of wall clock; 0 free-runs"
    )

    p = sub.add_parser("train", help="fit the preference classifier on a dataset")
    p.add_argument("--dataset", help="dataset file to train on (default: config dataset path)")
    p.add_argument("--out", help="model file to write (default: config model path)")

    p = sub.add_parser("eval", help="run closed-loop episodes and print the scenario table")
    p.add_argument(
        "--model",
        help="model file (default: config model path if it exists, else the bundled reference)",
    )
    p.add_argument(
        "--scenario",
        action="append",
        help="bundled scenario name to evaluate; repeatable (default: the test suite)",
    )
    p.add_argument("--out", help="also write the result rows as JSON")
    p.add_argument("--dump-camera", metavar="DIR", help="save a start-pose camera render per scenario")
    p.add_argument("--save-logs", metavar="DIR", help="save each episode log for later replay")

    p = sub.add_parser("replay", help="render saved episode logs as top-down track images")
    p.add_argument("logs", nargs="+", help="episode log files written by eval --save-logs")
    p.add_argument("--out", help="directory for rendered images (default: config logs path)")
    p.add_argument("--scenario", help="override the world: a bundled name or a scenario JSON file")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)

    overrides: dict[str, Any] = {"seed": args.seed}
    command = args.command
    if command == "collect":
        overrides["dataset"] = args.out
        overrides["scenario"] = args.scenario
    elif command == "train":
        overrides["dataset"] = args.dataset
        overrides["model"] = args.out
    elif command == "eval":
        overrides["model"] = args.model
    elif command == "replay":
        overrides["logs"] = args.out
        overrides["scenario"] = args.scenario
    try:
        cfg = resolve_config(args.config, os.environ, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.print_config:
        print(json.dumps(config_to_dict(cfg), indent=2))
        return 0
    if command is None:
        parser.print_usage(sys.stderr)
        return 2

    log.info("resolved config %s", json.dumps(config_to_dict(cfg), separators=(",", ":")))
    handler = {
        "collect": cmd_collect,
        "train": cmd_train,
        "eval": cmd_eval,
        "replay": cmd_replay,
    }[command]
    return handler(cfg, args)


# ---- collect ----


def cmd_collect(cfg: RunConfig, args: argparse.Namespace) -> int:
    prefset = cfg.prefset()
    cam = cfg.camera()
    out = Path(cfg.dataset)

    if args.serve:
        try:
            scenario = _resolve_scenario(cfg.scenario)
        except (KeyError, OSError, ScenarioFormatError) as exc:
            log.error("cannot load scenario: %s", exc)
            return 1
        problem = _writability_problem(out)
        if problem is not None:
            log.error("%s", problem)
            return 1
        session = TeleopSession(scenario, prefset=prefset, cam=cam, out=out, pace=args.pace)
        log.info(
            "teleop session %s on ws://%s:%d/teleop, scenario %s, writing %s on finish",
            session.session_id, args.host, args.port, scenario.name, out,
        )
        try:
            serve(session, host=args.host, port=args.port, ui_dir=args.ui)
        except KeyboardInterrupt:
            pass
        if session.write_error is not None:
            log.error("%s", session.write_error)
            return 1
        log.info("session ended in state %s with %d records", session.state.value, len(session.records))
        return 0

    if cfg.scenario is not None:
        log.info("scripted collection always drives the bundled course; ignoring scenario %r", cfg.scenario)
    course = training_course()
    started = time.perf_counter()
    dataset = collect_course(course, scripted_oracle, prefset=prefset, cam=cam)
    elapsed = time.perf_counter() - started
    try:
        save_dataset(dataset, out)
    except OSError as exc:
        log.error("cannot write dataset to %s: %s", out, exc)
        return 1
    log.info(
        "collected %d records over %d legs in %.1f s, wrote %s",
        len(dataset.records), len(course), elapsed, out,
    )
    return 0


def _resolve_scenario(name: str | None) -> Scenario:
    """A bundled scenario name, a scenario JSON file path, or the open field."""
    if name is None:
        return scenario_by_name("open-field")
    if Path(name).exists():
        return load_scenario(name)
    return scenario_by_name(name)


def _writability_problem(path: Path) -> str | None:
    parent = path.resolve().parent
    if not parent.is_dir():
        return f"output directory {parent} does not exist"
    if not os.access(parent, os.W_OK):
        return f"output directory {parent} is not writable"
    return None


# ---- train ----


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    try:
        dataset = load_dataset(cfg.dataset)
    except OSError as exc:
        log.error("cannot read dataset %s: %s", cfg.dataset, exc)
        return 1
    except DatasetFormatError as exc:
        log.error("bad dataset %s: %s", cfg.dataset, exc)
        return 1
    try:
        result = train(dataset, cfg.train_config())
    except (ValueError, TrainingError) as exc:
        log.error("training failed: %s", exc)
        return 1

    try:
        save_model(result.model, cfg.model)
    except OSError as exc:
        log.error("cannot write model to %s: %s", cfg.model, exc)
        return 1

    logs_dir = Path(cfg.logs)
    try:
        logs_dir.mkdir(parents=True, exist_ok=True)
        history_doc = {
            "best_epoch": result.best_epoch,
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_loss": e.val_loss,
                    "val_accuracy": e.val_accuracy,
                }
                for e in result.history
            ],
        }
        (logs_dir / "loss_history.json").write_text(json.dumps(history_doc, indent=2))
        _render_loss_plot(result.history, logs_dir / "loss.png")
    except OSError as exc:
        log.error("cannot write training logs to %s: %s", logs_dir, exc)
        return 1

    for e in result.history:
        marker = " *" if e.epoch == result.best_epoch else ""
        print(
            f"epoch {e.epoch:3d}  train {e.train_loss:.4f}  "
            f"val {e.val_loss:.4f}  acc {e.val_accuracy:.3f}{marker}"
        )
    log.info(
        "kept epoch %d, wrote %s, %s, %s",
        result.best_epoch, cfg.model, logs_dir / "loss_history.json", logs_dir / "loss.png",
    )
    return 0


def _render_loss_plot(history: list[EpochStats], path: Path, size: tuple[int, int] = (640, 400)) -> None:
    """Plain raster line plot of train and validation loss; no plotting deps."""
    width, height = size
    margin = 48
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    epochs = [e.epoch for e in history]
    series = [
        ("train", [e.train_loss for e in history], (196, 78, 62)),
        ("val", [e.val_loss for e in history], (58, 96, 186)),
    ]
    top = max(max(values) for _, values, _ in series) or 1.0
    x0, y0, x1, y1 = margin, margin // 2, width - margin // 2, height - margin

    def to_px(epoch: int, loss: float) -> tuple[float, float]:
        fx = (epoch - epochs[0]) / max(1, epochs[-1] - epochs[0])
        fy = loss / top
        return (x0 + fx * (x1 - x0), y1 - fy * (y1 - y0))

    draw.line([(x0, y0), (x0, y1), (x1, y1)], fill=(120, 120, 120), width=1)
    for epoch in epochs:
        px, _ = to_px(epoch, 0.0)
        draw.line([(px, y1), (px, y1 + 4)], fill=(120, 120, 120), width=1)
        draw.text((px - 4, y1 + 6), str(epoch), fill=(90, 90, 90))
    draw.text((4, y0), f"{top:.2f}", fill=(90, 90, 90))
    draw.text((4, y1 - 10), "0", fill=(90, 90, 90))
    for offset, (name, values, color) in enumerate(series):
        points = [to_px(e, v) for e, v in zip(epochs, values)]
        draw.line(points, fill=color, width=2)
        draw.text((x1 - 90, y0 + 14 * offset), name, fill=color)
    img.save(path)


# ---- eval ----


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    model = _load_eval_model(cfg, explicit=args.model is not None)
    if model is None:
        return 1
    try:
        scenarios = (
            [scenario_by_name(name) for name in args.scenario] if args.scenario else test_scenarios()
        )
    except KeyError as exc:
        log.error("%s", exc.args[0])
        return 1

    prefset = cfg.prefset()
    cam = cfg.camera()
    dump_dir = Path(args.dump_camera) if args.dump_camera else None
    logs_dir = Path(args.save_logs) if args.save_logs else None
    for directory in (dump_dir, logs_dir):
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)

    rows = []
    for scenario in scenarios:
        if dump_dir is not None:
            seg = render_segmentation(scenario, scenario.start_pose, cam)
            save_colormapped(seg, dump_dir / f"{scenario.name}.png")
        episode = run_episode(scenario, model, prefset, cam)
        if logs_dir is not None:
            save_episode_log(episode, logs_dir / f"{scenario.name}.episode.jsonl")
        rows.append(_eval_row(scenario, episode))

    _print_table(rows)
    checked = [r for r in rows if r["result"] != "n/a"]
    passed = sum(r["result"] == "pass" for r in checked)
    if checked:
        print(f"{passed}/{len(checked)} preference matches")
    if args.out:
        try:
            Path(args.out).write_text(json.dumps(rows, indent=2))
        except OSError as exc:
            log.error("cannot write results to %s: %s", args.out, exc)
            return 1
        log.info("wrote %s", args.out)
    return 0 if passed == len(checked) else 1


def _load_eval_model(cfg: RunConfig, explicit: bool) -> Classifier | None:
    path = Path(cfg.model)
    if not explicit and cfg.model == RunConfig.model and not path.exists():
        log.info("no model trained here yet; using the bundled reference model")
        return load_reference_model()
    try:
        return load_model(path)
    except OSError as exc:
        log.error("cannot read model %s: %s", path, exc)
        return None
    except ModelFormatError as exc:
        log.error("bad model %s: %s", path, exc)
        return None


def _eval_row(scenario: Scenario, episode: EpisodeLog) -> dict:
    summary = episode.summary
    terrains = []
    for patch in scenario.patches:
        if patch.label.key not in terrains:
            terrains.append(patch.label.key)
    dominant = summary.dominant_terrain
    planner = dominant.key if dominant is not None else "none"
    if not summary.goal_reached:
        planner = f"{planner} ({summary.reason})"
    expected = scenario.expected_preference
    if expected is None:
        result = "n/a"
    elif not summary.goal_reached:
        result = "fail"
    elif expected == "avoid":
        result = "pass" if dominant is None else "fail"
    else:
        result = "pass" if dominant is not None and dominant.key == expected else "fail"
    return {
        "scenario": scenario.name,
        "terrains": ", ".join(terrains) if terrains else "none",
        "expected": expected if expected is not None else "n/a",
        "planner": planner,
        "result": result,
    }


def _print_table(rows: list[dict]) -> None:
    columns = [("scenario", "scenario"), ("terrains", "terrains"),
               ("expected", "expected"), ("planner", "planner"), ("result", "result")]
    widths = {
        key: max(len(header), *(len(str(r[key])) for r in rows)) if rows else len(header)
        for key, header in columns
    }
    header = "  ".join(header.ljust(widths[key]) for key, header in columns)
    print(header)
    print("  ".join("-" * widths[key] for key, _ in columns))
    for r in rows:
        print("  ".join(str(r[key]).ljust(widths[key]) for key, _ in columns))


# ---- replay ----


def cmd_replay(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.logs)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out_dir, exc)
        return 1

    code = 0
    for log_path in args.logs:
        try:
            episode = load_episode_log(log_path, truncated_ok=True)
        except (OSError, EpisodeLogFormatError) as exc:
            log.error("cannot load episode log %s: %s", log_path, exc)
            code = 1
            continue
        if not episode.records:
            log.error("episode log %s holds no plan records", log_path)
            code = 1
            continue
        if episode.truncated_at is not None:
            log.warning(
                "episode log %s is truncated at line %d; rendering the prefix",
                log_path, episode.truncated_at,
            )
        try:
            scenario = _resolve_scenario(cfg.scenario or episode.scenario_name)
        except (KeyError, OSError, ScenarioFormatError) as exc:
            log.error("cannot resolve world for %s: %s", log_path, exc)
            code = 1
            continue
        image_path = out_dir / f"{Path(log_path).stem}.png"
        _render_track(scenario, episode, image_path)
        log.info("wrote %s", image_path)
    return code


def _shape_bounds(shape) -> tuple[float, float, float, float]:
    if isinstance(shape, Rect):
        return (shape.low[0], shape.low[1], shape.high[0], shape.high[1])
    if isinstance(shape, Circle):
        cx, cy = shape.center
        return (cx - shape.radius, cy - shape.radius, cx + shape.radius, cy + shape.radius)
    if isinstance(shape, ConvexPolygon):
        xs, ys = shape.vertices[:, 0], shape.vertices[:, 1]
        return (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    raise TypeError(f"unknown shape {type(shape).__name__}")


def _render_track(scenario: Scenario, episode: EpisodeLog, path: Path, scale: float = 32.0) -> None:
    """Top-down image: terrain patches, reference path, driven track."""
    waypoints = scenario.reference_path.waypoints
    track = np.array([[r.pose.x, r.pose.y] for r in episode.records])
    xs = [waypoints[:, 0].min(), waypoints[:, 0].max(), track[:, 0].min(), track[:, 0].max()]
    ys = [waypoints[:, 1].min(), waypoints[:, 1].max(), track[:, 1].min(), track[:, 1].max()]
    for patch in scenario.patches:
        bx0, by0, bx1, by1 = _shape_bounds(patch.shape)
        xs += [bx0, bx1]
        ys += [by0, by1]
    margin = 1.0
    x_min, x_max = min(xs) - margin, max(xs) + margin
    y_min, y_max = min(ys) - margin, max(ys) + margin
    width = max(2, int(round((x_max - x_min) * scale)))
    height = max(2, int(round((y_max - y_min) * scale)))

    def to_px(x: float, y: float) -> tuple[float, float]:
        return ((x - x_min) * scale, (y_max - y) * scale)  # world +y is up

    img = Image.new("RGB", (width, height), LABEL_COLORS[TerrainLabel.BACKGROUND])
    draw = ImageDraw.Draw(img)
    for patch in scenario.patches:
        color = LABEL_COLORS[patch.label]
        shape = patch.shape
        if isinstance(shape, Rect):
            draw.rectangle([to_px(shape.low[0], shape.high[1]), to_px(shape.high[0], shape.low[1])], fill=color)
        elif isinstance(shape, Circle):
            cx, cy = shape.center
            draw.ellipse(
                [to_px(cx - shape.radius, cy + shape.radius), to_px(cx + shape.radius, cy - shape.radius)],
                fill=color,
            )
        else:
            draw.polygon([to_px(x, y) for x, y in shape.vertices], fill=color)

    draw.line([to_px(x, y) for x, y in waypoints], fill=PATH_COLOR, width=2)
    gx, gy = scenario.reference_path.last
    radius = scenario.goal_radius * scale
    gpx, gpy = to_px(gx, gy)
    draw.ellipse([gpx - radius, gpy - radius, gpx + radius, gpy + radius], outline=PATH_COLOR, width=2)
    draw.line([to_px(x, y) for x, y in track], fill=TRACK_COLOR, width=3)
    spx, spy = to_px(track[0, 0], track[0, 1])
    draw.ellipse([spx - 5, spy - 5, spx + 5, spy + 5], fill=START_COLOR, outline=TRACK_COLOR, width=2)
    img.save(path)


if __name__ == "__main__":
    sys.exit(main())
