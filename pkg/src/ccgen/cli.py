"""Command-line entry points: generate, ablate, replay, validate, dump-scene."""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
from dataclasses import dataclass
from pathlib import Path

from . import factory
from .brain import RemoteClient
from .checker import voxelize_scene
from .errors import CCGenError, ConfigError, DivergenceDetected, IndexOutOfRange, UnknownTask
from .factory import ABLATION_ROWS, ALL_ON, Episode, Toggles
from .rollout import play
from .tasks import lookup, randomize_scene, registry

EXIT_OK = 0
EXIT_FAILED = 1  # replay divergence or spatial re-validation failure
EXIT_CONFIG = 2
EXIT_BELOW_THRESHOLD = 3

DUMP_VERSION = "ccgen.scene-dump/1"


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a dataset file's bytes (``jobs`` does not)."""

    task_ids: tuple[str, ...]
    seeds: tuple[int, ...]
    toggles: tuple[Toggles, ...] = (ALL_ON,)
    out: str | None = None
    planner: str = "scripted"
    endpoint: str | None = None
    jobs: int = 1
    min_success: float = 0.8

    def __post_init__(self):
        if not self.task_ids:
            raise ConfigError("no task selected")
        if not self.seeds:
            raise ConfigError("seed range is empty")
        for t in self.toggles:
            if not t.logical:
                raise ConfigError("logical constraints cannot be disabled")
        if self.planner not in ("scripted", "remote"):
            raise ConfigError(f"unknown planner {self.planner!r}")
        if self.planner == "remote" and not self.endpoint:
            raise ConfigError("--planner remote needs --endpoint")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")

    def jobs_list(self) -> list[tuple]:
        """Work items in output order: (task, toggles row, seed)."""
        return [(task, i, seed) for task in self.task_ids
                for i in range(len(self.toggles)) for seed in self.seeds]


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"A..B"`` is the half-open range ``[A, B)``; a bare integer is one seed."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return tuple(range(int(a), int(b)))
        return (int(text),)
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; expected A..B or N") from None


def parse_tasks(values) -> tuple[str, ...]:
    ids = []
    for v in values or ():
        for part in v.split(","):
            part = part.strip()
            if part == "all":
                ids.extend(t.task_id for t in registry())
            elif part:
                try:
                    ids.append(lookup(part).task_id)
                except UnknownTask as exc:
                    raise ConfigError(str(exc)) from None
    return tuple(dict.fromkeys(ids))


# ---------------------------------------------------------------------------
# batch execution

def _run_one(item) -> Episode:
    task_id, toggles, seed, planner, endpoint = item
    agent = RemoteClient(endpoint) if planner == "remote" else None
    return factory.generate_episode(task_id, seed, toggles, planner=agent)


def run_batch(config: RunConfig) -> list[Episode]:
    """Generate every (task, row, seed) episode; the result order ignores ``jobs``."""
    items = [(task, config.toggles[i], seed, config.planner, config.endpoint)
             for task, i, seed in config.jobs_list()]
    if config.jobs == 1 or len(items) == 1:
        return [_run_one(it) for it in items]
    with multiprocessing.get_context("fork").Pool(min(config.jobs, len(items))) as pool:
        # imap keeps submission order whatever order the workers finish in
        return list(pool.imap(_run_one, items, chunksize=1))


def summarize(episodes, toggles_rows) -> list[dict]:
    rows = []
    for task in dict.fromkeys(e.task_id for e in episodes):
        for tg in toggles_rows:
            eps = [e for e in episodes if e.task_id == task and e.toggles == tg]
            if eps:
                m = factory.measure(eps)
                rows.append({"task": task, "constraints": tg.label(), **m})
    return rows


def format_table(rows) -> str:
    head = f"{'task':<26} {'constraints':<11} {'n':>4} {'success_rate':>12} {'avg_episode_length':>18}"
    lines = [head, "-" * len(head)]
    for r in rows:
        avg = "-" if r["avg_episode_length"] is None else f"{r['avg_episode_length']:.1f}"
        lines.append(f"{r['task']:<26} {r['constraints']:<11} {r['episodes']:>4} "
                     f"{100 * r['success_rate']:>11.1f}% {avg:>18}")
    if any(r["episodes"] == 1 for r in rows):
        lines.append("note: n=1, rates are a single outcome")
    return "\n".join(lines)


def _finish(config: RunConfig, episodes, gate_rows) -> int:
    if config.out:
        factory.write_dataset(config.out, episodes)
    rows = summarize(episodes, config.toggles)
    print(format_table(rows))
    below = [r for r in rows if r["constraints"] in gate_rows and r["success_rate"] < config.min_success]
    for r in below:
        print(f"below threshold: {r['task']} [{r['constraints']}] {r['success_rate']:.3f} < {config.min_success}",
              file=sys.stderr)
    return EXIT_BELOW_THRESHOLD if below else EXIT_OK


def cmd_generate(config: RunConfig) -> int:
    episodes = run_batch(config)
    return _finish(config, episodes, {t.label() for t in config.toggles})


def cmd_ablate(config: RunConfig) -> int:
    config = RunConfig(config.task_ids, config.seeds, ABLATION_ROWS, config.out, config.planner,
                       config.endpoint, config.jobs, config.min_success)
    episodes = run_batch(config)
    return _finish(config, episodes, {ALL_ON.label()})


def cmd_replay(path: str, index: int) -> int:
    episodes = factory.read_dataset(path)
    if not 0 <= index < len(episodes):
        raise IndexOutOfRange(f"record {index} requested, file has {len(episodes)}")
    ep = episodes[index]
    try:
        report = factory.replay_episode(ep)
    except DivergenceDetected as exc:
        print(json.dumps({"task_id": ep.task_id, "seed": ep.seed, "identical": False,
                          "tick": exc.tick, "detail": exc.detail}))
        return EXIT_FAILED
    print(json.dumps(report))
    return EXIT_OK


def cmd_validate(path: str) -> int:
    """Re-check collision avoidance over every successful all-on record."""
    bad = 0
    checked = 0
    for i, ep in enumerate(factory.read_dataset(path)):
        if not ep.success or ep.toggles != ALL_ON:
            continue
        checked += 1
        report = factory.revalidate_spatial(ep)
        if not report.ok:
            bad += 1
            print(f"record {i} ({ep.task_id} seed {ep.seed}): {report.violation.reason}")
    print(f"{checked} episodes re-validated, {bad} with spatial violations")
    return EXIT_FAILED if bad else EXIT_OK


# ---------------------------------------------------------------------------
# scene dumps

def scene_at(task_id: str, seed: int, tick: int, toggles: Toggles = ALL_ON):
    """Scene of the generated episode after ``tick`` ticks (0 is the initial layout)."""
    scene = randomize_scene(lookup(task_id), seed)
    if tick < 0:
        raise IndexOutOfRange(f"tick {tick} is negative")
    if tick == 0:
        return scene
    ep = factory.generate_episode(task_id, seed, toggles)
    if tick > ep.total_ticks:
        raise IndexOutOfRange(f"tick {tick} is beyond the episode ({ep.total_ticks} ticks)")
    return play(scene, factory.stream_segments(ep), end=tick).frames[tick - 1].scene


def _tag(tag) -> str:
    kind, ident = tag
    return f"agent:{ident}" if kind == "agent" else f"object:{ident}"


def dump_scene(scene, fmt: str = "text") -> str:
    grid = voxelize_scene(scene)
    voxels = sorted(grid.occupied.items())
    if fmt == "json":
        doc = {
            "version": DUMP_VERSION, "tick": scene.tick, "voxel_size": grid.voxel_size,
            "agents": [{"id": a.agent_id, "joints": a.joints.as_array().tolist()} for a in scene.agents],
            "objects": [{"id": o.object_id, "position": list(o.pose.position),
                         "orientation": list(o.pose.orientation), "holders": list(o.holders)}
                        for o in scene.objects],
            "voxels": [{"index": list(idx), "owners": sorted(_tag(t) for t in tags)} for idx, tags in voxels],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if fmt != "text":
        raise ConfigError(f"unknown dump format {fmt!r}")
    out = [f"# {DUMP_VERSION}", f"tick {scene.tick}", f"voxel_size {grid.voxel_size}"]
    for a in scene.agents:
        out.append("agent {} {}".format(a.agent_id, " ".join(repr(float(v)) for v in a.joints.as_array())))
    for o in scene.objects:
        vals = (*o.pose.position, *o.pose.orientation)
        holders = ",".join(str(h) for h in o.holders) or "-"
        out.append("object {} {} {}".format(o.object_id, " ".join(repr(float(v)) for v in vals), holders))
    for idx, tags in voxels:
        out.append("voxel {} {} {} {}".format(*idx, ",".join(sorted(_tag(t) for t in tags))))
    return "\n".join(out) + "\n"


def cmd_dump_scene(task_id: str, seed: int, tick: int, fmt: str, out: str | None,
                   toggles: Toggles = ALL_ON) -> int:
    text = dump_scene(scene_at(task_id, seed, tick, toggles), fmt)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccgen", description="Constraint-checked multi-arm episode generator.")
    sub = p.add_subparsers(dest="command", required=True)

    def batch_flags(sp, toggles: bool):
        sp.add_argument("--task", action="append", required=True,
                        help="task id, comma list or 'all'; repeatable")
        sp.add_argument("--seeds", default="0..50", help="half-open range A..B or a single seed")
        if toggles:
            sp.add_argument("--no-spatial", action="store_true")
            sp.add_argument("--no-temporal", action="store_true")
        sp.add_argument("--planner", choices=("scripted", "remote"), default="scripted")
        sp.add_argument("--endpoint")
        sp.add_argument("--out")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--min-success", type=float, default=0.8,
                        help="success-rate gate for exit code 3")

    batch_flags(sub.add_parser("generate", help="generate episodes"), True)
    batch_flags(sub.add_parser("ablate", help="run the four constraint rows"), False)

    sp = sub.add_parser("replay", help="regenerate one record and compare")
    sp.add_argument("path")
    sp.add_argument("--index", type=int, default=0)

    sp = sub.add_parser("validate", help="re-check collisions over a dataset file")
    sp.add_argument("path")

    sp = sub.add_parser("dump-scene", help="write voxel occupancy and poses at a tick")
    sp.add_argument("--task", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tick", type=int, default=0)
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--no-spatial", action="store_true")
    sp.add_argument("--no-temporal", action="store_true")
    sp.add_argument("--out")
    return p


def _config(args) -> RunConfig:
    toggles = Toggles(spatial=not getattr(args, "no_spatial", False),
                      temporal=not getattr(args, "no_temporal", False))
    return RunConfig(parse_tasks(args.task), parse_seeds(args.seeds), (toggles,), args.out,
                     args.planner, args.endpoint, args.jobs, args.min_success)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(_config(args))
        if args.command == "ablate":
            return cmd_ablate(_config(args))
        if args.command == "replay":
            return cmd_replay(args.path, args.index)
        if args.command == "validate":
            return cmd_validate(args.path)
        toggles = Toggles(spatial=not args.no_spatial, temporal=not args.no_temporal)
        return cmd_dump_scene(args.task, args.seed, args.tick, args.format, args.out, toggles)
    except (ConfigError, IndexOutOfRange, UnknownTask) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CCGenError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
