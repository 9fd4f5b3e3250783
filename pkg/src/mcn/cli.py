"""Command-line front end: a thin client over ``mcn.pipeline``.

Exit codes: 0 on success, 1 on a validation or format error, 2 on a usage error.
"""

from __future__ import annotations

import base64
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click

from mcn import __version__
from mcn.boxgen import EXTENT_MODES, PcaBoxParams
from mcn.errors import FormatError, McnError
from mcn.formats import Scene, boxes_from_detections, loads_sfg, read_scene
from mcn.grid import GridShape
from mcn.mcl import TEST_CONFIG, TRAIN_CONFIG, ClusterAssignment, MclConfig
from mcn.pipeline import boxes_from_clusters, cluster_sfg, format_score, generate, score_detections

log = logging.getLogger("mcn")


@dataclass
class Settings:
    threads: int
    seed: int


def _settings(ctx: click.Context, threads: int | None = None, seed: int | None = None) -> Settings:
    base: Settings = ctx.find_root().obj
    return Settings(base.threads if threads is None else threads, base.seed if seed is None else seed)


def _overrides(f):
    """Per-subcommand --threads/--seed that fall back to the global values."""
    f = click.option("--seed", type=int, default=None, help="Override the global seed.")(f)
    f = click.option("--threads", type=click.IntRange(min=1), default=None, help="Override the global thread cap.")(f)
    return f


def _grid(ctx, param, value):
    if value is None:
        return None
    try:
        return GridShape.parse(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _int_range(ctx, param, value):
    try:
        lo, _, hi = value.partition("-")
        out = list(range(int(lo), int(hi or lo) + 1))
    except ValueError as exc:
        raise click.BadParameter(f"expected N or A-B, got {value!r}") from exc
    if not out or out[0] < 1:
        raise click.BadParameter(f"expected a non-empty range of positive integers, got {value!r}")
    return out


def _source(stream) -> str:
    name = getattr(stream, "name", "-")
    return "<stdin>" if name in ("<stdin>", "-") else str(name)


def _read_json(stream):
    try:
        return json.load(stream)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{_source(stream)}: not valid JSON ({exc})") from exc


def _emit_json(data, out) -> None:
    text = json.dumps(data, indent=2) + "\n"
    if out in (None, "-"):
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


def _post(server: str, path: str, payload: dict):
    import httpx

    try:
        resp = httpx.post(server.rstrip("/") + path, json=payload, timeout=120.0)
    except httpx.HTTPError as exc:
        raise McnError(f"request to {server}{path} failed: {exc}") from exc
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise McnError(f"server returned {resp.status_code}: {detail}")
    return resp.json()


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker thread cap.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for all randomness.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(__version__, prog_name="mcn")
@click.pass_context
def cli(ctx: click.Context, threads: int, seed: int, verbose: bool) -> None:
    """Markov clustering over stochastic flow graphs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    ctx.obj = Settings(threads, seed)


@cli.command()
@click.option("--grid", "shape", default="16x16", show_default=True, callback=_grid, help="Grid as RxC nodes.")
@click.option("--boxes", "box_range", default="1-3", show_default=True, callback=_int_range, help="Box count N or A-B.")
@click.option("--max-path", type=click.IntRange(min=1), default=6, show_default=True, help="Longest ground-truth walk.")
@click.option("--scene", "scene_path", type=click.Path(dir_okay=False), default="scene.json", show_default=True, help="Where to write the scene JSON.")
@click.option("--signals", "sig_path", type=click.Path(dir_okay=False), default=None, help="Also write oracle node signals (.sig).")
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default="-", show_default=True, help="Flow container (.sfg) destination.")
@_overrides
@click.pass_context
def gen(ctx, shape, box_range, max_path, scene_path, sig_path, out, threads, seed):
    """Synthesize a scene and write its ground-truth flows as .sfg."""
    s = _settings(ctx, threads, seed)
    g = generate(shape, s.seed, (box_range[0], box_range[-1]), max_path)
    Path(scene_path).write_text(json.dumps(g.scene_json, indent=2) + "\n")
    if sig_path:
        Path(sig_path).write_bytes(g.sig)
    if out == "-":
        stream = click.get_binary_stream("stdout")
        stream.write(g.sfg)
        stream.flush()
    else:
        Path(out).write_bytes(g.sfg)


@cli.command()
@click.argument("input", type=click.File("rb"), default="-")
@click.option("--iters", type=click.IntRange(min=1), default=TEST_CONFIG.max_iters, show_default=True)
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.15, show_default=True)
@click.option("--eps", type=click.FloatRange(0.0, min_open=True), default=1e-6, show_default=True, help="Early-stop tolerance.")
@click.option("--no-renorm", is_flag=True, help="Skip the final column renormalization.")
@click.option("--no-early-stop", is_flag=True, help="Always run all iterations.")
@click.option("--min-size", type=click.IntRange(min=1), default=1, show_default=True, help="Smallest cluster kept.")
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default="-", show_default=True)
@click.option("--server", default=None, help="Post to a running service instead of computing locally.")
@_overrides
@click.pass_context
def cluster(ctx, input, iters, threshold, eps, no_renorm, no_early_stop, min_size, out, server, threads, seed):
    """Cluster a flow container (.sfg) into attractor groups."""
    s = _settings(ctx, threads, seed)
    data = input.read()
    if server:
        result = _post(
            server,
            "/cluster",
            {
                "sfg_b64": base64.b64encode(data).decode("ascii"),
                "iters": iters,
                "threshold": threshold,
                "eps": eps,
                "renormalize": not no_renorm,
                "early_stop": not no_early_stop,
                "min_cluster_size": min_size,
            },
        )
    else:
        cfg = MclConfig(
            max_iters=iters,
            prune_threshold=threshold,
            convergence_eps=eps,
            final_renormalize=not no_renorm,
            early_stop=not no_early_stop,
            threads=s.threads,
        )
        result = cluster_sfg(data, cfg, source=_source(input), min_cluster_size=min_size)
    _emit_json(result, out)


@cli.command()
@click.argument("input", type=click.File("r"), default="-")
@click.option("--scale", type=click.FloatRange(0.0, min_open=True), default=1.75, show_default=True, help="Extent multiplier.")
@click.option("--extent", type=click.Choice(EXTENT_MODES), default="stddev", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default="-", show_default=True)
@click.option("--server", default=None, help="Post to a running service instead of computing locally.")
def boxes(input, scale, extent, out, server):
    """Fit a rotated box to every cluster of a cluster JSON."""
    data = _read_json(input)
    if server:
        result = _post(server, "/boxes", {"clusters": data, "scale": scale, "extent_mode": extent})
    else:
        result = boxes_from_clusters(data, PcaBoxParams(scale, extent))
    _emit_json(result, out)


@cli.command("eval")
@click.argument("input", type=click.File("r"), default="-")
@click.option("--scene", "scene_path", type=click.Path(dir_okay=False), default="scene.json", show_default=True, help="Ground-truth scene JSON.")
@click.option("--iou", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.5, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the full score as JSON.")
@click.option("--server", default=None, help="Post to a running service instead of computing locally.")
def eval_cmd(input, scene_path, iou, as_json, server):
    """Score detections against a ground-truth scene."""
    detections = _read_json(input)
    # opened only after stdin is drained, so an upstream `gen` has written it
    with open(scene_path) as f:
        scene = _read_json(f)
    if server:
        score = _post(server, "/eval", {"detections": detections, "scene": scene, "iou_threshold": iou})
    else:
        score = score_detections(detections, scene, iou)
    if as_json:
        _emit_json(score, "-")
    else:
        click.echo(format_score(score))


@cli.command()
@click.option("--grid", "shape", default="16x16", show_default=True, callback=_grid)
@click.option("--steps", type=click.IntRange(min=1), default=3000, show_default=True)
@click.option("--lr", type=click.FloatRange(0.0), default=1e-2, show_default=True)
@click.option("--momentum", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.9, show_default=True)
@click.option("--grad-mode", type=click.Choice(["exact", "paper"]), default="exact", show_default=True)
@click.option("--hidden", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="model.json", show_default=True)
@click.option("--history", type=click.Path(dir_okay=False), default=None, help="Write per-step losses as CSV.")
@click.option("--eval-scenes", type=click.IntRange(min=0), default=50, show_default=True, help="Held-out scenes scored after training.")
@click.option("--log-every", type=click.IntRange(min=0), default=0, help="Log mean loss every K steps (with -v).")
@_overrides
@click.pass_context
def train(ctx, shape, steps, lr, momentum, grad_mode, hidden, out, history, eval_scenes, log_every, threads, seed):
    """Train the toy predictor end to end through clustering."""
    from mcn.toy.scene import SceneConfig
    from mcn.toy.train import TrainConfig, evaluate_model, heldout_scenes
    from mcn.toy.train import train as run_train

    s = _settings(ctx, threads, seed)
    cfg = TrainConfig(
        scene=SceneConfig(rows=shape.rows, cols=shape.cols, stride=shape.stride),
        steps=steps,
        lr=lr,
        momentum=momentum,
        seed=s.seed,
        grad_mode="exact" if grad_mode == "exact" else "paper_approx",
        hidden=hidden,
        mcl=replace(TRAIN_CONFIG, threads=s.threads),
    )
    model, metrics = run_train(cfg, progress_every=log_every)
    model.save(out)
    hist = metrics["history"]
    if history:
        keys = list(hist[0])
        lines = [",".join(["step", *keys])]
        lines += [",".join([str(k), *(f"{h[c]:.8g}" for c in keys)]) for k, h in enumerate(hist)]
        Path(history).write_text("\n".join(lines) + "\n")
    window = max(1, min(100, len(hist) // 10))
    early = sum(h["C_total"] for h in hist[:window]) / window
    final = sum(h["C_total"] for h in hist[-window:]) / window
    click.echo(f"trained {steps} steps in {metrics['seconds']:.1f} s  C_total {early:.4f} -> {final:.4f}  model {out}")
    if eval_scenes:
        res = evaluate_model(model, heldout_scenes(cfg.scene, eval_scenes, s.seed), replace(TEST_CONFIG, threads=s.threads))
        sc = res.score
        click.echo(
            f"held-out {eval_scenes} scenes: precision {sc.precision:.4f}  recall {sc.recall:.4f}  "
            f"f_score {sc.f_score:.4f}  node_accuracy {res.node_accuracy:.4f}"
        )


@cli.command()
@click.option("--grid", "shape", default="4x4", show_default=True, callback=_grid)
@click.option("--iters", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--mode", type=click.Choice(["exact", "paper"]), default="exact", show_default=True)
@click.option("--eps", type=click.FloatRange(1e-7, 1e-3), default=1e-5, show_default=True, help="Finite-difference step.")
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True)
@click.option("--trials", type=click.IntRange(min=1), default=20, show_default=True)
@_overrides
@click.pass_context
def gradcheck(ctx, shape, iters, mode, eps, threshold, trials, threads, seed):
    """Compare clustering gradients with finite differences on random flows."""
    from mcn.mcl_grad import gradient_check

    s = _settings(ctx, threads, seed)
    grad_mode = "exact" if mode == "exact" else "paper_approx"
    checks = [gradient_check(shape, iters, grad_mode, s.seed + k, eps, threshold) for k in range(trials)]
    max_abs = max(c.max_abs for c in checks)
    max_rel = max(c.max_rel for c in checks)
    descent = sum(c.descent for c in checks) / trials
    if mode == "exact":
        ok = all(c.fd_ok for c in checks)
    else:
        ok = descent >= 0.95
    click.echo(f"mode {mode}  trials {trials}  max_abs {max_abs:.3e}  max_rel {max_rel:.3e}  descent {descent:.2f}")
    click.echo("PASS" if ok else "FAIL")
    if not ok:
        raise McnError(f"gradient check failed in {mode} mode")


@cli.command()
@click.option("--grid", "shape", default="32x32", show_default=True, callback=_grid)
@click.option("--iters", "iter_range", default="1-8", show_default=True, callback=_int_range, help="N or A-B.")
@click.option("--trials", type=click.IntRange(min=10), default=20, show_default=True)
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default="-", show_default=True, help="CSV destination.")
@_overrides
@click.pass_context
def bench(ctx, shape, iter_range, trials, threshold, out, threads, seed):
    """Time clustering against the iteration count and fit a line."""
    from mcn.bench import bench_mcl

    s = _settings(ctx, threads, seed)
    res = bench_mcl(shape, iter_range, trials, s.seed, threshold, s.threads)
    if out == "-":
        click.echo(res.to_csv(), nl=False)
    else:
        Path(out).write_text(res.to_csv())
    click.echo(res.summary())


@cli.command()
@click.option("--sfg", "sfg_file", type=click.File("rb"), default=None, help="Flow container to draw as edges.")
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Scene JSON; boxes drawn in red.")
@click.option("--clusters", "cluster_file", type=click.File("r"), default=None, help="Cluster JSON; nodes colored by cluster.")
@click.option("--detections", "det_file", type=click.File("r"), default=None, help="Detections JSON; boxes drawn in yellow.")
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default="-", show_default=True)
def render(sfg_file, scene_path, cluster_file, det_file, out):
    """Draw a scene, its flows, clusters and boxes as SVG."""
    from mcn.formats import grid_from_json
    from mcn.render import render_svg

    shape = flows = assignment = pred = gt = None
    if sfg_file is not None:
        flows, shape = loads_sfg(sfg_file.read(), _source(sfg_file))
    if cluster_file is not None:
        data = _read_json(cluster_file)
        assignment = ClusterAssignment.from_json(data)
        if shape is None and "grid" in data:
            shape = grid_from_json(data["grid"])
    if scene_path is not None:
        scene: Scene = read_scene(scene_path)
        gt = scene.boxes
        shape = shape or scene.grid
    if det_file is not None:
        pred = boxes_from_detections(_read_json(det_file))
    if shape is None:
        raise click.UsageError("need at least one of --sfg, --clusters (with grid) or --scene to size the drawing")
    svg = render_svg(shape, flows, assignment, pred, gt)
    if out == "-":
        click.echo(svg, nl=False)
    else:
        Path(out).write_text(svg)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=click.IntRange(1, 65535), default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("mcn.service.app:app", host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="mcn", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (McnError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
