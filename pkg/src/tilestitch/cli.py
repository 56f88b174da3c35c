"""``tilestitch`` command line.

Every command that writes files also writes ``manifest.json`` to its output
directory with all inputs, seeds and derived parameters, so a run can be
repeated exactly.  Exit codes: 0 ok, 2 usage, 3 format, 4 geometry,
5 coverage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (averaging_sweep, bench_patch_sizes, correlation_matrix, edge_error_profile)
from .errors import TileStitchError
from .net import geometry, init_weights, load_netspec, load_weights
from .raster import Raster, Window, read_ras1, write_pgm, write_ras1
from .stitcher import full_tile_forward, stitch
from .synth import synth_tile
from .tiler import coverage_map, parse_strategy, plan

EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _synth_params(text: str) -> dict[str, int]:
    """``w=256,h=256,rects=8,seed=1,channels=1``; w and h are required."""
    params = {"seed": 0, "channels": 1, "rects": 0}
    try:
        for tok in text.split(","):
            key, value = tok.split("=", 1)
            key = key.strip()
            if key not in ("w", "h", "seed", "channels", "rects"):
                raise ValueError(key)
            params[key] = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad synth parameters {text!r}") from None
    if "w" not in params or "h" not in params:
        raise argparse.ArgumentTypeError("synth parameters need w= and h=")
    return params


def _shift_list(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in pair.split(",")) for pair in text.split(";") if pair.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'di,dj;di,dj;...', got {text!r}") from None


def _add_net(p: argparse.ArgumentParser, weighted: bool = True) -> None:
    p.add_argument("--net", required=True, help="NETSPEC file or builtin:<name>")
    if weighted:
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--weights", type=Path, help="WTS1 weights file")
        g.add_argument("--seed", type=int, help="initialise weights from this seed")


def _add_tile(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--tile", type=Path, help="RAS1 input tile")
    g.add_argument("--synth", type=_synth_params, metavar="w=W,h=H[,rects=R,seed=S,channels=C]",
                   help="generate a synthetic tile instead of reading one")


def _add_out(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--out", type=Path, required=required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tilestitch", description="Tiled segmentation inference and stitching.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geom", help="report network geometry")
    _add_net(p, weighted=False)
    p.add_argument("--probe", type=int, help="input extent for the per-node size table")
    _add_out(p, required=False)

    p = sub.add_parser("synth", help="write a synthetic RAS1 tile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--rects", type=int, default=0)
    _add_out(p)

    for name, helptext in (("stitch", "patchwise inference and stitching"),
                           ("plan", "write a tile plan and its coverage map"),
                           ("edge-profile", "disagreement with the full-tile pass by patch-border distance")):
        p = sub.add_parser(name, help=helptext)
        _add_net(p, weighted=name != "plan")
        if name == "plan":
            p.add_argument("--size", required=True, help="tile size WxH")
        else:
            _add_tile(p)
        p.add_argument("--strategy", default="concat", help="concat | clip[:<c>] | avg:<stride>[:taper]")
        p.add_argument("--patch", type=int, help="inference patch input size")
        p.add_argument("--workers", type=int, default=1)
        _add_out(p)

    p = sub.add_parser("oracle", help="single full-tile forward pass")
    _add_net(p)
    _add_tile(p)
    _add_out(p)

    p = sub.add_parser("corr", help="translation correlation matrix")
    _add_net(p)
    _add_tile(p)
    p.add_argument("--region", type=_int_list, metavar="X,Y,W,H", help="default: centred 100x100")
    p.add_argument("--max-shift", type=int, default=32)
    _add_out(p)

    p = sub.add_parser("avg-sweep", help="IoU after averaging shifted stitchings")
    _add_net(p)
    _add_tile(p)
    p.add_argument("--patch", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--shifts", type=_shift_list, metavar="DI,DJ;...")
    g.add_argument("--shift-grid", type=int, metavar="K", help="(0,0) then every other shift in [0,K)^2")
    p.add_argument("--class-id", type=int, default=1)
    _add_out(p)

    p = sub.add_parser("bench", help="stitch timing per patch size")
    _add_net(p)
    _add_tile(p)
    p.add_argument("--sizes", type=_int_list, required=True, metavar="N,N,...")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    _add_out(p)
    return ap


def _load_net(args, manifest: dict):
    net = load_netspec(args.net)
    manifest["net"] = args.net
    manifest["netspec_sha256"] = hashlib.sha256(net.to_netspec().encode()).hexdigest()
    if getattr(args, "weights", None) is not None:
        manifest["weights"] = str(args.weights)
        return load_weights(net, args.weights)
    if getattr(args, "seed", None) is not None:
        manifest["seed"] = args.seed
        return init_weights(net, args.seed)
    return net


def _load_tile(args, manifest: dict) -> Raster:
    if args.tile is not None:
        manifest["tile"] = str(args.tile)
        return read_ras1(args.tile)
    s = args.synth
    manifest["synth"] = s
    return synth_tile(s["seed"], s["w"], s["h"], s["channels"], s["rects"])


def _patch_size(args, geom, tile_w: int, tile_h: int, manifest: dict) -> int:
    n = args.patch
    if n is None:
        n = geom.smallest_valid_size(min(128, tile_w, tile_h))
    manifest["patch"] = n
    return n


def _strategy(args, geom, n: int, manifest: dict):
    clip = geom.contamination_margin(n) if geom.is_valid_size(n) else None
    strategy = parse_strategy(args.strategy, default_clip=clip)
    manifest["strategy"] = str(strategy)
    return strategy


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (f"{v:.9g}" if isinstance(v, float) else v) for v in row])


def _u8_heatmap(values: np.ndarray, lo: float, hi: float) -> Raster:
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return Raster(np.rint(scaled).astype(np.uint8))


def cmd_geom(args, out: Path | None, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    geom = geometry(net)
    n = args.probe or geom.smallest_valid_size(64)
    lines = [f"{node.name} {node.op.__class__.__name__.lower()} channels={net.channels[node.name]} "
             f"stride={geom.maps[node.name].stride} size={size}"
             for node, size in zip(net.nodes, geom.node_sizes(n).values())]
    lines += [
        f"probe={n}",
        f"valid={int(geom.is_valid_size(n))}",
        f"output_size={geom.output_size(n)}",
        f"delta_tot={geom.delta_tot}",
        f"margin_in={geom.margin_in}",
        f"output_stride={geom.out_stride}",
        f"context_radius={geom.context_radius}",
        f"contamination_margin={geom.contamination_margin(n) if geom.is_valid_size(n) else 'n/a'}",
        f"valid_sizes_near_probe={','.join(map(str, geom.valid_sizes(n - 2 * geom.delta_tot, n + 2 * geom.delta_tot)))}",
    ]
    manifest["probe"] = n
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is not None:
        (out / "geom.txt").write_text(text, encoding="utf-8")
        return ["geom.txt"]
    return []


def cmd_synth(args, out: Path, manifest: dict) -> list[str]:
    tile = synth_tile(args.seed, args.width, args.height, args.channels, args.rects)
    manifest.update(seed=args.seed, width=args.width, height=args.height, channels=args.channels, rects=args.rects)
    write_ras1(tile, out / "tile.ras1")
    return ["tile.ras1"]


def _write_result(res, out: Path) -> list[str]:
    write_ras1(res.prob, out / "prob.ras1")
    write_ras1(res.labels, out / "labels.ras1")
    write_pgm(res.labels, out / "labels.pgm")
    (out / "timing.txt").write_text(res.timing.as_lines(), encoding="utf-8")
    sys.stdout.write(res.timing.as_lines())
    return ["prob.ras1", "labels.ras1", "labels.pgm", "timing.txt"]


def _make_plan(args, net, w: int, h: int, manifest: dict):
    geom = geometry(net)
    n = _patch_size(args, geom, w, h, manifest)
    p = plan(w, h, geom, n, _strategy(args, geom, n, manifest))
    manifest.update(alignment=p.alignment, margin_in=int(geom.margin_in), entries=len(p),
                    patch_output=p.patch_output_size, workers=getattr(args, "workers", 1))
    return p


def cmd_stitch(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    p = _make_plan(args, net, tile.width, tile.height, manifest)
    p.save(out / "plan.txt")
    return ["plan.txt"] + _write_result(stitch(tile, net, p, workers=args.workers), out)


def cmd_oracle(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    return _write_result(full_tile_forward(net, tile), out)


def cmd_plan(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    try:
        w, h = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must be WxH, got {args.size!r}") from None
    manifest["size"] = [w, h]
    p = _make_plan(args, net, w, h, manifest)
    p.save(out / "plan.txt")
    write_pgm(coverage_map(p), out / "coverage.pgm")
    print(f"entries={len(p)}")
    return ["plan.txt", "coverage.pgm"]


def cmd_edge_profile(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    p = _make_plan(args, net, tile.width, tile.height, manifest)
    manifest["contamination_margin"] = geometry(net).contamination_margin(p.patch_input_size)
    prof = edge_error_profile(net, tile, p)
    manifest["distance"] = "min over sides of distance to the pre-clip output patch border"
    _write_csv(out / "edge_profile.csv",
               ["d", "count", "label_errors", "label_rate", "score_errors", "score_rate"], prof.csv_rows())
    return ["edge_profile.csv"]


def cmd_corr(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    region = None
    if args.region is not None:
        if len(args.region) != 4:
            raise UsageError("--region needs X,Y,W,H")
        region = Window(*args.region)
    cm = correlation_matrix(net, tile, region, args.max_shift)
    manifest.update(max_shift=args.max_shift, reference=list(cm.reference), patch=cm.patch_size,
                    region=list(args.region) if region else "centred")
    _write_csv(out / "corr.csv", ["di", "dj", "correlation", "exact"], cm.csv_rows())
    write_pgm(_u8_heatmap(cm.values, -1.0, 1.0), out / "corr.pgm")
    return ["corr.csv", "corr.pgm"]


def cmd_avg_sweep(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    geom = geometry(net)
    if args.shifts:
        shifts = args.shifts
    else:
        k = args.shift_grid or geom.delta_tot
        shifts = [(0, 0)] + [(i, j) for i in range(k) for j in range(k) if (i, j) != (0, 0)]
    n = _patch_size(args, geom, tile.width, tile.height, manifest)
    manifest.update(shifts=[list(s) for s in shifts], class_id=args.class_id, strategy="concat")
    seq = averaging_sweep(net, tile, shifts, n, args.class_id)
    _write_csv(out / "avg_sweep.csv", ["k", "di", "dj", "iou"],
               [(k, di, dj, v) for k, ((di, dj), v) in enumerate(zip(shifts, seq), start=1)])
    return ["avg_sweep.csv"]


def cmd_bench(args, out: Path, manifest: dict) -> list[str]:
    net = _load_net(args, manifest)
    tile = _load_tile(args, manifest)
    manifest.update(sizes=args.sizes, runs=args.runs, workers=args.workers, strategy="concat")
    records = bench_patch_sizes(net, tile, args.sizes, args.runs, args.workers)
    _write_csv(out / "bench.csv", ["patch", "entries", "total_ms", "forward_ms", "handling_ms"],
               [(r.patch_size, r.entries, r.total_ms, r.forward_ms, r.handling_ms) for r in records])
    return ["bench.csv"]


COMMANDS = {
    "geom": cmd_geom, "synth": cmd_synth, "stitch": cmd_stitch, "oracle": cmd_oracle, "plan": cmd_plan,
    "edge-profile": cmd_edge_profile, "corr": cmd_corr, "avg-sweep": cmd_avg_sweep, "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    manifest: dict = {"command": args.command, "version": __version__}
    try:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, out, manifest)
    except TileStitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if out is not None:
        manifest["outputs"] = outputs
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
