"""Command-line entry point.

Exit codes: 0 valid reading (or successful step), 2 invalid reading or
failed check, 3 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .audit import (
    PerceptionCache,
    RunManifest,
    analyze,
    candidate_stimuli,
    capture,
    read_checksum_file,
    replay,
    run_audit,
    select_stimuli,
    sha256_file,
    verify_inputs,
)
from .config import load_config, tomllib
from .gates import GateThresholds, compute_msgcap_stats, evaluate_gates, gate_report_json, gate_table_markdown
from .market import REGIMES, Market, generate_small_market
from .pairing import PAIRING_MODES, PairingIntegrityError, pair_up, read_raw_jsonl, write_raw_jsonl
from .providers.msgcap import Msgcap, msgcap_filename
from .providers.synthetic import ProducerConfig, ReaderConfig, SyntheticProducer, SyntheticReader
from .report import write_outputs
from .sweep import attribution_sweep, clipmap_csv, clip_binding_map, run_grid, write_grid
from .welfare import CHANNELS

logger = logging.getLogger("steeraudit")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INPUT = 3


class InputError(Exception):
    """Bad or missing input; maps to exit code 3."""


# -- shared helpers ---------------------------------------------------------

def _config(args):
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise InputError(f"config not found: {exc.filename}") from exc
    if args.n_perm is not None:
        cfg = cfg.with_overrides(**{"permutation.n_perm": args.n_perm})
    return cfg


def _window(args, cfg):
    try:
        return cfg.window(args.window, args.window_lower, args.window_upper, args.window_cap)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _json_files(path: Path, pattern: str) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(path.glob(pattern))
        if files:
            return files
    raise InputError(f"no input files at {path}")


def _load_markets(path) -> dict[str, Market]:
    try:
        markets = [Market.load(p) for p in _json_files(Path(path), "*.json")]
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"malformed market file under {path}: {exc}") from exc
    return {m.market_id: m for m in markets}


def _load_msgcaps(paths) -> list[Msgcap]:
    out = []
    for path in paths:
        for p in _json_files(Path(path), "*.jsonl"):
            try:
                out.append(Msgcap.load(p))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"malformed msgcap {p}: {exc}") from exc
    return out


def _load_pairs(args):
    path = Path(args.pairs)
    if not path.is_file():
        raise InputError(f"pairs file not found: {path}")
    records, ingest = read_raw_jsonl(path)
    if not records:
        raise InputError(f"no usable records in {path}")
    try:
        result = pair_up(records, args.pairing)
    except PairingIntegrityError as exc:
        raise InputError(str(exc)) from exc
    if not result.pairs:
        raise InputError(f"no complete pairs in {path}")
    return result, ingest, sha256_file(path)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _producer(args):
    return SyntheticProducer(ProducerConfig(
        steering_strength=args.steering, refusal_rate=args.refusal_rate,
        template_collapse=args.template_collapse, id_leak_rate=args.id_leak_rate, seed=args.seed,
    ))


def _reader(args):
    return SyntheticReader(ReaderConfig(noise_sd=args.noise_sd, seed=args.seed,
                                        failure_rate=args.failure_rate))


def _remote(kind: str):
    from .providers.remote import EndpointConfig, RemoteProducer, RemoteReader
    cfg = EndpointConfig.from_env()
    return RemoteProducer(cfg) if kind == "producer" else RemoteReader(cfg)


def _reading_exit(outcome) -> int:
    r = outcome.reading
    print(f"{r.point.label()} RD {outcome.deployed.row()['rd_pp']:+.2f}pp  b/c {r.counts.b}/{r.counts.c}  "
          f"n {r.n}  McNemar p {outcome.deployed.row()['mcnemar_p']:.4f}  perm p {r.permutation.p_display()}  "
          f"{'VALID' if r.valid else 'INVALID'}")
    for reason in r.invalid_reasons:
        print(f"  invalid: {reason}")
    return EXIT_OK if r.valid else EXIT_INVALID


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    regimes = REGIMES if args.regime == "both" else (args.regime,)
    for i in range(args.n_markets):
        for regime in regimes:
            path = generate_small_market(args.seed + i, regime).save(out)
            logger.info("wrote %s", path)
    print(f"{args.n_markets * len(regimes)} markets -> {out}")
    return EXIT_OK


def cmd_produce(args) -> int:
    markets = _load_markets(args.markets)
    producer = _remote("producer") if args.provider == "remote" else _producer(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    caps = capture(markets.values(), producer, episode_seeds=tuple(range(args.episodes)), condition=args.condition)
    for cap in caps:
        cap.save(out / msgcap_filename(cap.scenario_id, cap.condition, cap.signal_weight, cap.episode_seed))
    print(f"{len(caps)} msgcaps -> {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    markets = _load_markets(args.markets)
    caps = _load_msgcaps([args.msgcaps])
    try:
        stimuli = select_stimuli(candidate_stimuli(caps, markets), _window(args, cfg))
    except KeyError as exc:
        raise InputError(str(exc)) from exc
    reader = _remote("reader") if args.provider == "remote" else _reader(args)
    cache = PerceptionCache(args.cache) if args.cache else None
    rep = replay(stimuli, markets, reader, cache, args.workers)
    write_raw_jsonl(rep.records, args.out)
    _write_json(Path(args.out).with_suffix(".replay.json"), {"stimuli": len(stimuli), **rep.manifest()})
    print(f"{len(stimuli)} stimuli, {rep.successes}/{rep.calls} perceptions parsed -> {args.out}")
    return EXIT_OK


def cmd_pair(args) -> int:
    result, ingest, digest = _load_pairs(args)
    records = [r for p in result.pairs for r in (p.original, p.factual)]
    write_raw_jsonl(records, args.out)
    _write_json(Path(args.out).with_suffix(".pairing.json"),
                {**result.manifest(), "input_sha256": digest, "n_pairs": len(result.pairs)})
    print(f"{len(result.pairs)} pairs ({args.pairing}), {result.singletons} singletons dropped -> {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    result, ingest, _ = _load_pairs(args)
    grid = run_grid(result.pairs, cfg.grid, cfg.coefficients, cfg.floor_fraction, ingest.parse_success,
                    cfg.validity, cfg.alpha)
    write_grid(grid.cells, args.out)
    peak = grid.peak()
    print(f"{len(grid.cells)} cells -> {args.out}; max RD "
          f"{'n/a' if peak is None else format(float(peak.rd) * 100, '+.2f') + 'pp at ' + peak.point.label()}")
    return EXIT_OK


def cmd_attribution(args) -> int:
    cfg = _config(args)
    result, ingest, _ = _load_pairs(args)
    channels = CHANNELS if args.channel == "all" else (args.channel,)
    rows = attribution_sweep(result.pairs, cfg.grid, cfg.coefficients, cfg.floor_fraction, channels,
                             ingest.parse_success, cfg.validity)
    for row in rows:
        print(row.describe())
    if args.out:
        _write_json(args.out, {"attribution": [r.to_dict() for r in rows]})
    return EXIT_OK


def cmd_clipmap(args) -> int:
    cfg = _config(args)
    result, _, _ = _load_pairs(args)
    text = clipmap_csv(clip_binding_map(result.pairs, cfg.grid, cfg.coefficients, cfg.floor_fraction))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gates(args) -> int:
    cfg = _config(args)
    caps = _load_msgcaps(args.msgcap)
    markets = _load_markets(args.market) if args.market else None
    thresholds = cfg.gate_thresholds
    if args.thresholds:
        p = Path(args.thresholds)
        if not p.is_file():
            raise InputError(f"thresholds file not found: {p}")
        data = tomllib.loads(p.read_text(encoding="utf-8"))
        thresholds = GateThresholds.from_mapping({**cfg.data["gates"], **data.get("gates", data)})
    gv = evaluate_gates(compute_msgcap_stats(caps, markets), thresholds)
    rows = [(args.label, gv)]
    print(gate_table_markdown(rows), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gates.md").write_text(gate_table_markdown(rows), encoding="utf-8")
        (out / "gates.json").write_text(gate_report_json(rows), encoding="utf-8")
    return EXIT_OK if gv.ok else EXIT_INVALID


def _analyze_file(args, cfg):
    result, ingest, digest = _load_pairs(args)
    manifest = RunManifest(
        seeds={"permutation": args.seed if args.seed is not None else cfg.perm_seed},
        window={"name": "as ingested"},
        pairing=result.manifest(),
        grid=cfg.grid.to_dict(),
        providers={},
        config=cfg.manifest(),
        inputs={os.path.relpath(Path(args.pairs).resolve(), Path(args.out).resolve()): digest},
        extra={"ingest": ingest.manifest()},
    )
    return analyze(result.pairs, cfg, manifest, ingest.parse_success, None, cfg.n_perm,
                   args.seed if args.seed is not None else cfg.perm_seed, args.exhaustive, args.flip_unit)


def cmd_report(args) -> int:
    cfg = _config(args)
    outcome = _analyze_file(args, cfg)
    out = write_outputs(outcome, args.out)
    print(f"report -> {out / 'report.md'}")
    return _reading_exit(outcome)


def cmd_ingest(args) -> int:
    path = Path(args.raw)
    if not path.is_file():
        raise InputError(f"raw file not found: {path}")
    records, ingest = read_raw_jsonl(path)
    if not records:
        raise InputError(f"no usable records in {path}")
    write_raw_jsonl(records, args.out)
    manifest = {"source": path.name, "source_sha256": sha256_file(path), **ingest.manifest(),
                "output_sha256": sha256_file(args.out)}
    _write_json(Path(args.out).with_suffix(".ingest.json"), manifest)
    print(f"{ingest.records}/{ingest.lines} records ingested ({ingest.malformed} malformed, "
          f"{ingest.out_of_range} out of range) -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    p = Path(args.checksums)
    if not p.is_file():
        raise InputError(f"checksum file not found: {p}")
    try:
        entries = read_checksum_file(p)
    except (ValueError, KeyError) as exc:
        raise InputError(f"unreadable checksum file {p}: {exc}") from exc
    rows = verify_inputs(entries)
    for path, status in rows:
        print(f"{status:8s} {path}")
    return EXIT_OK if all(s == "OK" for _, s in rows) else EXIT_INVALID


def cmd_audit(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    markets = [generate_small_market(seed + i, r) for i in range(args.n_markets) for r in REGIMES]
    producer = _remote("producer") if args.provider == "remote" else _producer(args)
    reader = _remote("reader") if args.provider == "remote" else _reader(args)
    outcome = run_audit(markets, producer, reader, cfg, _window(args, cfg), args.pairing, args.out,
                        n_perm=cfg.n_perm, exhaustive=args.exhaustive, flip_unit=args.flip_unit,
                        workers=args.workers)
    print(f"report -> {Path(args.out) / 'report.md'}")
    return _reading_exit(outcome)


# -- parser -----------------------------------------------------------------

def _add_synthetic(p, producer=True, reader=True) -> None:
    p.add_argument("--provider", choices=("synthetic", "remote"), default="synthetic")
    if producer:
        p.add_argument("--steering", type=float, default=0.0, help="synthetic steering strength in [0, 1]")
        p.add_argument("--refusal-rate", type=float, default=0.0)
        p.add_argument("--id-leak-rate", type=float, default=0.0)
        p.add_argument("--template-collapse", action="store_true")
    if reader:
        p.add_argument("--noise-sd", type=float, default=0.0)
        p.add_argument("--failure-rate", type=float, default=0.0)


GLOBAL_DEFAULTS = {
    "seed": None, "config": None, "pairing": "tuple3", "window": "diagnostic", "window_lower": None,
    "window_upper": None, "window_cap": None, "n_perm": None, "exhaustive": False, "flip_unit": "cluster",
    "verbose": False,
}


def parse_args(argv=None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    # the parsers share Action objects, so defaults are filled here rather than via set_defaults
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    return args


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; SUPPRESS keeps a
    # subcommand from overwriting a value given at the top level
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--config", default=S, help="TOML file merged over the frozen defaults")
    common.add_argument("--pairing", choices=PAIRING_MODES, default=S)
    common.add_argument("--window", choices=("diagnostic", "custom"), default=S)
    common.add_argument("--window-lower", type=float, default=S)
    common.add_argument("--window-upper", type=float, default=S)
    common.add_argument("--window-cap", type=int, default=S)
    common.add_argument("--n-perm", type=int, default=S)
    common.add_argument("--exhaustive", action="store_true", default=S, help="enumerate every sign flip")
    common.add_argument("--flip-unit", choices=("cluster", "pair"), default=S)
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    parser = argparse.ArgumentParser(prog="steeraudit", parents=[common],
                                     description="Paired counterfactual commission-steering audit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "generate synthetic markets")
    p.add_argument("--n-markets", type=int, default=10)
    p.add_argument("--regime", choices=REGIMES + ("both",), default="both")
    p.add_argument("--out", required=True)

    p = add("produce", cmd_produce, "capture producer messages for every market")
    p.add_argument("--markets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--condition", default="commission")
    p.add_argument("--episodes", type=int, default=3)
    _add_synthetic(p, reader=False)

    p = add("replay", cmd_replay, "select stimuli and read both variants")
    p.add_argument("--markets", required=True)
    p.add_argument("--msgcaps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--workers", type=int, default=1)
    _add_synthetic(p, producer=False)

    p = add("pair", cmd_pair, "pair original and factual records")
    p.add_argument("--pairs", required=True, help="raw episode JSONL")
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "evaluate the governance grid")
    p.add_argument("--pairs", required=True)
    p.add_argument("--grid", choices=("default",), default="default")
    p.add_argument("--out", default="grid.csv")

    p = add("attribution", cmd_attribution, "coefficient-zero attribution")
    p.add_argument("--pairs", required=True)
    p.add_argument("--channel", choices=CHANNELS + ("all",), default="all")
    p.add_argument("--out", default=None)

    p = add("clipmap", cmd_clipmap, "clip-binding fraction per grid cell")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", default=None)

    p = add("gates", cmd_gates, "six-gate producer text audit")
    p.add_argument("--msgcap", required=True, nargs="+")
    p.add_argument("--market", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--label", default="producer")
    p.add_argument("--out", default=None)

    p = add("report", cmd_report, "analyse a raw episode JSONL and write the report")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)

    p = add("ingest", cmd_ingest, "normalise a released raw JSONL")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)

    p = add("verify", cmd_verify, "check input checksums")
    p.add_argument("--checksums", required=True, help="sha256sum file or manifest.json")

    p = add("audit", cmd_audit, "end-to-end run with all intermediates")
    p.add_argument("--n-markets", type=int, default=40)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_synthetic(p)
    return parser


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("generate", "produce", "replay", "audit") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
