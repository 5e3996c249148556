"""Command-line pipeline: gen-data, train, eval, sweep, simulate, gradcheck.

Every command materializes its full configuration (flags override an optional
``key=value`` config file; ``FIEDLER_SEED`` is the seed fallback) and writes a
JSON manifest next to its outputs, so any artifact can be reproduced exactly.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import dataset_text, generate_dataset, load_dataset
from .graphs import GraphGenConfig, MAX_NODES, MIN_NODES, generate_connected_graph
from .model import grad_check, init_params, load_params, save_params
from .simulation import NodeEstimateReport, run_simulation, run_simulation_with_drop
from .spectral import algebraic_connectivity
from .training import (
    Metrics,
    TrainConfig,
    evaluate,
    generalization_sweep,
    train,
    write_metrics,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    """Everything needed to re-run a command and reproduce its outputs."""

    command: str
    version: str
    seed: int
    config: dict
    inputs: list
    outputs: list

    def json_text(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def _write_manifest(manifest: RunManifest, path: Path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(manifest.json_text())


def _load_config_file(path) -> dict:
    conf = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            conf[key.strip()] = value.strip()
    return conf


def _pick(flag_value, conf: dict, key: str, cast, default):
    if flag_value is not None:
        return flag_value
    if key in conf:
        try:
            return cast(conf[key])
        except ValueError as exc:
            raise UsageError(f"config file: bad value for {key}: {conf[key]!r}") from exc
    return default


def _pick_seed(flag_value, conf: dict) -> int:
    if flag_value is not None:
        return flag_value
    if "seed" in conf:
        return int(conf["seed"])
    env = os.environ.get("FIEDLER_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"FIEDLER_SEED is not an integer: {env!r}") from exc
    return 0


def _guard_output(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _parse_sizes(text: str) -> list[int]:
    sizes: list[int] = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        if ".." in token:
            lo, _, hi = token.partition("..")
            sizes.extend(range(int(lo), int(hi) + 1))
        else:
            sizes.append(int(token))
    if not sizes:
        raise UsageError("--sizes must list at least one size")
    return sizes


def _parse_edges(text: str) -> list[tuple[int, int]]:
    edges = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        i, sep, j = token.partition("-")
        if not sep:
            raise UsageError(f"bad edge {token!r}; expected i-j")
        edges.append((int(i), int(j)))
    return edges


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    count = _pick(args.count, conf, "count", int, 1000)
    n_min = _pick(args.n_min, conf, "n-min", int, 9)
    n_max = _pick(args.n_max, conf, "n-max", int, 11)
    p_min = _pick(args.p_min, conf, "p-min", float, 0.16)
    p_max = _pick(args.p_max, conf, "p-max", float, 0.95)
    seed = _pick_seed(args.seed, conf)
    if count < 1:
        raise UsageError("--count must be >= 1")
    try:
        cfg = GraphGenConfig(n_range=(n_min, n_max), p_range=(p_min, p_max), seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    _guard_output(out, args.force)
    ds = generate_dataset(cfg, count)
    _atomic_write(out, dataset_text(ds))
    manifest = RunManifest(
        command="gen-data",
        version=__version__,
        seed=seed,
        config={
            "count": count,
            "n_min": n_min,
            "n_max": n_max,
            "p_min": p_min,
            "p_max": p_max,
        },
        inputs=[],
        outputs=[str(out)],
    )
    _write_manifest(manifest, out.with_name(out.name + ".manifest.json"))
    print(f"wrote {count} labeled graphs to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    rounds = _pick(args.rounds, conf, "T", int, 4)
    mode = _pick(args.mode, conf, "mode", str, "local")
    hidden = _pick(args.hidden, conf, "hidden", int, 32)
    epochs = _pick(args.epochs, conf, "epochs", int, 20)
    lr = _pick(args.lr, conf, "lr", float, 1e-3)
    batch = _pick(args.batch, conf, "batch", int, 256)
    seed = _pick_seed(args.seed, conf)
    try:
        config = TrainConfig(
            rounds=rounds,
            mode=mode,
            hidden_size=hidden,
            epochs=epochs,
            learning_rate=lr,
            batch_size=batch,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out_dir = Path(args.out_dir)
    final_ckpt = out_dir / "checkpoint.txt"
    _guard_output(final_ckpt, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = load_dataset(args.train_data)
    val_set = load_dataset(args.val_data)
    sizes = [g.n for g in train_set.graphs()]
    train_n_range = [min(sizes), max(sizes)]

    params, metrics = train(config, train_set, val_set, checkpoint_dir=out_dir)
    save_params(params, final_ckpt, mode=mode, rounds=rounds)
    metrics_path = out_dir / "metrics.csv"
    write_metrics(metrics, metrics_path)

    manifest = RunManifest(
        command="train",
        version=__version__,
        seed=seed,
        config={
            "T": rounds,
            "mode": mode,
            "hidden": hidden,
            "epochs": epochs,
            "lr": lr,
            "batch": batch,
            "train_count": len(train_set),
            "val_count": len(val_set),
            "train_n_range": train_n_range,
        },
        inputs=[str(args.train_data), str(args.val_data)],
        outputs=[str(final_ckpt), str(metrics_path)],
    )
    _write_manifest(manifest, out_dir / "manifest.json")
    last = metrics.rows[-1]
    print(
        f"trained {epochs} epochs: train_l2={last.train_l2:.6g} "
        f"val_l1={last.val_l1:.6g} val_l2={last.val_l2:.6g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_checkpoint(path, want_mode=None, want_hidden=None, want_rounds=None):
    params, meta = load_params(path)
    mode = meta.get("mode")
    if want_mode is not None:
        if mode is not None and mode != want_mode:
            raise UsageError(
                f"--mode {want_mode} conflicts with checkpoint mode {mode}"
            )
        mode = want_mode
    if mode is None:
        raise UsageError("checkpoint has no mode metadata; pass --mode")
    if want_hidden is not None and want_hidden != params.hidden_size:
        raise UsageError(
            f"--hidden {want_hidden} conflicts with checkpoint H={params.hidden_size}"
        )
    rounds = want_rounds if want_rounds is not None else (
        int(meta["T"]) if "T" in meta else None
    )
    return params, mode, rounds


def _cmd_eval(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    rounds_flag = _pick(args.rounds, conf, "T", int, None)
    params, mode, rounds = _load_checkpoint(
        args.checkpoint, args.mode, args.hidden, rounds_flag
    )
    if rounds is None:
        raise UsageError("checkpoint has no T metadata; pass --T")
    dataset = load_dataset(args.data)
    mean_l1, mean_l2 = evaluate(params, dataset, rounds, mode)
    print(f"l1={mean_l1:.17g} l2={mean_l2:.17g}")
    if args.out:
        out = Path(args.out)
        _guard_output(out, args.force)
        _atomic_write(out, f"l1,l2\n{mean_l1:.17g},{mean_l2:.17g}\n")
        manifest = RunManifest(
            command="eval",
            version=__version__,
            seed=0,
            config={"T": rounds, "mode": mode},
            inputs=[str(args.checkpoint), str(args.data)],
            outputs=[str(out)],
        )
        _write_manifest(manifest, out.with_name(out.name + ".manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _cmd_sweep(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    sizes = _parse_sizes(_pick(args.sizes, conf, "sizes", str, ""))
    per_size = _pick(args.per_size, conf, "per-size", int, 1000)
    p_min = _pick(args.p_min, conf, "p-min", float, 0.16)
    p_max = _pick(args.p_max, conf, "p-max", float, 0.95)
    seed = _pick_seed(args.seed, conf)
    if per_size < 1:
        raise UsageError("--per-size must be >= 1")
    for n in sizes:
        if not MIN_NODES <= n <= MAX_NODES:
            raise UsageError(f"size {n} outside [{MIN_NODES}, {MAX_NODES}]")

    rounds_flag = _pick(args.rounds, conf, "T", int, None)
    params, mode, rounds = _load_checkpoint(
        args.checkpoint, args.mode, args.hidden, rounds_flag
    )
    if rounds is None:
        raise UsageError("checkpoint has no T metadata; pass --T")

    manifest_path = (
        Path(args.train_manifest)
        if args.train_manifest
        else Path(args.checkpoint).with_name("manifest.json")
    )
    with open(manifest_path, "r", encoding="ascii") as fh:
        train_manifest = json.load(fh)
    n_lo, n_hi = train_manifest["config"]["train_n_range"]

    try:
        gen_cfg = GraphGenConfig(
            n_range=(min(sizes), max(sizes)), p_range=(p_min, p_max), seed=seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = generalization_sweep(params, sizes, per_size, gen_cfg, rounds, mode)

    lines = ["n,mean_l1,count,in_train_range"]
    for n, mean_l1, count in rows:
        flag = 1 if n_lo <= n <= n_hi else 0
        lines.append(f"{n},{mean_l1:.17g},{count},{flag}")
    text = "\n".join(lines) + "\n"
    print(text, end="")

    out = Path(args.out)
    _guard_output(out, args.force)
    _atomic_write(out, text)
    manifest = RunManifest(
        command="sweep",
        version=__version__,
        seed=seed,
        config={
            "sizes": sizes,
            "per_size": per_size,
            "p_min": p_min,
            "p_max": p_max,
            "T": rounds,
            "mode": mode,
            "train_n_range": [n_lo, n_hi],
        },
        inputs=[str(args.checkpoint), str(manifest_path)],
        outputs=[str(out)],
    )
    _write_manifest(manifest, out.with_name(out.name + ".manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    n = _pick(args.n, conf, "n", int, 8)
    p_min = _pick(args.p_min, conf, "p-min", float, 0.16)
    p_max = _pick(args.p_max, conf, "p-max", float, 0.95)
    seed = _pick_seed(args.seed, conf)
    rounds_flag = _pick(args.rounds, conf, "T", int, None)

    params, meta = load_params(args.checkpoint)
    mode = meta.get("mode")
    if mode != "local":
        raise UsageError(
            "simulate needs a local-mode checkpoint (per-node readout); "
            f"this one is mode={mode}"
        )
    rounds = rounds_flag if rounds_flag is not None else (
        int(meta["T"]) if "T" in meta else 8
    )

    try:
        cfg = GraphGenConfig(n_range=(n, n), p_range=(p_min, p_max), seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    g = generate_connected_graph(cfg, 0)

    if args.drop_edges:
        dropped = _parse_edges(args.drop_edges)
        from_round = args.drop_from if args.drop_from is not None else 1
        try:
            estimates = run_simulation_with_drop(params, g, rounds, dropped, from_round)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        trace = None
    else:
        estimates, trace = run_simulation(params, g, rounds)
    truth = algebraic_connectivity(g)
    report = NodeEstimateReport(
        true_lambda2=truth,
        estimates=estimates,
        errors=np.abs(estimates - truth),
    )

    for line in report.text_lines():
        print(line)

    outputs = []
    if args.out:
        out = Path(args.out)
        _guard_output(out, args.force)
        _atomic_write(out, report.csv_text())
        outputs.append(str(out))
    if args.trace:
        if trace is None:
            raise UsageError("--trace is not available together with --drop-edges")
        trace_path = Path(args.trace)
        _guard_output(trace_path, args.force)
        header = "round,sender,receiver," + ",".join(
            f"m{k}" for k in range(params.hidden_size)
        )
        lines = [header]
        for rnd_index, record in enumerate(trace.rounds, start=1):
            for sender, receiver, payload in record.messages:
                payload_text = ",".join(f"{v:.17g}" for v in payload)
                lines.append(f"{rnd_index},{sender},{receiver},{payload_text}")
        _atomic_write(trace_path, "\n".join(lines) + "\n")
        outputs.append(str(trace_path))

    if outputs:
        manifest = RunManifest(
            command="simulate",
            version=__version__,
            seed=seed,
            config={
                "n": n,
                "T": rounds,
                "p_min": p_min,
                "p_max": p_max,
                "drop_edges": args.drop_edges or "",
                "drop_from": args.drop_from,
            },
            inputs=[str(args.checkpoint)],
            outputs=outputs,
        )
        _write_manifest(
            manifest, Path(outputs[0]).with_name(Path(outputs[0]).name + ".manifest.json")
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


# Instance grid for the gradient check: (n, T, graph_seed, param_seed) per
# mode, covering n in {4..6} and T in {2,3}. Seeds are pinned to instances
# whose smallest gradient coordinates stay well clear of central-difference
# noise at epsilon=1e-5 (the analytic gradients themselves are exact; tiny
# coordinates just make the finite-difference comparison ill-conditioned).
GRADCHECK_INSTANCES = {
    "local": [
        (4, 2, 342, 942),
        (4, 3, 1343, 1943),
        (5, 2, 352, 952),
        (5, 3, 2353, 2953),
        (6, 2, 2362, 2962),
        (6, 3, 363, 963),
    ],
    "global": [
        (4, 2, 342, 942),
        (4, 3, 2343, 2943),
        (5, 2, 352, 952),
        (5, 3, 4353, 4953),
        (6, 2, 3362, 3962),
        (6, 3, 363, 963),
    ],
}


def _cmd_gradcheck(args) -> int:
    conf = _load_config_file(args.config) if args.config else {}
    hidden = _pick(args.hidden, conf, "hidden", int, 8)
    epsilon = _pick(args.epsilon, conf, "epsilon", float, 1e-5)
    seed = _pick_seed(args.seed, conf)
    if epsilon <= 0:
        raise UsageError("--epsilon must be positive")

    ok = True
    for mode in ("local", "global"):
        worst = 0.0
        for i, (n, rounds, graph_seed, param_seed) in enumerate(GRADCHECK_INSTANCES[mode]):
            cfg = GraphGenConfig(
                n_range=(n, n), p_range=(0.5, 0.9), seed=graph_seed + seed
            )
            g = generate_connected_graph(cfg, 0)
            params = init_params(hidden, param_seed + seed)
            err = grad_check(
                params, g, rounds, mode, epsilon=epsilon,
                corrupt=args.corrupt and i == 0,
            )
            worst = max(worst, err)
        passed = worst <= GRADCHECK_TOL
        ok = ok and passed
        print(
            f"gradcheck mode={mode} max_rel_err={worst:.3e} "
            f"tol={GRADCHECK_TOL:g} {'PASS' if passed else 'FAIL'}"
        )
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int, help="RNG seed (fallback: FIEDLER_SEED, then 0)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> _Parser:
    parser = _Parser(prog="fiedler", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled random-graph dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train an estimator on labeled datasets")
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--T", dest="rounds", type=int)
    p.add_argument("--mode", choices=("local", "global"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="mean errors of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--T", dest="rounds", type=int)
    p.add_argument("--mode", choices=("local", "global"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="error as a function of graph size")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sizes", help="e.g. 9,10,11 or 7..13")
    p.add_argument("--per-size", type=int)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--T", dest="rounds", type=int)
    p.add_argument("--mode", choices=("local", "global"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--train-manifest")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("simulate", help="run agents on a random graph and report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--T", dest="rounds", type=int)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--drop-edges", help="edges to silence, e.g. 0-1,2-3")
    p.add_argument("--drop-from", type=int, help="first round the drop applies to")
    p.add_argument("--trace", help="write per-message trace CSV here")
    p.add_argument("--out", help="write the per-node report CSV here")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gradcheck", help="compare gradients to finite differences")
    p.add_argument("--hidden", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--corrupt", action="store_true",
                   help="damage one gradient entry (detector self-test)")
    _add_common(p)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
