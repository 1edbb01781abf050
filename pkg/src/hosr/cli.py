"""Command-line entry point: synth, stats, train, eval, gradcheck, attn-report.

Every command prints its resolved configuration before doing any work. Seeds
appear in every output filename.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

from . import checkpoint
from .data import DataFormatError, dataset_stats, load_dataset, split, synth_dataset, write_interactions, write_social
from .evaluation import attention_report, evaluate, write_attention_report_csv
from .grad import finite_diff_check, tiny_instance
from .graph import build_graph, propagation_matrix, write_census_csv
from .model import ATTENTION_MODES, DECAY_VARIANTS, forward, write_attention_csv
from .train import MODELS, TrainConfig, TrainingDivergedError, make_runner, train

EXIT_OK = 0
EXIT_INVALID = 1  # bad parameter values or inconsistent inputs
EXIT_USAGE = 2  # unknown or malformed flags (argparse)
EXIT_MISSING = 3  # input file not found
EXIT_FORMAT = 4  # unreadable data or checkpoint
EXIT_DIVERGED = 5  # NaN / inf during training
EXIT_GRADCHECK = 6  # gradient check over threshold

_DEFAULTS = TrainConfig()

# flag dest -> TrainConfig field
_TRAIN_FLAGS = {
    "seed": "seed", "model": "model", "layers": "k", "dim": "d", "lr": "lr", "lam": "lam",
    "batch": "batch", "epochs": "epochs", "p1": "p1", "p2": "p2", "attention": "attention",
    "decay": "decay", "k_eval": "k_eval", "ratio": "ratio", "eval_every": "eval_every",
}
_DATA_KEYS = ("interactions", "social")


class UsageError(ValueError):
    pass


def _default(field):
    return f"(default: {getattr(_DEFAULTS, field)})"


def _add_data_flags(p):
    p.add_argument("--interactions", help="user<TAB>item file (default: from --config)")
    p.add_argument("--social", help="user<TAB>user file (default: from --config)")


def _add_train_flags(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it (default: none)")
    p.add_argument("--seed", type=int, help=f"split, init and sampling seed {_default('seed')}")
    p.add_argument("--model", choices=MODELS, help=_default("model"))
    p.add_argument("--layers", type=int, help=f"propagation depth k {_default('k')}")
    p.add_argument("--dim", type=int, help=f"embedding size d {_default('d')}")
    p.add_argument("--lr", type=float, help=_default("lr"))
    p.add_argument("--lambda", dest="lam", type=float, help=f"L2 weight {_default('lam')}")
    p.add_argument("--batch", type=int, help=_default("batch"))
    p.add_argument("--epochs", type=int, help=_default("epochs"))
    p.add_argument("--p1", type=float, help=f"embedding dropout {_default('p1')}")
    p.add_argument("--p2", type=float, help=f"graph dropout {_default('p2')}")
    p.add_argument("--attention", choices=ATTENTION_MODES, help=_default("attention"))
    p.add_argument("--decay", choices=DECAY_VARIANTS, help=f"item-aggregation decay {_default('decay')}")
    p.add_argument("--k-eval", type=int, help=f"cutoff K for Recall/MAP {_default('k_eval')}")
    p.add_argument("--ratio", type=float, help=f"train fraction of the split {_default('ratio')}")
    p.add_argument("--eval-every", type=int, help=f"test-set monitoring period, 0 = off {_default('eval_every')}")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--threads", type=int, default=1, help="evaluation threads (default: 1)")
    _add_data_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hosr", description="High-order social recommender toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--users", type=int, default=1000, help="(default: 1000)")
    p.add_argument("--items", type=int, default=1500, help="(default: 1500)")
    p.add_argument("--exponent", type=float, default=2.3, help="social degree exponent (default: 2.3)")
    p.add_argument("--homophily", type=float, default=0.7, help="(default: 0.7)")
    p.add_argument("--avg-degree", type=float, default=10.0, help="(default: 10.0)")
    p.add_argument("--avg-interactions", type=float, default=20.0, help="(default: 20.0)")
    p.add_argument("--communities", type=int, default=1, help="planted social groups (default: 1)")
    p.add_argument("--mixing", type=float, default=0.1, help="share of cross-group ties (default: 0.1)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--out", default=".", help="output directory (default: .)")

    p = sub.add_parser("stats", help="dataset summary, degree histogram and k-order census")
    _add_data_flags(p)
    p.add_argument("--korder", type=int, default=3, help="largest neighbour order (default: 3)")
    p.add_argument("--ratio", type=float, default=_DEFAULTS.ratio, help=f"split for cold-user count {_default('ratio')}")
    p.add_argument("--seed", type=int, default=0, help="split seed (default: 0)")
    p.add_argument("--out", default=".", help="output directory (default: .)")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    p.add_argument("--groups", type=int, default=4, help="sparsity groups (default: 4)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0, help="first fixture seed (default: 0)")
    p.add_argument("--instances", type=int, default=5, help="(default: 5)")
    p.add_argument("--users", type=int, default=8, help="(default: 8)")
    p.add_argument("--items", type=int, default=10, help="(default: 10)")
    p.add_argument("--dim", type=int, default=3, help="(default: 3)")
    p.add_argument("--layers", type=int, help="(default: cycle through 1, 2, 3)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01, help="(default: 0.01)")
    p.add_argument("--attention", choices=ATTENTION_MODES, default="attention", help="(default: attention)")
    p.add_argument("--decay", choices=DECAY_VARIANTS, default="user", help="(default: user)")
    p.add_argument("--epsilon", type=float, default=1e-5, help="(default: 1e-05)")
    p.add_argument("--threshold", type=float, default=1e-4, help="(default: 0.0001)")
    p.add_argument("--out", help="directory for the CSV report (default: print only)")

    p = sub.add_parser("attn-report", help="attention weights binned by social degree and activity")
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True, help="HOSR checkpoint written by train")
    p.add_argument("--bins", type=int, default=4, help="(default: 4)")
    return parser


# --- configuration -----------------------------------------------------------


def _read_config_file(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path, encoding="utf-8") as f:
        parser.read_string("[train]\n" + f.read())
    return dict(parser["train"])


def resolve(args) -> tuple[TrainConfig, dict]:
    """(training config, data paths) from --config overlaid with explicit flags."""
    values = _read_config_file(args.config) if args.config else {}
    data = {k: values.pop(k, None) for k in _DATA_KEYS}
    overrides = {_TRAIN_FLAGS[dest]: getattr(args, dest) for dest in _TRAIN_FLAGS}
    config = TrainConfig.from_mapping(values, **overrides)
    for k in _DATA_KEYS:
        if getattr(args, k) is not None:
            data[k] = getattr(args, k)
        if data[k] is None:
            raise UsageError(f"--{k} is required (flag or config file)")
    return config, data


def print_config(command, config: TrainConfig | None = None, **extra):
    print(f"# hosr {command}")
    if config is not None:
        for key, value in config.as_rows():
            print(f"{key} = {value}")
    for key, value in extra.items():
        print(f"{key} = {value}")
    sys.stdout.flush()


def _load_split(config: TrainConfig, data: dict):
    inter, edges = load_dataset(data["interactions"], data["social"])
    return inter, split(inter, config.ratio, config.seed), build_graph(edges)


def _from_checkpoint(config: TrainConfig, ckpt: checkpoint.Checkpoint) -> TrainConfig:
    n, m, d, k = ckpt.shape
    fields = dict(model=ckpt.model, d=d, attention=ckpt.attention, decay=ckpt.decay)
    if ckpt.model == "hosr":
        fields["k"] = k
    return dataclasses.replace(config, **fields)


# --- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    print_config("synth", users=args.users, items=args.items, exponent=args.exponent,
                 homophily=args.homophily, avg_degree=args.avg_degree,
                 avg_interactions=args.avg_interactions, communities=args.communities,
                 mixing=args.mixing, seed=args.seed, out=args.out)
    inter, edges = synth_dataset(args.users, args.items, args.exponent, args.homophily,
                                 args.avg_degree, args.avg_interactions, args.seed,
                                 communities=args.communities, mixing=args.mixing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(inter, out / f"interactions_seed{args.seed}.txt")
    write_social(edges, out / f"social_seed{args.seed}.txt")
    print(f"wrote {len(inter)} interactions and {len(edges)} ties to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    if not args.interactions or not args.social:
        raise UsageError("--interactions and --social are required")
    print_config("stats", interactions=args.interactions, social=args.social, korder=args.korder,
                 ratio=args.ratio, seed=args.seed, out=args.out)
    if args.korder < 1:
        raise ValueError("--korder must be >= 1")
    inter, edges = load_dataset(args.interactions, args.social)
    sp = split(inter, args.ratio, args.seed)
    cold = dataset_stats(sp.train, edges, sp.test).cold_test_users
    report = dataclasses.replace(dataset_stats(inter, edges), cold_test_users=cold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"stats_seed{args.seed}.csv")
    report.write_histogram_csv(out / f"degree_hist_seed{args.seed}.csv")
    write_census_csv(build_graph(edges), args.korder, out / f"census_seed{args.seed}.csv")
    for key, value in report.rows():
        print(f"{key},{value}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, data = resolve(args)
    print_config("train", config, **data, out=args.out)
    _, sp, graph = _load_split(config, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def report(row):
        extra = "" if row["recall"] is None else f" recall@{config.k_eval} {row['recall']:.4f} map@{config.k_eval} {row['map']:.4f}"
        print(f"epoch {row['epoch']} loss {row['loss']:.6f}{extra}", flush=True)

    params, trainlog = train(config, sp, graph, on_epoch=report)
    tag = f"{config.model}_seed{config.seed}"
    checkpoint.save(checkpoint.Checkpoint(config.model, params, config.attention, config.decay),
                    out / f"{tag}.ckpt")
    trainlog.write_csv(out / f"trainlog_{tag}.csv")
    with open(out / f"config_{tag}.cfg", "w", encoding="utf-8") as f:
        for key, value in list(config.as_rows()) + list(data.items()):
            f.write(f"{key} = {value}\n")
    print(f"wrote {out / (tag + '.ckpt')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config, data = resolve(args)
    ckpt = checkpoint.load(args.checkpoint)
    config = _from_checkpoint(config, ckpt)
    print_config("eval", config, **data, checkpoint=args.checkpoint, groups=args.groups,
                 threads=args.threads, out=args.out)
    _, sp, graph = _load_split(config, data)
    n, m, _, _ = ckpt.shape
    if (n, m) != (sp.train.n_users, sp.train.n_items):
        raise ValueError(f"checkpoint is for {n} users x {m} items, data has "
                         f"{sp.train.n_users} x {sp.train.n_items}")
    runner = make_runner(config, sp.train, graph)
    rep = evaluate(runner.user_vectors(ckpt.params), ckpt.params.V, sp, config.k_eval,
                   threads=args.threads, n_groups=args.groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"eval_{config.model}_seed{config.seed}"
    rep.write_detail_csv(out / f"{tag}_detail.csv", sp.test.user_ids)
    rep.write_summary_csv(out / f"{tag}_summary.csv")
    rep.write_group_csv(out / f"{tag}_groups.csv", config.model)
    print(f"recall@{config.k_eval},{rep.recall!r}")
    print(f"map@{config.k_eval},{rep.map!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    print_config("gradcheck", seed=args.seed, instances=args.instances, users=args.users,
                 items=args.items, dim=args.dim, layers=args.layers or "1,2,3", lam=args.lam,
                 attention=args.attention, decay=args.decay, epsilon=args.epsilon,
                 threshold=args.threshold)
    if args.instances < 1:
        raise ValueError("--instances must be >= 1")
    worst, lines = 0.0, []
    for i in range(args.instances):
        seed = args.seed + i
        k = args.layers or i % 3 + 1
        params, L, N, batch = tiny_instance(seed, args.users, args.items, args.dim, k, decay=args.decay)
        rep = finite_diff_check(params, L, N, batch, args.lam, args.epsilon, args.threshold, args.attention)
        worst = max(worst, rep.max_error)
        body = rep.to_csv().splitlines()
        if not lines:
            lines.append("instance,seed,k," + body[0])
        lines += [f"{i},{seed},{k},{row}" for row in body[1:]]
        print(f"instance {i} seed {seed} k {k} max_rel_error {rep.max_error:.3e}")
    passed = worst <= args.threshold
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"gradcheck_seed{args.seed}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"max_rel_error {worst:.3e} threshold {args.threshold:g} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_GRADCHECK


def cmd_attn_report(args) -> int:
    config, data = resolve(args)
    ckpt = checkpoint.load(args.checkpoint)
    if ckpt.model != "hosr":
        raise ValueError(f"attention report needs a hosr checkpoint, got {ckpt.model}")
    config = _from_checkpoint(config, ckpt)
    print_config("attn-report", config, **data, checkpoint=args.checkpoint, bins=args.bins, out=args.out)
    _, sp, graph = _load_split(config, data)
    trace = forward(ckpt.params, propagation_matrix(graph), mode="eval", attention=config.attention)
    rows = attention_report(trace.weights, graph.degree, sp.train.user_counts(), args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_attention_csv(trace.weights, out / f"attention_seed{config.seed}.csv", sp.train.user_ids)
    write_attention_report_csv(rows, out / f"attn_report_seed{config.seed}.csv")
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "stats": cmd_stats, "train": cmd_train, "eval": cmd_eval,
    "gradcheck": cmd_gradcheck, "attn-report": cmd_attn_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (DataFormatError, checkpoint.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def run(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
