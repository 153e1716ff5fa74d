"""Command line driver: collect, cluster, train-rbfn, sweep, train-rl, evaluate, report.

Every command reads a flat ``key = value`` config file (``#`` starts a
comment); ``--seed`` and ``--out`` override the ``seed`` and ``output_dir``
keys. Relative paths inside the config are resolved against the output
directory, so one directory can carry a whole pipeline.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import channel, clustering, rbfn, rl, scheduler
from .sast import AnnealingSchedule, TunnelingParams

COMMANDS = {
    "collect": "collect top-M CQI datasets until redundancy saturates",
    "cluster": "cluster a dataset; write centers and a benchmark CSV",
    "train-rbfn": "train the RBF classifier on clustered data",
    "sweep": "grid over sigma and eta for the RBF classifier",
    "train-rl": "train a fairness controller in the scheduler environment",
    "evaluate": "evaluate policies (files, PF or MT) and write eval.csv",
    "report": "summarize the CSVs of an output directory into report.md",
}

# Defaults for every tunable key. ``m_values`` has no default on purpose:
# collection must be told which M to build.
DEFAULTS = {
    "seed": "0",
    "output_dir": ".",
    "M": "3",
    "K": "64",
    "N": "15",
    "J": "12",
    # channel
    "num_users": "30",
    "speed_kmh": "120",
    "num_paths": "12",
    "shadowing_sigma_db": "8",
    "tx_power_dbm": "23",
    "noise_figure_db": "2.5",
    "noise_density_dbm_hz": "-174",
    "penetration_loss_db": "10",
    "rb_bandwidth_hz": "180e3",
    "delay_spread_s": "1e-7",
    # collection
    "saturation_threshold": "0.99",
    "redundancy_beta": "0.005",
    "max_ttis": "200000",
    # clustering
    "dataset": "dataset_M{M}.txt",
    "methods": "SAST",
    "k_values": "{K}",
    "cluster_seeds": "1",
    "max_iters_per_run": "10",
    "total_iters": "1000",
    "min_improvement": "0.1",
    "cluster_p0": "0.5",
    "cluster_cooling": "0.95",
    "cluster_sample_length": "10",
    "cluster_omega": "0.02",
    # rbfn
    "centers": "centers_M{M}_K{K}.txt",
    "model": "rbfn_M{M}_K{K}.json",
    "sigma": "0.1",
    "eta": "0.6",
    "labeled_size": "1000",
    "rbfn_total_iters": "20000",
    "rbfn_iters_per_run": "200",
    "rbfn_p0": "0.8",
    "rbfn_weight_p0": "0.8",
    "rbfn_cooling": "0.99",
    "rbfn_sample_length": "200",
    "rbfn_weight_sample_length": "5",
    "rbfn_omega": "0.1",
    "sigma_grid": "0.05,0.1,0.2,0.4",
    "eta_grid": "0.1,0.3,0.6",
    "sweep_seeds": "1",
    # scheduler environment
    "min_users": "5",
    "max_users": "20",
    "churn_prob": "0.01",
    "window": "100",
    "warmup_ttis": "100",
    "confidence": "0.05",
    "grid_points": "100",
    # reinforcement learning
    "algorithm": "CACLA2",
    "state_mode": "compressed",
    "discount": "0.9",
    "critic_lr": "0.01",
    "actor_lr": "0.01",
    "epsilon_start": "1.0",
    "epsilon_end": "0.05",
    "sigma_start": "0.3",
    "sigma_end": "0.02",
    "grid_size": "21",
    "hidden": "60",
    "training_ttis": "50000",
    "episode_ttis": "5000",
    "policy": "policy_{algorithm}_{state_mode}.json",
    "policies": "{policy}",
    "eval_runs": "5",
    "eval_ttis": "5000",
    "eval_seed_offset": "100",
    "summary_window": "1000",
}


class UsageError(Exception):
    """Bad invocation or incomplete config; exit status 2."""


class Config:
    """Typed view over the raw key/value pairs with ``{key}`` templating."""

    def __init__(self, values: dict, out_dir: Path):
        self.values = values
        self.out = out_dir

    def raw(self, key: str) -> str:
        if key in self.values:
            text = self.values[key]
        elif key in DEFAULTS:
            text = DEFAULTS[key]
        else:
            raise UsageError(f"missing config key {key!r}")
        for _ in range(5):
            if "{" not in text:
                break
            text = text.format_map(_Lookup(self))
        return text

    def get_str(self, key):
        return self.raw(key)

    def get_int(self, key) -> int:
        return int(self._parse(key, int))

    def get_float(self, key) -> float:
        return float(self._parse(key, float))

    def get_ints(self, key) -> list:
        return [self._convert(key, x, int) for x in self._list(key)]

    def get_floats(self, key) -> list:
        return [self._convert(key, x, float) for x in self._list(key)]

    def get_strs(self, key) -> list:
        return self._list(key)

    def path(self, key) -> Path:
        p = Path(self.raw(key))
        return p if p.is_absolute() else self.out / p

    def _list(self, key) -> list:
        items = [x.strip() for x in self.raw(key).split(",")]
        items = [x for x in items if x]
        if not items:
            raise UsageError(f"config key {key!r} is empty")
        return items

    def _parse(self, key, kind):
        return self._convert(key, self.raw(key), kind)

    @staticmethod
    def _convert(key, text, kind):
        try:
            return kind(float(text)) if kind is int and "e" in text.lower() else kind(text)
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot read {text!r} as {kind.__name__}")


class _Lookup(dict):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg

    def __missing__(self, key):
        return self.cfg.raw(key)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{n}: empty key")
        values[key] = value
    return values


def load_config(path, seed=None, out=None) -> Config:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}")
        values = parse_config_text(text, str(path))
    if seed is not None:
        values["seed"] = str(seed)
    if out is not None:
        values["output_dir"] = str(out)
    out_dir = Path(values.get("output_dir", DEFAULTS["output_dir"]))
    return Config(values, out_dir)


def default_config_text() -> str:
    return "".join(f"{k} = {v}\n" for k, v in DEFAULTS.items())


# -- builders ----------------------------------------------------------------

def channel_config(cfg: Config, seed: int | None = None) -> channel.ChannelConfig:
    return channel.ChannelConfig(
        num_rbs=cfg.get_int("J"), cqi_levels=cfg.get_int("N"), num_users=cfg.get_int("num_users"),
        speed_kmh=cfg.get_float("speed_kmh"), num_paths=cfg.get_int("num_paths"),
        shadowing_sigma_db=cfg.get_float("shadowing_sigma_db"),
        tx_power_dbm=cfg.get_float("tx_power_dbm"), noise_figure_db=cfg.get_float("noise_figure_db"),
        noise_density_dbm_hz=cfg.get_float("noise_density_dbm_hz"),
        penetration_loss_db=cfg.get_float("penetration_loss_db"),
        rb_bandwidth_hz=cfg.get_float("rb_bandwidth_hz"), delay_spread_s=cfg.get_float("delay_spread_s"),
        seed=cfg.get_int("seed") if seed is None else seed)


def cluster_config(cfg: Config) -> clustering.ClusterRunConfig:
    return clustering.ClusterRunConfig(
        max_iters_per_run=cfg.get_int("max_iters_per_run"), total_iters=cfg.get_int("total_iters"),
        min_improvement=cfg.get_float("min_improvement"),
        schedule=AnnealingSchedule(1.0, cfg.get_float("cluster_cooling"), cfg.get_float("cluster_p0"),
                                   cfg.get_int("cluster_sample_length")),
        tunneling=TunnelingParams(cfg.get_float("cluster_omega")))


def rbfn_config(cfg: Config) -> rbfn.RbfnTrainConfig:
    cooling = cfg.get_float("rbfn_cooling")
    return rbfn.RbfnTrainConfig(
        total_iters=cfg.get_int("rbfn_total_iters"), iters_per_run=cfg.get_int("rbfn_iters_per_run"),
        schedule=AnnealingSchedule(1.0, cooling, cfg.get_float("rbfn_p0"),
                                   cfg.get_int("rbfn_sample_length")),
        weight_schedule=AnnealingSchedule(1.0, cooling, cfg.get_float("rbfn_weight_p0"),
                                          cfg.get_int("rbfn_weight_sample_length")),
        tunneling=TunnelingParams(cfg.get_float("rbfn_omega")))


def env_config(cfg: Config, seed: int) -> scheduler.EnvConfig:
    return scheduler.EnvConfig(
        num_rbs=cfg.get_int("J"), cqi_levels=cfg.get_int("N"), m=cfg.get_int("M"),
        min_users=cfg.get_int("min_users"), max_users=cfg.get_int("max_users"),
        churn_prob=cfg.get_float("churn_prob"), window=cfg.get_float("window"),
        warmup_ttis=cfg.get_int("warmup_ttis"),
        ngmn=scheduler.NgmnConfig(cfg.get_float("confidence"), cfg.get_int("grid_points")),
        channel=channel_config(cfg, seed), seed=seed)


def rl_config(cfg: Config) -> rl.RlConfig:
    return rl.RlConfig(
        algorithm=cfg.get_str("algorithm"), discount=cfg.get_float("discount"),
        critic_lr=cfg.get_float("critic_lr"), actor_lr=cfg.get_float("actor_lr"),
        epsilon_start=cfg.get_float("epsilon_start"), epsilon_end=cfg.get_float("epsilon_end"),
        sigma_start=cfg.get_float("sigma_start"), sigma_end=cfg.get_float("sigma_end"),
        grid_size=cfg.get_int("grid_size"), hidden=cfg.get_int("hidden"),
        training_ttis=cfg.get_int("training_ttis"), episode_ttis=cfg.get_int("episode_ttis"),
        eval_ttis=cfg.get_int("eval_ttis"), eval_runs=cfg.get_int("eval_runs"))


def labeled_set(cfg: Config, vectors, centers, seed: int):
    """Dataset members labeled by nearest center, optionally subsampled."""
    size = cfg.get_int("labeled_size")
    if 0 < size < len(vectors):
        idx = np.sort(np.random.default_rng([seed, 7]).choice(len(vectors), size, replace=False))
        vectors = vectors[idx]
    return vectors, clustering.assign(vectors, centers)[0]


def rbfn_stream(cfg: Config, centers, m: int, seed: int):
    """Fresh channel reports (independent seed) labeled by nearest center."""
    source = channel.vector_stream(channel_config(cfg, seed + 100), m)
    return rbfn.label_stream(centers, source)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _read_model(cfg: Config):
    return rbfn.load_model(cfg.path("model"))


# -- commands ----------------------------------------------------------------

def cmd_collect(cfg: Config) -> list:
    m_values = cfg.get_ints("m_values")
    data = channel.collect_dataset(channel_config(cfg), m_values,
                                   cfg.get_float("saturation_threshold"),
                                   beta=cfg.get_float("redundancy_beta"),
                                   max_ttis=cfg.get_int("max_ttis"))
    written = []
    for m in sorted(data):
        path = cfg.out / f"dataset_M{m}.txt"
        cfg.out.mkdir(parents=True, exist_ok=True)
        channel.write_dataset(path, data[m], m)
        print(f"M={m}: {len(data[m])} vectors -> {path}")
        written.append(path)
    return written


def cmd_cluster(cfg: Config) -> list:
    m, vectors = channel.read_dataset(cfg.path("dataset"))
    seed = cfg.get_int("seed")
    seeds = range(seed, seed + cfg.get_int("cluster_seeds"))
    k_values = cfg.get_ints("k_values")
    tree_points = np.asarray(vectors, dtype=float)
    tree = clustering.kntree.build(tree_points)
    base = cluster_config(cfg)
    rows, best = [], {}
    for method in cfg.get_strs("methods"):
        for k in k_values:
            for s in seeds:
                t0 = time.perf_counter()
                res = clustering.cluster(tree_points, k, method, s, base, tree)
                rows.append(clustering.BenchmarkRow(method, m, k, s, res.distortion,
                                                    time.perf_counter() - t0))
                if k not in best or res.distortion < best[k][0]:
                    best[k] = (res.distortion, res.centers)
    written = [_write(cfg.out / "benchmark.csv", clustering.benchmark_csv(rows))]
    for k, (d, centers) in sorted(best.items()):
        path = cfg.out / f"centers_M{m}_K{k}.txt"
        clustering.write_centers(path, centers, m)
        print(f"K={k}: best distortion {d:.6g} -> {path}")
        written.append(path)
    return written


def cmd_train_rbfn(cfg: Config) -> list:
    _, vectors = channel.read_dataset(cfg.path("dataset"))
    m, centers = clustering.read_centers(cfg.path("centers"))
    seed = cfg.get_int("seed")
    ys, labels = labeled_set(cfg, vectors, centers, seed)
    rng = np.random.default_rng(seed)
    model = rbfn.init_model(centers, cfg.get_float("sigma"), cfg.get_float("eta"), rng, m)
    res = rbfn.sast_train(model, (ys, labels), rbfn_stream(cfg, centers, m, seed),
                          rbfn_config(cfg), rng)
    acc = rbfn.accuracy(res.model, ys, labels)
    path = cfg.out / f"rbfn_M{m}_K{centers.shape[0]}.json"
    cfg.out.mkdir(parents=True, exist_ok=True)
    rbfn.save_model(path, res.model)
    print(f"labeled error {res.error:.6g}, accuracy {acc:.4f} -> {path}")
    return [path]


def cmd_sweep(cfg: Config) -> list:
    _, vectors = channel.read_dataset(cfg.path("dataset"))
    m, centers = clustering.read_centers(cfg.path("centers"))
    seed = cfg.get_int("seed")
    ys, labels = labeled_set(cfg, vectors, centers, seed)
    seeds = tuple(range(seed, seed + cfg.get_int("sweep_seeds")))
    rows = rbfn.hyperparam_sweep(ys, labels, centers, cfg.get_floats("sigma_grid"),
                                 cfg.get_floats("eta_grid"), seeds, m=m,
                                 stream_factory=lambda s: rbfn_stream(cfg, centers, m, s),
                                 config=rbfn_config(cfg))
    path = _write(cfg.out / f"sweep_M{m}_K{centers.shape[0]}.csv", rbfn.sweep_csv(rows))
    best = min(rows, key=lambda r: r[-1])
    print(f"{len(rows)} grid points; best sigma={best[2]} eta={best[3]} "
          f"error={best[-1]:.6g} -> {path}")
    return [path]


def _env_factory(cfg: Config, model, state_mode: str):
    return lambda seed: scheduler.SchedulerEnv(env_config(cfg, seed), model, state_mode)


def _summary_csv(log, window: int) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("tti_start", "mean_reward", "p_uf", "p_fa", "p_of", "mean_alpha",
                  "mean_beta"))
    n = len(log.regions)
    for s in range(0, n, window):
        shares = scheduler.region_shares(log.regions[s:s + window])
        out.writerow([s, f"{log.rewards[s:s + window].mean():.6f}",
                      f"{shares['UF']:.4f}", f"{shares['FA']:.4f}", f"{shares['OF']:.4f}",
                      f"{log.alphas[s:s + window].mean():.6f}",
                      f"{log.betas[s:s + window].mean():.6f}"])
    return buf.getvalue()


def cmd_train_rl(cfg: Config) -> list:
    state_mode = cfg.get_str("state_mode")
    if state_mode not in ("compressed", "raw"):
        raise UsageError("state_mode must be 'compressed' or 'raw'")
    model = _read_model(cfg) if state_mode == "compressed" else None
    seed = cfg.get_int("seed")
    config = rl_config(cfg)
    env = _env_factory(cfg, model, state_mode)(seed)
    policy, log = rl.train_controller(env, config, seed)
    path = cfg.path("policy")
    path.parent.mkdir(parents=True, exist_ok=True)
    rl.save_policy(path, policy, state_mode=state_mode)
    trace = _write(path.with_name(f"train_{config.algorithm}_{state_mode}.csv"),
                   _summary_csv(log, cfg.get_int("summary_window")))
    print(f"{config.algorithm} ({state_mode}) trained {config.training_ttis} TTIs: "
          f"UF {log.p_uf:.1f}% FA {log.p_fa:.1f}% OF {log.p_of:.1f}% -> {path}")
    return [path, trace]


def load_evaluated_policy(cfg: Config, entry: str):
    """Policy file or baseline name -> (label, policy, state mode, env model)."""
    if entry in ("PF", "MT"):
        return entry, entry, "raw", None
    path = Path(entry) if Path(entry).is_absolute() else cfg.out / entry
    doc = json.loads(path.read_text())
    state_mode = doc.get("state_mode", "compressed")
    policy = rl.Controller.from_dict(doc)
    model = _read_model(cfg) if state_mode == "compressed" else None
    label = policy.config.algorithm + ("-raw" if state_mode == "raw" else "")
    return label, policy, state_mode, model


def cmd_evaluate(cfg: Config) -> list:
    runs, ttis = cfg.get_int("eval_runs"), cfg.get_int("eval_ttis")
    first = cfg.get_int("seed") + cfg.get_int("eval_seed_offset")
    m, k = cfg.get_int("M"), cfg.get_int("K")
    rows = []
    for entry in cfg.get_strs("policies"):
        label, policy, state_mode, model = load_evaluated_policy(cfg, entry)
        factory = _env_factory(cfg, model, state_mode)
        for i in range(runs):
            env = factory(first + i)
            if policy in ("PF", "MT"):
                _, infos = scheduler.run_baseline(env, policy, ttis)
                log = rl.EpisodeLog(np.zeros((0, 0)), np.array([x.alpha for x in infos]),
                                    np.array([x.beta for x in infos]),
                                    np.array([rl.reward(x.region) for x in infos]),
                                    [x.region.region for x in infos],
                                    np.array([x.cell_throughput for x in infos]))
            else:
                log = rl.run_episode(env, policy, ttis, learn=False, explore=False,
                                     rng=np.random.default_rng(0))
            res = rl.EvalResult(log.p_uf, log.p_fa, log.p_of,
                                rl.mean_cell_throughput_of(log), [log])
            rows.append((label, m, k, first + i, res))
    path = _write(cfg.out / "eval.csv", rl.eval_csv(rows))
    for label in dict.fromkeys(r[0] for r in rows):
        sel = [r[4] for r in rows if r[0] == label]
        print(f"{label:>12}: UF {np.mean([r.p_uf for r in sel]):6.2f}%  "
              f"FA {np.mean([r.p_fa for r in sel]):6.2f}%  "
              f"OF {np.mean([r.p_of for r in sel]):6.2f}%")
    return [path]


def _read_csv(path: Path) -> list:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg: Config) -> list:
    lines = ["# SCAR run report", ""]
    bench = cfg.out / "benchmark.csv"
    if bench.exists():
        rows = _read_csv(bench)
        # timings stay in benchmark.csv so the report is reproducible byte for byte
        lines += ["## Clustering", "", "| method | M | K | runs | mean distortion | best |",
                  "|---|---|---|---|---|---|"]
        groups = {}
        for r in rows:
            groups.setdefault((r["method"], r["M"], r["K"]), []).append(r)
        for (method, m, k), rs in groups.items():
            d = np.mean([float(r["distortion"]) for r in rs])
            best = min(float(r["distortion"]) for r in rs)
            lines.append(f"| {method} | {m} | {k} | {len(rs)} | {d:.6g} | {best:.6g} |")
        lines.append("")
    for sweep in sorted(cfg.out.glob("sweep_M*_K*.csv")):
        rows = _read_csv(sweep)
        best = min(rows, key=lambda r: float(r["final_error"]))
        lines += [f"## RBFN sweep ({sweep.name})", "",
                  f"{len(rows)} grid points; lowest error {float(best['final_error']):.6g} "
                  f"at sigma={best['sigma']}, eta={best['eta']}.", ""]
    ev = cfg.out / "eval.csv"
    if ev.exists():
        rows = _read_csv(ev)
        lines += ["## Fairness regions (mean over evaluation runs)", "",
                  "| policy | runs | UF % | FA % | OF % | cell Mbps |", "|---|---|---|---|---|---|"]
        groups = {}
        for r in rows:
            groups.setdefault(r["algorithm"], []).append(r)
        for label, rs in groups.items():
            mean = {c: np.mean([float(r[c]) for r in rs])
                    for c in ("p_uf", "p_fa", "p_of", "mean_cell_throughput")}
            lines.append(f"| {label} | {len(rs)} | {mean['p_uf']:.2f} | {mean['p_fa']:.2f} | "
                         f"{mean['p_of']:.2f} | {mean['mean_cell_throughput']:.3f} |")
        lines.append("")
    if len(lines) == 2:
        raise ValueError(f"nothing to report in {cfg.out}")
    path = _write(cfg.out / "report.md", "\n".join(lines))
    print(f"report -> {path}")
    return [path]


HANDLERS = {
    "collect": cmd_collect,
    "cluster": cmd_cluster,
    "train-rbfn": cmd_train_rbfn,
    "sweep": cmd_sweep,
    "train-rl": cmd_train_rl,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scar", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true",
                        help="print every config key with its default and exit")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="override the seed key")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(default_config_text())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("scar: error: a command is required", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.seed, args.out)
        HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"scar {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, channel.CollectionError) as exc:
        print(f"scar {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
