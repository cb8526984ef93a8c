'''
Command-line entry point of the gated recurrent network lab.

    python lab.py gen-corpus --config conf/desk.yaml --out corpus/
    python lab.py train --corpus corpus/ --kind S-LSTM --out slstm.pt
    python lab.py ablate --config conf/desk.yaml --jobs 4

Exit codes: 0 success, 1 validation / IO error, 2 numerical failure.
'''
import argparse
import contextlib
import dataclasses
import datetime
import json
import logging
import os
import pickle
import sys
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from omegaconf.errors import OmegaConfBaseException

from models.cells import CellKind, CellSpec, param_count
from utils.utils import NumericalError

__version__ = "0.1.0"

GRADCHECK_THRESHOLD = 1e-6

TABLE_COLUMNS = ["system", "MCD (dB)", "BAP (dB)", "F0 RMSE (Hz)", "V/UV (%)",
                 "# parameters", "generation time (s)"]


@contextlib.contextmanager
def stage(name):
    '''Tag any exception escaping the block with the pipeline stage it came from.'''
    try:
        yield
    except Exception as err:
        if not hasattr(err, "stage"):
            err.stage = name
        raise


@dataclass
class RunManifest:
    config: dict
    seeds: List[int]
    checkpoints: Dict[str, Dict[str, str]] = field(default_factory=dict)
    metric_csvs: List[str] = field(default_factory=list)
    timing_csv: str = ""
    table_csv: str = ""
    summary_json: str = ""
    version: str = __version__

    def missing_paths(self):
        paths = [p for by_seed in self.checkpoints.values() for p in by_seed.values()]
        paths += self.metric_csvs + [self.timing_csv, self.table_csv, self.summary_json]
        return [p for p in paths if not os.path.exists(p)]


def _split(corpus, name):
    if name not in corpus.splits:
        raise ValueError("unknown split {!r}".format(name))
    return corpus.splits[name]


def _model_inputs(model, utt):
    from dataset.features import minmax_apply

    if model.input_stats is None:
        raise ValueError("checkpoint has no input normalisation statistics")
    return minmax_apply(utt.linguistic, model.input_stats)


def _system_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def _print_frame(frame):
    print(frame.to_string(index=False))


def cmd_gen_corpus(args, cfg):
    from dataset.corpus import gen_corpus, save_corpus
    from utils.config import corpus_config

    with stage("gen-corpus"):
        corpus = gen_corpus(corpus_config(cfg))
        save_corpus(corpus, args.out)
    return 0


def cmd_train(args, cfg):
    from dataset.corpus import load_corpus, prepare_data
    from models.network import save_model
    from utils.config import network_config, train_config
    from utils.train_utils.trainer import select_learning_rate, train

    with stage("load corpus"):
        corpus = load_corpus(args.corpus)
        data = prepare_data(corpus)
    net_cfg = network_config(cfg, corpus.config.linguistic_dim, data.layout.output_dim, kind=args.kind)
    train_cfg = train_config(cfg, seed=args.seed)
    stats = dict(input_stats=data.input_stats, output_stats=data.output_stats, layout=data.layout)
    with stage("train {}".format(net_cfg.kind.value)):
        if args.select_lr or cfg.train.select_lr:
            model, history, _, _ = select_learning_rate(net_cfg, train_cfg, data.train, data.dev,
                                                        grid=tuple(cfg.train.lr_grid), **stats)
        else:
            model, history = train(net_cfg, train_cfg, data.train, data.dev, **stats)
    with stage("save checkpoint"):
        save_model(model, args.out)
        history.to_csv(args.history or args.out + ".history.csv", index=False)
    return 0


def cmd_synth(args, cfg):
    from tqdm import tqdm

    from dataset.corpus import load_corpus
    from dataset.features import write_feature_file
    from generation.pipeline import pipeline_generate
    from models.network import load_model

    with stage("load"):
        model = load_model(args.model)
        corpus = load_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    with stage("synth"):
        for utt in tqdm(_split(corpus, args.split), desc="synth"):
            frames = pipeline_generate(model, _model_inputs(model, utt),
                                       vuv_threshold=cfg.generation.vuv_threshold)
            base = os.path.join(args.out, utt.utt_id)
            write_feature_file(base + ".mcc", frames.mcc)
            write_feature_file(base + ".bap", frames.bap)
            write_feature_file(base + ".lf0", frames.log_f0)
            write_feature_file(base + ".vuv", frames.vuv)
            write_feature_file(base + ".f0", frames.f0_hz())
    return 0


def evaluate_model(model, utterances, vuv_threshold=0.5):
    from generation.pipeline import pipeline_generate
    from metrics.metrics import MetricReport

    pairs = [(utt.acoustic, pipeline_generate(model, _model_inputs(model, utt), vuv_threshold=vuv_threshold))
             for utt in utterances]
    return MetricReport.from_utterances(pairs)


def cmd_eval(args, cfg):
    import pandas as pd

    from dataset.corpus import load_corpus
    from models.network import load_model

    with stage("load corpus"):
        utterances = _split(load_corpus(args.corpus), args.split)
    rows = []
    for path in args.models:
        with stage("eval {}".format(path)):
            report = evaluate_model(load_model(path), utterances, cfg.generation.vuv_threshold)
            rows.append(report.as_row(_system_name(path)))
    frame = pd.DataFrame(rows)
    _print_frame(frame)
    if args.out:
        frame.to_csv(args.out, index=False)
    return 0


def cmd_gradcheck(args, cfg):
    from models.backprop import GradCheckResult, grad_check

    kinds = list(CellKind) if args.all or not args.kind else [CellKind.parse(k) for k in args.kind]
    failed = False
    for kind in kinds:
        worst = GradCheckResult(0.0, 0.0)
        with stage("gradcheck {}".format(kind.value)):
            for instance in range(args.instances):
                rng = np.random.default_rng(instance)
                spec = CellSpec(kind=kind, input_dim=int(rng.integers(1, 9)), hidden_dim=int(rng.integers(1, 9)))
                worst = worst.worst(grad_check(spec, seed=instance, eps=args.eps,
                                               length=int(rng.integers(1, 13)), order=args.order))
        ok = worst.passed(args.threshold)
        failed |= not ok
        print("{:<7s} {:.3e} {:.3e} {}".format(kind.value, worst.max_error, worst.norm_error,
                                                 "pass" if ok else "FAIL"))
    return 2 if failed else 0


def cmd_params(args, cfg):
    for kind in CellKind:
        print("{:<7s} {:>9d}".format(kind.value, param_count(CellSpec(kind, args.input_dim, args.hidden))))
    return 0


def cmd_trace(args, cfg):
    from analysis.gates import (best_cell_trajectory, boundary_alignment, mean_gate_activation,
                                write_correlation_table)
    from dataset.corpus import load_corpus
    from dataset.features import meanvar_apply
    from metrics.plots import emit_plot
    from models.network import load_model

    with stage("load"):
        model = load_model(args.model)
        utt = load_corpus(args.corpus).find(args.utterance)
    os.makedirs(args.out, exist_ok=True)
    inputs = _model_inputs(model, utt)
    with stage("trace"):
        states, traces = model.recurrent_trace(inputs)
        series = mean_gate_activation(traces, args.gate, model.config.kind, utt.boundaries, utt.utt_id)
        emit_plot(series, os.path.join(args.out, "{}_{}_gate".format(utt.utt_id, args.gate)))
        stats = boundary_alignment(series, cfg.analysis.boundary_window)
        logging.info("{} gate: boundary mean {:.4f}, interior mean {:.4f}, {} peaks".format(
            args.gate, stats.boundary_mean, stats.interior_mean, len(stats.peaks)))
    if args.correlate:
        with stage("correlate"):
            if not model.config.kind.has_cell:
                raise ValueError("{} has no memory cell to correlate".format(model.config.kind.value))
            if model.output_stats is None or model.layout is None:
                raise ValueError("checkpoint has no output statistics")
            targets = meanvar_apply(model.layout.pack_targets(utt.acoustic), model.output_stats)
            if not 0 <= args.target_dim < targets.shape[1]:
                raise ValueError("target dim {} out of range [0, {})".format(args.target_dim, targets.shape[1]))
            table, trajectory = best_cell_trajectory(np.stack([s.c for s in states]),
                                                     targets[:, args.target_dim], utt.boundaries, utt.utt_id)
            write_correlation_table(table, os.path.join(args.out, "{}_correlation.csv".format(utt.utt_id)))
            emit_plot(trajectory, os.path.join(args.out, "{}_cell_{}".format(utt.utt_id, table.argmax)))
            print("unit {} r = {:.4f}".format(table.argmax, table.value))
    return 0


def paper_scale_models(linguistic_dim, output_dim, kinds=tuple(CellKind), seed=0):
    from models.network import NetworkConfig, init_model

    return {kind.value: init_model(NetworkConfig.paper(linguistic_dim, output_dim, kind), seed)
            for kind in kinds}


def cmd_bench(args, cfg):
    from dataset.corpus import load_corpus, prepare_data
    from models.network import load_model
    from utils.bench import bench_generation

    with stage("load"):
        corpus = load_corpus(args.corpus)
        data = prepare_data(corpus)
        sequences = getattr(data, args.split)
        if args.paper_scale:
            models = paper_scale_models(corpus.config.linguistic_dim, data.layout.output_dim)
        else:
            models = {_system_name(p): load_model(p) for p in args.models}
    with stage("bench"):
        frame = bench_generation(models, sequences, repeats=args.repeats)
    _print_frame(frame)
    if args.out:
        frame.to_csv(args.out, index=False)
    return 0


def cmd_mlpg(args, cfg):
    from dataset.features import read_feature_file, write_feature_file
    from generation.mlpg import GenerationProblem, mlpg_solve

    with stage("mlpg"):
        problem = GenerationProblem(means=read_feature_file(args.means),
                                    variances=read_feature_file(args.variances))
        write_feature_file(args.out, mlpg_solve(problem).c)
    return 0


def _train_system(net_cfg, train_cfg, data, select_lr, grid, out_dir):
    from models.network import save_model
    from utils.train_utils.trainer import select_learning_rate, train

    name = "{}_seed{}".format(net_cfg.kind.value, train_cfg.seed)
    stats = dict(input_stats=data.input_stats, output_stats=data.output_stats, layout=data.layout)
    with stage("train {}".format(name)):
        if select_lr:
            model, history, _, _ = select_learning_rate(net_cfg, train_cfg, data.train, data.dev,
                                                        grid=grid, **stats)
        else:
            model, history = train(net_cfg, train_cfg, data.train, data.dev, **stats)
    ckpt = os.path.join(out_dir, name + ".pt")
    save_model(model, ckpt)
    history.to_csv(os.path.join(out_dir, name + ".history.csv"), index=False)
    return net_cfg.kind, train_cfg.seed, ckpt, model


def analyse_lstm(model, sequences, cfg, plot_dir=None):
    '''Forget-gate alignment and cell/target correlation over a test set.'''
    from analysis.gates import (best_cell_trajectory, boundary_alignment, mean_gate_activation,
                                pooled_cell_target_correlation, write_correlation_table)
    from metrics.plots import emit_plot

    gate, target_dim = cfg.analysis.gate, int(cfg.analysis.target_dim)
    aligned, best_abs, pooled = [], [], []
    for k, seq in enumerate(sequences):
        states, traces = model.recurrent_trace(seq.inputs)
        series = mean_gate_activation(traces, gate, model.config.kind, seq.boundaries, seq.utt_id)
        aligned.append(boundary_alignment(series, int(cfg.analysis.boundary_window)).difference > 0)
        cells = np.stack([s.c for s in states])
        table, trajectory = best_cell_trajectory(cells, seq.targets[:, target_dim], seq.boundaries, seq.utt_id)
        best_abs.append(abs(table.value))
        pooled.append((cells, seq.targets[:, target_dim]))
        if plot_dir is not None and k == 0:
            emit_plot(series, os.path.join(plot_dir, "{}_{}_gate".format(seq.utt_id, gate)))
            emit_plot(trajectory, os.path.join(plot_dir, "{}_cell_{}".format(seq.utt_id, table.argmax)))
            write_correlation_table(table, os.path.join(plot_dir, "{}_correlation.csv".format(seq.utt_id)))
    pooled_table = pooled_cell_target_correlation(pooled)
    return {"boundary_fraction": float(np.mean(aligned)),
            "max_abs_correlation": float(np.max(best_abs)),
            "median_abs_correlation": float(np.median(best_abs)),
            "pooled_abs_correlation": abs(pooled_table.value)}


def run_ablation(cfg, run_dir, jobs=1):
    import pandas as pd
    from joblib import Parallel, delayed
    from omegaconf import OmegaConf
    from tqdm import tqdm

    from dataset.corpus import gen_corpus, prepare_data, save_corpus
    from utils.bench import bench_generation
    from utils.config import corpus_config, network_config, train_config
    from utils.utils import gather_metrics

    os.makedirs(run_dir, exist_ok=True)
    OmegaConf.save(cfg, os.path.join(run_dir, "config.yaml"))
    seeds = [int(s) for s in cfg.ablate.seeds]
    kinds = sorted({CellKind.parse(k) for k in cfg.ablate.kinds}, key=list(CellKind).index)

    with stage("gen-corpus"):
        corpus = gen_corpus(corpus_config(cfg))
        save_corpus(corpus, os.path.join(run_dir, "corpus"))
        data = prepare_data(corpus)

    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    tasks = [(network_config(cfg, corpus.config.linguistic_dim, data.layout.output_dim, kind=kind),
              train_config(cfg, seed=seed)) for seed in seeds for kind in kinds]
    logging.info("Training {} systems with {} job(s)".format(len(tasks), jobs))
    results = Parallel(n_jobs=jobs)(
        delayed(_train_system)(net_cfg, train_cfg, data, bool(cfg.train.select_lr),
                               tuple(cfg.train.lr_grid), ckpt_dir)
        for net_cfg, train_cfg in tasks)

    manifest = RunManifest(config=OmegaConf.to_container(cfg, resolve=True), seeds=seeds)
    models = {}
    for kind, seed, ckpt, model in results:
        models[(kind, seed)] = model
        manifest.checkpoints.setdefault(kind.value, {})[str(seed)] = ckpt

    per_seed, timings, analyses = [], [], []
    for seed in seeds:
        rows = []
        for kind in tqdm(kinds, desc="evaluate seed {}".format(seed)):
            with stage("evaluate {} seed {}".format(kind.value, seed)):
                report = evaluate_model(models[(kind, seed)], corpus.test, cfg.generation.vuv_threshold)
            rows.append(report.as_row(kind.value))
        path = os.path.join(run_dir, "metrics_seed{}.csv".format(seed))
        pd.DataFrame(rows).to_csv(path, index=False)
        manifest.metric_csvs.append(path)

        with stage("bench seed {}".format(seed)):
            frame = bench_generation({k.value: models[(k, seed)] for k in kinds}, data.test,
                                     repeats=int(cfg.bench.repeats))
        frame["seed"] = seed
        timings.append(frame)
        per_seed.append((seed, {"{}/{}".format(row["model"], key): row[key]
                                for row in rows for key in ("mcd_db", "bap_db", "f0_rmse_hz", "vuv_pct")}))
        per_seed[-1][1].update({"{}/time".format(r.system): r.median_seconds for r in frame.itertuples()})

        if CellKind.LSTM in kinds:
            plot_dir = os.path.join(run_dir, "analysis") if seed == seeds[0] else None
            if plot_dir:
                os.makedirs(plot_dir, exist_ok=True)
            with stage("analysis seed {}".format(seed)):
                analyses.append((seed, analyse_lstm(models[(CellKind.LSTM, seed)], data.test, cfg, plot_dir)))

    manifest.timing_csv = os.path.join(run_dir, "timing.csv")
    pd.concat(timings, ignore_index=True).to_csv(manifest.timing_csv, index=False)

    stats, _ = gather_metrics(per_seed)
    table = []
    for kind in kinds:
        med = {key: stats["{}/{}".format(kind.value, key)]["median"]
               for key in ("mcd_db", "bap_db", "f0_rmse_hz", "vuv_pct", "time")}
        table.append([kind.value, med["mcd_db"], med["bap_db"], med["f0_rmse_hz"], med["vuv_pct"],
                      param_count(models[(kind, seeds[0])].config.recurrent_spec), med["time"]])
    table = pd.DataFrame(table, columns=TABLE_COLUMNS)
    manifest.table_csv = os.path.join(run_dir, "table.csv")
    table.to_csv(manifest.table_csv, index=False)
    _print_frame(table)

    summary = {"seeds": seeds}
    if CellKind.LSTM in kinds:
        lstm_mcd = float(table.loc[table.system == CellKind.LSTM.value, "MCD (dB)"].iloc[0])
        summary["relative_mcd_vs_lstm"] = {row.system: (row[1] - lstm_mcd) / lstm_mcd
                                           for row in table.itertuples(index=False)}
        if analyses:
            analysis_stats, _ = gather_metrics(analyses)
            summary["analysis"] = {k: v["median"] for k, v in analysis_stats.items()}
    if CellKind.SLSTM in kinds and CellKind.LSTM in kinds:
        lstm_time = float(table.loc[table.system == CellKind.LSTM.value, "generation time (s)"].iloc[0])
        slstm_time = float(table.loc[table.system == CellKind.SLSTM.value, "generation time (s)"].iloc[0])
        summary["slstm_speed_ratio_desk"] = slstm_time / lstm_time
        if cfg.bench.paper_scale:
            with stage("paper-scale bench"):
                frame = bench_generation(paper_scale_models(corpus.config.linguistic_dim, data.layout.output_dim,
                                                            kinds=(CellKind.LSTM, CellKind.SLSTM)),
                                         data.test, repeats=int(cfg.bench.repeats))
            frame.to_csv(os.path.join(run_dir, "timing_paper_scale.csv"), index=False)
            summary["slstm_speed_ratio_paper_scale"] = float(
                frame.loc[frame.system == CellKind.SLSTM.value, "ratio_to_lstm"].iloc[0])

    manifest.summary_json = os.path.join(run_dir, "summary.json")
    with open(manifest.summary_json, "w") as f:
        json.dump(summary, f, indent=2)
    missing = manifest.missing_paths()
    if missing:
        raise OSError("run finished but outputs are missing: {}".format(missing))
    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        json.dump(dataclasses.asdict(manifest), f, indent=2)
    logging.info("Ablation written to {}".format(run_dir))
    return table, summary


def default_run_dir(cfg, seed):
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return os.path.join(cfg.run.root, "{}_seed{}".format(stamp, seed))


def cmd_ablate(args, cfg):
    if args.seeds:
        cfg.ablate.seeds = args.seeds
    jobs = args.jobs if args.jobs is not None else int(cfg.ablate.jobs)
    run_dir = args.run_dir or default_run_dir(cfg, cfg.ablate.seeds[0])
    run_ablation(cfg, run_dir, jobs=jobs)
    return 0


def parseArgs(argv=None):
    parser = argparse.ArgumentParser(
        description="Train, ablate and analyse gated recurrent acoustic models.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)

    config_parent = argparse.ArgumentParser(add_help=False)
    config_parent.add_argument("--config", type=str, default=None, help="YAML config under conf/")
    config_parent.add_argument("overrides", nargs="*", help="key=value config overrides")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[config_parent], help="generate and save the synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", parents=[config_parent], help="train one system")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", default=None, help="cell kind (defaults to network.kind)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="history CSV (defaults to <out>.history.csv)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--select-lr", action="store_true", dest="select_lr",
                   help="pick the learning rate from train.lr_grid on the dev set")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", parents=[config_parent], help="generate acoustic features")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[config_parent], help="objective measures per model")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[config_parent], help="finite-difference check of BPTT")
    p.add_argument("--all", action="store_true")
    p.add_argument("--kind", nargs="*", default=None)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--order", type=int, default=4, choices=[2, 4], help="finite-difference order")
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="recurrent-layer parameter counts")
    p.add_argument("--in", type=int, default=512, dest="input_dim")
    p.add_argument("--hidden", type=int, default=256)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("trace", parents=[config_parent], help="gate / cell-state analysis of one utterance")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utterance", required=True)
    p.add_argument("--gate", default="forget")
    p.add_argument("--out", required=True)
    p.add_argument("--correlate", action="store_true")
    p.add_argument("--target-dim", type=int, default=0, dest="target_dim")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("bench", parents=[config_parent], help="forward-pass timing")
    p.add_argument("--models", nargs="*", default=[])
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--paper-scale", action="store_true", dest="paper_scale",
                   help="time freshly initialised full-size models of every kind")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mlpg", parents=[config_parent], help="smooth a means/variances feature file pair")
    p.add_argument("--means", required=True)
    p.add_argument("--variances", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mlpg)

    p = sub.add_parser("ablate", parents=[config_parent], help="train, evaluate and analyse every kind")
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--run-dir", default=None, dest="run_dir")
    p.set_defaults(func=cmd_ablate)

    return parser.parse_args(argv)


def main(argv=None):
    args = parseArgs(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = None
        if hasattr(args, "overrides"):
            from utils.config import load_config
            with stage("config"):
                cfg = load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except NumericalError as err:
        logging.error("{} failed: {}".format(getattr(err, "stage", args.command), err))
        return 2
    except (ValueError, OSError, KeyError, pickle.UnpicklingError, OmegaConfBaseException) as err:
        logging.error("{} failed: {}".format(getattr(err, "stage", args.command), err))
        return 1


if __name__ == "__main__":
    sys.exit(main())
