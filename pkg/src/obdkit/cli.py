"""Command-line front end: ``obdkit <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` (JSON object of flag values, with
dashes or underscores) and ``--seed``. Explicit flags override the file.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 failed check.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from .datasets import TIERS, load_dataset, make_tier_dataset, save_dataset
from .distill import DistillConfig, distill
from .envs import make_gridworld, make_random_mdp
from .evaluation import (ARCH_VARIANTS, OPTIMIZER_VARIANTS, EvalProtocol, cross_architecture,
                         cross_optimizer, ensemble_evaluate, evaluate_synthetic,
                         random_selection_baseline, write_results_csv, write_results_json)
from .extract import Extraction, ExtractionConfig, extract
from .mdp import ValidationError, load_mdp
from .policy import OptimizerSpec
from .synthetic import SyntheticDataset
from .theory import verify_theory

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_CHECK = 0, 1, 2, 3
CLI_TIERS = tuple(t for t in TIERS if t != "custom")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# each entry: flag, default, type, help; ``REQUIRED`` marks mandatory values
REQUIRED = object()

COMMON = [
    ("config", None, str, "JSON file of flag values; explicit flags take precedence"),
    ("seed", 0, int, "master seed"),
    ("jobs", 1, int, "worker processes for per-seed evaluation"),
]

SPECS = {
    "gen-env": [
        ("gridworld", None, str, "WIDTHxHEIGHT gridworld"),
        ("random", None, str, "STATESxACTIONS random MDP"),
        ("gamma", 0.9, float, "discount factor in (0, 1)"),
        ("goal-reward", 1.0, float, "gridworld goal reward"),
        ("step-reward", 0.0, float, "gridworld per-step reward"),
        ("slip", 0.1, float, "gridworld slip probability"),
        ("branching", 3, int, "random MDP successors per (s, a)"),
        ("sparsity", 0.5, float, "random MDP fraction of zero-reward cells"),
        ("out", REQUIRED, str, "output MDP JSON"),
    ],
    "gen-data": [
        ("mdp", REQUIRED, str, "MDP JSON"),
        ("tier", "medium-replay", str, "medium-replay | medium | medium-expert"),
        ("n", 100_000, int, "number of transitions"),
        ("out", REQUIRED, str, "output JSONL dataset"),
    ],
    "extract": [
        ("data", REQUIRED, str, "JSONL dataset"),
        ("mdp", None, str, "MDP JSON; supplies gamma and is checked against the data"),
        ("gamma", None, float, "discount for value iteration (default: the MDP's, else 0.9)"),
        ("penalty", None, float, "reward penalty for untrusted (s, a); default max dataset reward"),
        ("threshold", 1, int, "visits needed to trust an (s, a)"),
        ("temperature", 0.05, float, "softmax temperature of pi*; 0 is greedy"),
        ("out", REQUIRED, str, "output extraction JSON"),
    ],
    "distill": [
        ("mdp", REQUIRED, str, "true MDP JSON used for evaluation"),
        ("data", REQUIRED, str, "JSONL dataset"),
        ("extraction", None, str, "extraction JSON (required unless --objective dbc)"),
        ("objective", "av-pbc", str, "dbc | pbc | av-pbc"),
        ("mode", "full-sum", str, "av-pbc estimator: full-sum | sampled"),
        ("n-syn", 16, int, "synthetic pairs"),
        ("inner-steps", 30, int, "recorded inner training steps"),
        ("outer-steps", 2000, int, "outer iterations"),
        ("inner-lr", 0.1, float, "inner step size"),
        ("inner-momentum", 0.0, float, "inner momentum"),
        ("outer-lr", 0.1, float, "outer step size"),
        ("outer-momentum", 0.9, float, "outer momentum"),
        ("batch-size", 64, int, "offline states per outer step"),
        ("eval-interval", 100, int, "outer steps between evaluations"),
        ("eval-steps", 500, int, "BC steps when evaluating"),
        ("eval-seeds", 5, int, "networks per evaluation"),
        ("out", REQUIRED, str, "output synthetic dataset JSON"),
        ("report", None, str, "CSV of the evaluation records"),
    ],
    "eval": [
        ("mdp", REQUIRED, str, "true MDP JSON"),
        ("syn", None, str, "synthetic dataset JSON"),
        ("baseline-data", None, str, "JSONL dataset for the random-selection baseline"),
        ("n-syn", 16, int, "pairs per random-selection draw"),
        ("repeats", 10, int, "random-selection repeats"),
        ("steps", 500, int, "BC training steps"),
        ("lr", 0.1, float, "BC step size"),
        ("seeds", 5, int, "networks per evaluation"),
        ("ensemble", 0, int, "also evaluate ensembles of this many networks"),
        ("sweep", "none", str, "none | arch | optimizer | all"),
        ("csv", None, str, "CSV of result rows"),
        ("out", REQUIRED, str, "output JSON summary"),
    ],
    "verify-theory": [
        ("n-identity", 100, int, "random triples for the identity"),
        ("n-bounds", 1000, int, "random triples for the bounds"),
        ("n-tight", 20, int, "tightness constructions"),
        ("n-ratio", 100, int, "triples per discount for the bound ratio"),
        ("out", None, str, "output JSON report (default stdout)"),
    ],
}


def _key(flag):
    return flag.replace("-", "_")


SUMMARIES = {
    "gen-env": "write a gridworld or random MDP",
    "gen-data": "collect an offline dataset from an MDP",
    "extract": "pessimistic value iteration: pi* and q* from a dataset",
    "distill": "optimise a synthetic dataset",
    "eval": "score synthetic data and the random-selection baseline",
    "verify-theory": "check the gap identity and bounds on random MDPs",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obdkit", description="Offline behaviour distillation on tabular MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, spec in SPECS.items():
        p = sub.add_parser(name, help=SUMMARIES[name], description=SUMMARIES[name])
        for flag, default, typ, text in COMMON + spec:
            shown = "required" if default is REQUIRED else f"default {default}"
            # defaults are applied after merging with --config
            p.add_argument(f"--{flag}", type=typ, default=None, help=f"{text} ({shown})")
    return parser


def resolve(command, ns) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    spec = COMMON + SPECS[command]
    known = {_key(f): d for f, d, _, _ in spec}
    types = {_key(f): t for f, _, t, _ in spec}
    cfg = {k: d for k, d in known.items() if d is not REQUIRED}
    if ns.config:
        try:
            with open(ns.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
        for k, v in doc.items():
            k = _key(k)
            if k not in known or k == "config":
                raise UsageError(f"unknown config key '{k}' for {command}")
            cfg[k] = types[k](v) if v is not None else None
    for k in known:
        v = getattr(ns, k)
        if v is not None:
            cfg[k] = v
    missing = [k for k, d in known.items() if d is REQUIRED and cfg.get(k) is None]
    if missing:
        raise UsageError("missing required " + ", ".join("--" + m.replace("_", "-") for m in missing))
    cfg.pop("config", None)
    cfg["command"] = command
    return cfg


def _pair(text, flag):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"{flag} expects AxB, got '{text}'") from None


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=None)


def _read(loader, path, what):
    try:
        return loader(path)
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} file {path} is not valid JSON: {exc}") from None
    except KeyError as exc:
        raise ValidationError(f"{what} file {path} is missing field {exc}") from None


def _check_extraction(ex, dataset):
    shape = ex.pi_star.probs.shape
    if shape != (dataset.n_states, dataset.n_actions) or ex.q_star.shape != shape:
        raise ValidationError(
            f"extraction has shape {shape} (q_star {ex.q_star.shape}) but dataset has "
            f"n_states={dataset.n_states}, n_actions={dataset.n_actions}"
        )


def _check_syn(syn, mdp):
    if syn.state_vectors.shape[1] != mdp.n_states or syn.target_logits.shape[1] != mdp.n_actions:
        raise ValidationError(
            f"synthetic data has state width {syn.state_vectors.shape[1]} and action width "
            f"{syn.target_logits.shape[1]} but MDP has n_states={mdp.n_states}, n_actions={mdp.n_actions}"
        )


# -- subcommands ------------------------------------------------------------

def cmd_gen_env(cfg):
    if (cfg["gridworld"] is None) == (cfg["random"] is None):
        raise UsageError("give exactly one of --gridworld WxH or --random SxA")
    if cfg["gridworld"] is not None:
        w, h = _pair(cfg["gridworld"], "--gridworld")
        mdp = make_gridworld(w, h, goal_reward=cfg["goal_reward"], step_reward=cfg["step_reward"],
                             slip_prob=cfg["slip"], gamma=cfg["gamma"])
    else:
        s, a = _pair(cfg["random"], "--random")
        mdp = make_random_mdp(s, a, cfg["branching"], cfg["sparsity"], cfg["gamma"], cfg["seed"])
    doc = mdp.to_dict()
    doc["config"] = cfg
    _write_json(cfg["out"], doc)
    return EXIT_OK


def cmd_gen_data(cfg):
    tier = cfg["tier"].replace("-", "_")
    if tier not in CLI_TIERS:
        raise UsageError(f"--tier must be one of {', '.join(t.replace('_', '-') for t in CLI_TIERS)}")
    mdp = _read(load_mdp, cfg["mdp"], "MDP")
    ds = make_tier_dataset(mdp, tier, cfg["n"], cfg["seed"])
    ds.meta = cfg
    save_dataset(ds, cfg["out"])
    return EXIT_OK


def cmd_extract(cfg):
    dataset = _read(load_dataset, cfg["data"], "dataset")
    gamma = cfg["gamma"]
    if cfg["mdp"] is not None:
        mdp = _read(load_mdp, cfg["mdp"], "MDP")
        dataset.check_against(mdp)
        gamma = mdp.gamma if gamma is None else gamma
    gamma = 0.9 if gamma is None else gamma
    cfg["gamma"] = gamma
    ex = extract(dataset, ExtractionConfig(gamma=gamma, pessimism_penalty=cfg["penalty"],
                                           count_threshold=cfg["threshold"],
                                           softmax_temperature=cfg["temperature"]))
    doc = ex.to_dict()
    doc["run_config"] = cfg
    _write_json(cfg["out"], doc)
    return EXIT_OK


def cmd_distill(cfg):
    objective = cfg["objective"].replace("-", "_")
    mode = cfg["mode"].replace("-", "_")
    mdp = _read(load_mdp, cfg["mdp"], "MDP")
    dataset = _read(load_dataset, cfg["data"], "dataset")
    dataset.check_against(mdp)
    if cfg["extraction"] is not None:
        ex = _read(Extraction.load, cfg["extraction"], "extraction")
        _check_extraction(ex, dataset)
        pi_star, q_star = ex.pi_star, ex.q_star
    elif objective == "dbc":
        pi_star = q_star = None
    else:
        raise UsageError(f"--objective {cfg['objective']} needs --extraction")
    try:
        config = DistillConfig(
            objective=objective, n_syn=cfg["n_syn"], inner_steps=cfg["inner_steps"],
            outer_steps=cfg["outer_steps"],
            inner_optimizer=OptimizerSpec("gd_momentum" if cfg["inner_momentum"] else "gd",
                                          lr=cfg["inner_lr"], momentum=cfg["inner_momentum"]),
            outer_lr=cfg["outer_lr"], outer_momentum=cfg["outer_momentum"], batch_size=cfg["batch_size"],
            av_pbc_mode=mode, eval_interval=cfg["eval_interval"], seed=cfg["seed"],
        )
        protocol = EvalProtocol(steps=cfg["eval_steps"], n_seeds=cfg["eval_seeds"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = distill(mdp, dataset, pi_star, q_star, config, protocol=protocol, n_jobs=cfg["jobs"])
    report.synthetic.save(cfg["out"], config={
        "run_config": cfg, "distill_config": report.config_dict(), "eval_protocol": asdict(protocol),
        "records": [asdict(r) for r in report.records],
        "final_return": report.final_return(),
        "final_return_note": "mean normalised return over the last 5 evaluations",
    })
    if cfg["report"]:
        report.write_csv(cfg["report"])
    return EXIT_OK


def cmd_eval(cfg):
    mdp = _read(load_mdp, cfg["mdp"], "MDP")
    if cfg["syn"] is None and cfg["baseline_data"] is None:
        raise UsageError("give --syn, --baseline-data or both")
    if cfg["sweep"] not in ("none", "arch", "optimizer", "all"):
        raise UsageError("--sweep must be none, arch, optimizer or all")
    protocol = EvalProtocol(steps=cfg["steps"], optimizer=OptimizerSpec("gd", lr=cfg["lr"]),
                            n_seeds=cfg["seeds"], seed_offset=cfg["seed"],
                            ensemble_k=max(cfg["ensemble"], 1))
    rows = {}
    if cfg["syn"] is not None:
        syn = _read(SyntheticDataset.load, cfg["syn"], "synthetic dataset")
        _check_syn(syn, mdp)
        rows["synthetic"] = evaluate_synthetic(syn, mdp, protocol, n_jobs=cfg["jobs"])
        if cfg["ensemble"] > 0:
            rows[f"ensemble-{cfg['ensemble']}"] = ensemble_evaluate(syn, mdp, protocol)
        if cfg["sweep"] in ("arch", "all"):
            for name, (res, _) in cross_architecture(syn, mdp, protocol, ARCH_VARIANTS).items():
                rows[f"arch:{name}"] = res
        if cfg["sweep"] in ("optimizer", "all"):
            for name, (res, _) in cross_optimizer(syn, mdp, protocol, OPTIMIZER_VARIANTS).items():
                rows[f"optimizer:{name}"] = res
    if cfg["baseline_data"] is not None:
        dataset = _read(load_dataset, cfg["baseline_data"], "dataset")
        dataset.check_against(mdp)
        rows["random-selection"] = random_selection_baseline(
            dataset, cfg["n_syn"], mdp, protocol, n_repeats=cfg["repeats"], seed=cfg["seed"])
    write_results_json(rows, cfg["out"], config=cfg)
    if cfg["csv"]:
        write_results_csv(rows, cfg["csv"])
    return EXIT_OK


def cmd_verify_theory(cfg):
    report = verify_theory(cfg["n_identity"], cfg["n_bounds"], cfg["n_tight"], cfg["n_ratio"], cfg["seed"])
    report["config"] = cfg
    text = json.dumps(report, indent=2)
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK if report["passed"] else EXIT_CHECK


COMMANDS = {
    "gen-env": cmd_gen_env,
    "gen-data": cmd_gen_data,
    "extract": cmd_extract,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "verify-theory": cmd_verify_theory,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    try:
        cfg = resolve(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"obdkit {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ValueError) as exc:
        print(f"obdkit {ns.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"obdkit {ns.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
