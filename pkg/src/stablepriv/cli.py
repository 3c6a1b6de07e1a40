"""Command-line entry point.

Every subcommand accepts the global flags ``--seed``, ``--out``,
``--format`` and ``--threads``, and ``--config FILE``: an INI file whose
``[global]`` and ``[<subcommand>]`` sections supply flag values under the
same names (``class = t2.ini``, ``runs = 500``, ``witness = true``).
Flags on the command line win over the file.

Exit status: 0 on success, 1 on a usage or input error, 2 when a checked
guarantee fails.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import __version__
from .experiments import FORMATS, ExperimentConfig, Report, emit_report, run_experiment
from .io import SpecError, load_class_spec, load_sample
from .littlestone import find_shattered_tree, ldim
from .pipeline import m_params
from .soa import soa_run
from .stability import stability_params

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2
#: the params table stays printable (and quick) up to this dimension
MAX_PARAMS_D = 12


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _unit(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--out", type=Path, help="write the machine-readable report here")
    g.add_argument("--format", choices=FORMATS, default="json", help="report format (default json)")
    g.add_argument("--threads", type=_positive_int, default=1, help="worker threads for batch runs")
    g.add_argument("--config", type=Path, help="INI file with default flag values")

    p = _Parser(prog="stablepriv", description="Globally stable and private learning of finite classes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    s = cmd("ldim", "Littlestone dimension of a class")
    s.add_argument("--class", dest="class_file", type=Path, required=True)
    s.add_argument("--witness", action="store_true", help="also print a shattered tree")

    s = cmd("soa-run", "run the SOA over a sample file")
    s.add_argument("--class", dest="class_file", type=Path, required=True)
    s.add_argument("--sample", type=Path, required=True, help="CSV with point,label columns")

    s = cmd("stability", "frequency of G's outputs over many runs")
    s.add_argument("--class", dest="class_file", type=Path, required=True)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--runs", type=_positive_int, default=1000)
    s.add_argument("--n", type=_positive_int, help="override n (requires --cap)")
    s.add_argument("--cap", type=int, help="override the draw cap N (requires --n)")

    s = cmd("mistakes", "SOA mistake histogram on random realizable sequences")
    s.add_argument("--class", dest="class_file", type=Path, required=True)
    s.add_argument("--runs", type=_positive_int, default=10000)
    s.add_argument("--length", type=int, default=50)

    s = cmd("draws", "draw counts of the capped tournament sampler")
    s.add_argument("--class", dest="class_file", type=Path, required=True)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--runs", type=_positive_int, default=1000)
    s.add_argument("--n", type=_positive_int)
    s.add_argument("--cap", type=int)

    for name, runs, help_ in (
        ("private-learn", 1, "run the private learner"),
        ("e2e", 200, "success rate of the private learner over many trials"),
    ):
        s = cmd(name, help_)
        s.add_argument("--class", dest="class_file", type=Path, required=True)
        s.add_argument("--alpha", type=_unit, default=0.5)
        s.add_argument("--beta", type=float, default=0.2)
        s.add_argument("--epsilon", type=float, default=1.0)
        s.add_argument("--delta", type=float, default=1e-6)
        s.add_argument("--trials", dest="runs", type=_positive_int, default=runs)
        s.add_argument("--force", action="store_true", help="allow d >= 2 (astronomical sample sizes)")

    s = cmd("params", "parameter table for dimension d")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--delta", type=float, default=1e-6)

    s = cmd("dp-audit", "exact privacy audits")
    s.add_argument("--mode", choices=("em", "hist"), default="em")
    s.add_argument("--class", dest="class_file", type=Path, help="hypothesis list for em mode")
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--delta", type=float, default=1e-6)
    s.add_argument("--pairs", dest="runs", type=_positive_int, default=100)
    s.add_argument("--max-count", dest="max_count", type=int, default=200)
    return p


# --------------------------------------------------------------------- config files


def _config_argv(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Splice values from ``--config`` into ``argv`` ahead of explicit flags.

    Global flags given before the subcommand are moved after it.
    """
    subs = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    pos = next((i for i, a in enumerate(argv) if a in subs), None)
    if pos is not None and pos > 0 and not {"-h", "--help", "--version"} & set(argv[:pos]):
        argv = argv[pos : pos + 1] + argv[:pos] + argv[pos + 1 :]
        pos = 0
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    cp = configparser.ConfigParser()
    try:
        if not cp.read(known.config):
            raise UsageError(f"cannot read config file {known.config}")
    except configparser.Error as exc:
        raise UsageError(f"bad config file: {exc}") from exc
    if pos is None:
        return argv
    command = argv[pos]
    sp = subs[command]
    flags = {}
    for action in sp._actions:  # noqa: SLF001
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:].replace("-", "_")] = (opt, action)
    extra = []
    for section in ("global", command):
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section, raw=True):
            name = "class" if key in ("class", "class_file") else key.replace("-", "_")
            if name == "config":
                continue
            if name not in flags:
                raise UsageError(f"unknown key {key!r} in [{section}] of {known.config}")
            opt, action = flags[name]
            if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                if cp.getboolean(section, key):
                    extra.append(opt)
            else:
                extra += [opt, value]
    return argv[: pos + 1] + extra + argv[pos + 1 :]


# --------------------------------------------------------------------- commands


def _spec(args):
    if args.class_file is None:
        raise UsageError("--class is required")
    return load_class_spec(args.class_file)


def _cmd_ldim(args) -> tuple[Report, str]:
    spec = _spec(args)
    H = spec.concept_class
    d = ldim(H)
    text = [f"ldim: {d}"]
    summary = {"ldim": d, "members": len(H), "domain_size": H.domain_size}
    if args.witness and d >= 0:
        tree = find_shattered_tree(H, d)
        text.append(tree.render())
        summary["witness"] = tree.render()
    return Report("ldim", {"class": str(args.class_file)}, summary), "\n".join(text)


def _cmd_soa_run(args) -> tuple[Report, str]:
    spec = _spec(args)
    H = spec.concept_class
    S = load_sample(args.sample, H.domain_size)
    r = soa_run(H, S)
    vec = " ".join(f"{y:+d}" for y in r.final_hypothesis.labels)
    summary = {
        "mistakes": r.mistake_count,
        "mistake_positions": list(r.mistake_positions),
        "final_hypothesis": list(r.final_hypothesis.labels),
    }
    text = f"mistakes: {r.mistake_count}\npositions: {list(r.mistake_positions)}\nfinal: {vec}"
    return Report("soa-run", {"class": str(args.class_file), "sample": str(args.sample)}, summary), text


def _cmd_params(args) -> tuple[Report, str]:
    if not 0 <= args.d <= MAX_PARAMS_D:
        raise UsageError(f"--d must lie in 0..{MAX_PARAMS_D}")
    g = stability_params(args.d, args.alpha)
    mp = m_params(args.d, args.alpha, args.beta, args.epsilon, args.delta)
    summary = {"stability": g.as_dict(), "private_learner": mp.as_dict()}
    lines = [f"stability parameters (d={args.d}, alpha={g.alpha})"]
    lines += [f"  {k:<15} {v}" for k, v in g.as_dict().items()]
    lines.append(f"private learner (G at alpha/2 = {mp.g_params.alpha})")
    lines += [f"  {k:<15} {v}" for k, v in mp.as_dict().items()]
    rows = [{"table": "stability", "key": k, "value": str(v)} for k, v in g.as_dict().items()]
    rows += [{"table": "private_learner", "key": k, "value": str(v)} for k, v in mp.as_dict().items()]
    cols = {"table": "str", "key": "str", "value": "str"}
    return Report("params", {"d": args.d, "alpha": args.alpha}, summary, cols, rows), "\n".join(lines)


def _experiment(args, kind) -> tuple[Report, str]:
    hist_audit = kind == "dp-audit" and args.mode == "hist"
    spec = None if hist_audit else _spec(args)
    fields = {k: getattr(args, k) for k in ("runs", "seed", "alpha", "beta", "epsilon", "delta", "k", "length",
                                            "n", "cap", "mode", "max_count", "force", "threads") if hasattr(args, k)}
    if hist_audit:
        fields["runs"] = 1
    rep = run_experiment(ExperimentConfig(kind, spec, **fields))
    s = rep.summary
    lines = [f"{kind}: {len(rep.rows)} rows"]
    for key in ("max_frequency", "max_frequency_hypothesis", "eta_guarantee", "fail_rate", "mean_draws",
                "max_draws", "expected_bound", "success_rate", "success_interval", "worst_log_ratio",
                "release_probability_count_1", "max_mistakes", "histogram"):
        if key in s:
            lines.append(f"  {key}: {s[key]}")
    if kind == "e2e" and args.command == "private-learn":
        for r in rep.rows:
            lines.append(f"  trial {r['trial']}: {r['hypothesis_fingerprint']} loss={r['population_loss']} "
                         f"released={r['released']} pruned={r['pruned']}")
    for name, ok in rep.checks.items():
        lines.append(f"  check {name}: {'pass' if ok else 'FAIL'}")
    return rep, "\n".join(lines)


def _dispatch(args) -> tuple[Report, str]:
    c = args.command
    if c == "ldim":
        return _cmd_ldim(args)
    if c == "soa-run":
        return _cmd_soa_run(args)
    if c == "params":
        return _cmd_params(args)
    if c == "dp-audit" and args.mode == "em" and args.class_file is None:
        raise UsageError("dp-audit --mode em needs --class")
    kind = {"private-learn": "e2e"}.get(c, c)
    return _experiment(args, kind)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_config_argv(parser, argv))
    except UsageError as exc:
        print(f"stablepriv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        report, text = _dispatch(args)
    except (UsageError, SpecError, ValueError, OSError) as exc:
        print(f"stablepriv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"stablepriv: assertion failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    print(text)
    if args.out is not None:
        for path in emit_report(report, args.out, args.format):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_CHECK


def console_main() -> None:  # pragma: no cover
    sys.exit(main())
