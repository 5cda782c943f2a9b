"""
lss-tools command line: analysis, simulation and symmetry checks for
linearly singular and generalized nonholonomic systems.

    python main.py analyze --scenario rosenberg --at "x=0,y=1,z=0,x'=2,y'=3"
    python main.py simulate --scenario rosenberg --t1 10 --dt 1e-3 --out traj.csv
    python main.py check-symmetry --scenario example1
    python main.py check-constant --scenario rosenberg --name px
    python main.py scenario --list
    python main.py --self-test

Exit codes: 0 ok, 1 check failed, 2 usage, 3 evaluation error.
"""

import argparse
import sys
import time

from scripts import linalg
from scripts.commands import RunConfig, cmd_analyze, cmd_check, cmd_simulate
from scripts.common import LssError, SpecFileError, UsageError
from scripts.scenarios import SCENARIOS, get, run_self_test
from scripts.settings_manager import SettingsError, SettingsManager
from scripts.spec_file import load, parse_assignments
from utils import report
from utils.console import elapsed_time, log_error, log_info, log_ok, set_quiet

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_EVALUATION = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad input, which matches EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        log_error(message, tag="Usage")
        sys.exit(EXIT_USAGE)


def _add_source(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--scenario', help=f"built-in scenario ({', '.join(sorted(SCENARIOS))})")
    source.add_argument('--spec', help='path to a .lss system description')
    parser.add_argument('--param', action='append', default=[], metavar='K=V',
                        help='override or add [params] entries (repeatable, comma separated)')


def _add_tolerances(parser):
    parser.add_argument('--tol-rank', help='rank cut-off factor on sigma_max * max(rows, cols)')
    parser.add_argument('--tol-img', help='image-membership factor (defaults to --tol-rank)')


def _add_sampling(parser):
    parser.add_argument('--samples', help='quasi-random points drawn from the [box] section')
    parser.add_argument('--seed', help='sequence seed (same seed, same points)')


def build_parser():
    parser = _Parser(prog='lss-tools', description='Linearly singular and generalized nonholonomic systems')
    parser.add_argument('--quiet', action='store_true', help='only warnings, errors and the report')
    parser.add_argument('--self-test', action='store_true', help='run the acceptance checks of every scenario')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    analyze = sub.add_parser('analyze', help='ranks, classification, multipliers and constrained field at points')
    _add_source(analyze)
    _add_tolerances(analyze)
    analyze.add_argument('--at', action='append', default=[], metavar='K=V,...',
                         help='point (repeatable); missing coordinates come from [initial] and are lifted onto M')
    analyze.add_argument('--out', help='write the report here instead of stdout')

    simulate = sub.add_parser('simulate', help='RK4 with projection onto M, CSV output')
    _add_source(simulate)
    _add_tolerances(simulate)
    simulate.add_argument('--x0', default='', metavar='K=V,...', help='initial point (defaults from [initial])')
    simulate.add_argument('--t1', help='end time')
    simulate.add_argument('--dt', help='time step')
    simulate.add_argument('--out', help='CSV file (stdout when omitted)')
    simulate.add_argument('--monitor', action='append', default=[], metavar='NAME=EXPR',
                          help='extra quantity to track besides the [constant] section')

    for name, what in (('check-symmetry', 'symmetry'), ('check-constant', 'constant')):
        check = sub.add_parser(name, help=f"sampling check of the declared {what}")
        _add_source(check)
        _add_tolerances(check)
        _add_sampling(check)
        check.add_argument('--out', help='write the report here instead of stdout')
        if what == 'constant':
            check.add_argument('--name', action='append', default=[], help='only these [constant] entries')
            check.add_argument('--expr', action='append', default=[], metavar='NAME=EXPR',
                               help='extra candidate constant')

    scenario = sub.add_parser('scenario', help='built-in scenarios')
    group = scenario.add_mutually_exclusive_group(required=True)
    group.add_argument('--list', action='store_true', help='names and descriptions')
    group.add_argument('--show', metavar='NAME', help='print the scenario file')

    settings = sub.add_parser('settings', help='stored defaults')
    group = settings.add_mutually_exclusive_group(required=True)
    group.add_argument('--show', action='store_true', help='print the stored settings')
    group.add_argument('--set', metavar='KEY=VALUE', help='store a default')
    return parser


def _assignments(text):
    try:
        return parse_assignments(text)
    except SpecFileError as e:
        raise UsageError(str(e)) from None


def _overrides(args):
    out = {}
    for text in args.param:
        out.update(_assignments(text))
    return out


def _load_spec(args):
    overrides = _overrides(args)
    if args.scenario:
        return get(args.scenario).load(overrides)
    return load(args.spec, overrides)


def _config(args, settings: SettingsManager) -> RunConfig:
    config = RunConfig(
        tol_rank=settings.resolve('tol_rank', getattr(args, 'tol_rank', None)),
        tol_img=settings.resolve('tol_img', getattr(args, 'tol_img', None)),
        manifold_tol=settings.get('manifold_tol'),
        projection_tol=settings.get('projection_tol'),
        projection_max_iter=settings.get('projection_max_iter'),
        symmetry_tol=settings.get('symmetry_tol'),
        sample_count=settings.resolve('sample_count', getattr(args, 'samples', None)),
        sample_seed=settings.resolve('sample_seed', getattr(args, 'seed', None)),
    )
    if config.tol_rank <= 0 or (config.tol_img is not None and config.tol_img <= 0):
        raise UsageError("tolerances must be positive")
    if config.sample_count <= 0:
        raise UsageError("--samples must be positive")
    linalg.configure_tolerances(config.tol_rank, config.tol_img)
    return config


def _pairs(texts, spec):
    pairs = []
    for text in texts:
        if '=' not in text:
            raise UsageError(f"expected NAME=EXPR, got '{text}'")
        name, expr = text.split('=', 1)
        pairs.append((name.strip(), spec.expression(expr.strip())))
    return pairs


def _emit(document, out):
    report.write(document, path=out, stream=None if out else sys.stdout)
    if out:
        log_info(f"report written to {out}", tag="Report")


def run(args, settings: SettingsManager) -> int:
    if args.self_test:
        config = _config(args, settings)
        outcomes = run_self_test(config)
        for outcome in outcomes:
            line = f"{outcome.scenario}: {outcome.name}" + (f" ({outcome.detail})" if outcome.detail else "")
            if outcome.passed:
                log_ok(line, tag="PASS")
            else:
                log_error(line, tag="FAIL")
        failed = sum(not outcome.passed for outcome in outcomes)
        log_info(f"{len(outcomes) - failed} of {len(outcomes)} checks passed", tag="Self-test")
        return EXIT_CHECK_FAILED if failed else EXIT_OK

    if args.command is None:
        raise UsageError("no command given (see --help)")

    if args.command == 'scenario':
        if args.list:
            for name in sorted(SCENARIOS):
                print(f"{name}\t{SCENARIOS[name].description}")
        else:
            with open(get(args.show).path, 'r', encoding='utf-8') as f:
                sys.stdout.write(f.read())
        return EXIT_OK

    if args.command == 'settings':
        if args.show:
            report.write(settings.settings, stream=sys.stdout)
        else:
            if '=' not in args.set:
                raise UsageError(f"expected KEY=VALUE, got '{args.set}'")
            key, value = args.set.split('=', 1)
            settings.set(key.strip(), value.strip())
            log_ok(f"{key.strip()} = {settings.get(key.strip())}", tag="Settings")
        return EXIT_OK

    config = _config(args, settings)
    spec = _load_spec(args)

    if args.command == 'analyze':
        points = [_assignments(text) for text in args.at]
        _emit(cmd_analyze(spec, points, config).document(), args.out)
        return EXIT_OK

    if args.command == 'simulate':
        try:
            t1 = float(settings.resolve('t1', args.t1))
            dt = float(settings.resolve('dt', args.dt))
        except SettingsError as e:
            raise UsageError(str(e)) from None
        status, traj, summary = cmd_simulate(spec, _assignments(args.x0), t1, dt, args.out, config,
                                             _pairs(args.monitor, spec))
        log_info(f"{summary.steps} steps, max drift {summary.max_drift:.3e}", tag="Simulate")
        for name, deviation in sorted(summary.monitors.items()):
            log_info(f"{name}: max deviation {deviation:.3e}", tag="Monitor")
        return status

    what = 'symmetry' if args.command == 'check-symmetry' else 'constant'
    names = getattr(args, 'name', None)
    expressions = _pairs(getattr(args, 'expr', []), spec)
    status, document = cmd_check(spec, what, config, names=names, expressions=expressions)
    _emit(document, args.out)
    if status == EXIT_OK:
        log_ok(f"{what} check passed", tag="Check")
    else:
        log_error(f"{what} check failed", tag="Check")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_quiet(args.quiet)
    start = time.time()
    try:
        settings = SettingsManager()
        status = run(args, settings)
    except (UsageError, SettingsError) as e:
        log_error(str(e), tag="Usage")
        return EXIT_USAGE
    except SpecFileError as e:
        log_error(str(e), tag="Spec")
        return EXIT_USAGE
    except LssError as e:
        log_error(str(e), tag="Error")
        return EXIT_EVALUATION
    log_info(f"finished in {elapsed_time(time.time() - start)}", tag="Done")
    return status


if __name__ == '__main__':
    sys.exit(main())
