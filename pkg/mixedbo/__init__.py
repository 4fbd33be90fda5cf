#!/usr/bin/env python3
import argparse
import collections
import json
import os
import sys
import unittest

import attr
import singer

from mixedbo import acqopt
from mixedbo import acquisition
from mixedbo import harness
from mixedbo import problems

LOGGER = singer.get_logger()


def build_parser():
    parser = argparse.ArgumentParser(prog='mixedbo')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Run Bayesian optimization replications')
    run.add_argument('--config', help='Experiment config JSON file; flags override it')
    run.add_argument('--problem', choices=sorted(problems.PROBLEMS))
    run.add_argument('--method', choices=acqopt.METHODS)
    run.add_argument('--acqf', choices=sorted(acquisition.ALIASES))
    run.add_argument('--iters', type=int)
    run.add_argument('--reps', type=int)
    run.add_argument('--seed', type=int)
    run.add_argument('--n-init', type=int)
    run.add_argument('--mc-samples', type=int)
    run.add_argument('--tau', type=float)
    run.add_argument('--lr', type=float)
    run.add_argument('--tr', choices=('on', 'off'))
    run.add_argument('--noise-sd', type=float)
    run.add_argument('--out', help='Directory for the CSV and JSONL exports')

    regret = commands.add_parser('regret', help='Log-regret curves from exported runs')
    regret.add_argument('--in', dest='input', required=True,
                        help='JSONL file or directory of JSONL files')
    regret.add_argument('--pool', action='store_true',
                        help='Take f* as the best incumbent across every method of a problem '
                             'instead of its stored optimum')

    commands.add_parser('selftest', help='Run the invariant test suites')
    return parser


def experiment_config(args):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    flags = {'problem': args.problem, 'method': args.method, 'acquisition': args.acqf,
             'n_iterations': args.iters, 'replications': args.reps, 'seed': args.seed,
             'n_init': args.n_init, 'output_dir': args.out, 'noise_sd': args.noise_sd}
    if args.tr is not None:
        flags['trust_region'] = args.tr == 'on'
    optimizer = dict(cfg.optimizer)
    for key, value in (('mc_samples', args.mc_samples), ('tau', args.tau),
                       ('learning_rate', args.lr)):
        if value is not None:
            optimizer[key] = value
    overrides = {k: v for k, v in flags.items() if v is not None}
    try:
        return attr.evolve(cfg, optimizer=optimizer, **overrides)
    except (TypeError, ValueError) as exc:
        raise harness.ConfigError("Invalid run options: {}".format(exc))


def do_run(args):
    cfg = experiment_config(args)
    records = harness.run_experiment(cfg)
    summary = [{'problem': r.problem, 'method': r.method, 'replicate': r.replicate,
                'final_incumbent': r.incumbents[-1] if r.incumbents else None}
               for r in records]
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write('\n')
    return 0


def _reference(members, f_star):
    """The stored optimum when known, capped by the best incumbent across members."""
    incumbents = [v for r in members for v in r.incumbents if v is not None]
    best = min(incumbents or [v for r in members for v in r.objectives])
    # noisy runs can observe values below the noise-free optimum
    return best if f_star is None else min(f_star, best)


def do_regret(args):
    records = harness.load_records(args.input)
    if not records:
        raise harness.EmptyHistory("No run records found in {}".format(args.input))
    groups = collections.OrderedDict()
    by_problem = collections.defaultdict(list)
    for record in records:
        groups.setdefault((record.problem, record.method), []).append(record)
        by_problem[(record.problem, record.problem_seed)].append(record)

    references = {}
    for (problem_id, problem_seed), members in by_problem.items():
        stored = None if args.pool else problems.get_problem(problem_id, problem_seed).optimum
        references[(problem_id, problem_seed)] = _reference(members, stored)

    curves = []
    for (problem_id, method), members in groups.items():
        f_star = min(references[(problem_id, r.problem_seed)] for r in members)
        band = harness.aggregate(harness.compute_regret(members, f_star))
        curves.append({'problem': problem_id, 'method': method, 'replications': len(members),
                       'f_star': f_star, 'mean': band.mean.tolist(),
                       'lower': band.lower.tolist(), 'upper': band.upper.tolist()})
    json.dump(curves, sys.stdout, indent=2)
    sys.stdout.write('\n')
    return 0


def do_selftest(args):
    package_dir = os.path.dirname(os.path.realpath(__file__))
    suite = unittest.defaultTestLoader.discover(os.path.join(package_dir, 'tests'),
                                                top_level_dir=os.path.dirname(package_dir))
    result = unittest.TextTestRunner(verbosity=2).run(suite)
    return 0 if result.wasSuccessful() else 1


COMMANDS = {'run': do_run, 'regret': do_regret, 'selftest': do_selftest}


def main_impl(argv=None):
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)

def main():
    try:
        return main_impl()
    except Exception as exc:
        LOGGER.critical(exc)
        raise exc

if __name__ == '__main__':
    sys.exit(main())
