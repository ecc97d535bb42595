"""Command-line surface: expand, solve, mc, compare, sweep and report."""
import argparse
import logging
import math
import time

import numpy as np

from cli.utils import format_duration, output_path, parse_floats, parse_orders, snapshot_indices
from common import constants
from common.config import load_config
from common.errors import ConfigError, NumericalError, ValidationError
from common.model import EvolutionModel
from common.table import ResultTable
from engine.expansion import build_expansion, expansion_report
from engine.oracle import direct_solve, mc_estimate
from engine.utils import config_hash, log_duration, read_thread_count
from engine.validation import run_sweep

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(prog=constants.TOOL_NAME,
                                     description="Asymptotic expansion of a switching transport evolution")
    parser.add_argument("--version", action="version",
                        version=f"{constants.TOOL_NAME} {constants.TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in constants.SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="JSON model config")
        sub.add_argument("--out", default=constants.DEFAULT_OUT_DIR, help="output directory")
        sub.add_argument("--eps", help="epsilon (comma-separated list for compare/sweep)")
        sub.add_argument("--t", type=float, help="evaluation time (default validation.t_eval)")
        sub.add_argument("--u", type=float, help="start position for mc")
        sub.add_argument("--x", type=int, default=0, help="start state for mc")
        sub.add_argument("--paths", type=int, help="number of mc paths (default mc.n_paths)")
        sub.add_argument("--seed", type=int, help="mc seed (default mc.seed)")
        sub.add_argument("--orders", help="truncation orders, e.g. 0,1,2")
        verbosity = sub.add_mutually_exclusive_group()
        verbosity.add_argument("--verbose", action="store_true", help="log at DEBUG level")
        verbosity.add_argument("--quiet", action="store_true", help="log warnings only")
    return parser


def setup_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


class EvolutionCli:
    """One CLI run: loads the config once and dispatches to a subcommand."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config)
        self.config_hash = config_hash(self.config)
        self.model = EvolutionModel.from_config(self.config)
        self.t = self.config.validation.t_eval if args.t is None else args.t
        self.solver_options = {
            "dt_factor": self.config.oracle.dt_factor,
            "cfl": self.config.oracle.cfl,
            "richardson": self.config.oracle.richardson,
        }

    def run(self):
        """Run the subcommand and write its table; returns the CSV path."""
        subcommand = self.args.subcommand
        print(f"config hash: {self.config_hash}")
        logger.info(f"Running {subcommand} with config {self.args.config} ({self.config_hash})")

        if subcommand == "expand":
            table = self.expand()
        elif subcommand == "solve":
            table = self.solve()
        elif subcommand == "mc":
            table = self.mc()
        elif subcommand == "compare":
            table = self.compare()
        elif subcommand == "sweep":
            table = self.sweep()
        elif subcommand == "report":
            table = expansion_report(self.build(), self.config_hash)
        else:
            raise ValidationError("subcommand", f"unknown subcommand {subcommand!r}")

        path = table.write(output_path(self.args.out, subcommand, self.config_hash))
        print(path)
        return path

    def build(self):
        with log_duration(f"Expansion to order {self.config.order}"):
            return build_expansion(self.model, self.config.order,
                                   solvability_tol=self.config.validation.solvability_tol)

    def single_epsilon(self):
        if self.args.eps is None:
            raise ValidationError("--eps", f"{self.args.subcommand} needs a single epsilon")
        values = parse_floats(self.args.eps, "--eps")
        if len(values) != 1 or values[0] <= 0:
            raise ValidationError("--eps", f"expected one positive epsilon, got {self.args.eps!r}")
        return values[0]

    def epsilons(self):
        values = self.config.epsilons if self.args.eps is None else parse_floats(self.args.eps, "--eps")
        if any(eps <= 0 for eps in values):
            raise ValidationError("--eps", f"epsilons must be positive, got {values}")
        return values

    def orders(self, result):
        """Requested orders, or every order whose certificate term is available."""
        if self.args.orders is None:
            return list(range(max(result.order, 1)))
        orders = parse_orders(self.args.orders)
        if max(orders) > result.order:
            raise ValidationError("--orders", f"order {max(orders)} requested, expansion.order is {result.order}")
        return orders

    def expand(self):
        result = self.build()
        table = ResultTable(["k", "kind", "t_or_tau", "state", "u", "value"], config_hash=self.config_hash)
        nodes = self.model.grid.nodes
        n_states = self.model.n_states
        time_rows = snapshot_indices(len(result.times), constants.EXPAND_SNAPSHOTS)
        tau_rows = snapshot_indices(result.layer.n_tau, constants.EXPAND_SNAPSHOTS)
        taus = result.layer.taus

        for k in range(result.order + 1):
            regular = result.u(k).values
            correction = result.c(k).values
            for j in time_rows:
                t = result.times[j]
                for x in range(n_states):
                    for u, value in zip(nodes, regular[j, x]):
                        table.add_row([k, constants.KIND_REGULAR, t, x, u, value])
                for x in range(n_states):
                    for u, value in zip(nodes, correction[j]):
                        table.add_row([k, constants.KIND_CORRECTION, t, x, u, value])
            if k == 0:
                continue
            singular = result.w(k).values
            for j in tau_rows:
                for x in range(n_states):
                    for u, value in zip(nodes, singular[j, x]):
                        table.add_row([k, constants.KIND_SINGULAR, taus[j], x, u, value])
        return table

    def solve(self):
        epsilon = self.single_epsilon()
        solution = direct_solve(self.model, epsilon, [self.t], **self.solver_options)
        table = ResultTable(["t", "state", "u", "value"], config_hash=self.config_hash)
        values = solution.at(self.t).values
        for x in range(self.model.n_states):
            for u, value in zip(self.model.grid.nodes, values[x]):
                table.add_row([self.t, x, u, value])
        logger.info(f"Solver error estimate {solution.error_estimate:.3e}")
        return table

    def mc(self):
        epsilon = self.single_epsilon()
        if self.args.u is None:
            raise ValidationError("--u", "mc needs a start position")
        estimate = mc_estimate(
            self.model, epsilon, self.t, self.args.u, self.args.x,
            n_paths=self.config.n_paths if self.args.paths is None else self.args.paths,
            seed=self.config.seed if self.args.seed is None else self.args.seed,
            workers=read_thread_count(),
        )
        columns = ["t", "u", "state", "mean", "stderr", "n_paths", "seed"]
        row = estimate.as_row()
        return ResultTable(columns, [[row[name] for name in columns]], config_hash=self.config_hash)

    def _sweep(self):
        result = self.build()
        orders = self.orders(result)
        with log_duration(f"Sweep over {len(self.epsilons())} epsilons"):
            return run_sweep(self.model, result, orders, self.epsilons(), self.t,
                             workers=read_thread_count(), solver_options=self.solver_options)

    def compare(self):
        report = self._sweep()
        table = ResultTable(["N", "epsilon", "error", "solver_error", "certified"], config_hash=self.config_hash)
        for N in report.orders:
            for eps in report.epsilons:
                certificate = report.certificates[(N, eps)]
                table.add_row([N, eps, report.errors[(N, eps)], certificate.solver_error, certificate.passed])
        return table

    def sweep(self):
        report = self._sweep()
        table = ResultTable(["N", "slope", "band_low", "band_high", "certified"], config_hash=self.config_hash)
        for N in report.orders:
            fit = report.slopes.get(N)
            if fit is None:
                table.add_row([N, math.nan, math.nan, math.nan, False])
                continue
            table.add_row([N, fit.slope, fit.band_low, fit.band_high, report.certified(N)])
        return table


def run_cli(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else constants.EXIT_CONFIG_ERROR

    setup_logging(args)
    start = time.perf_counter()
    try:
        EvolutionCli(args).run()
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return constants.EXIT_CONFIG_ERROR
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return constants.EXIT_NUMERICAL_ERROR
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        logger.error(f"Numerical failure: {e}")
        return constants.EXIT_NUMERICAL_ERROR
    logger.info(f"{args.subcommand} finished in {format_duration(time.perf_counter() - start)}")
    return constants.EXIT_OK
