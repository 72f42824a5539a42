"""Commands module for roaflow - parses the command line and runs the pipeline."""

import argparse
import asyncio
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from boundary import FlowStatus, load_curve_csv, run_flow, save_curve_csv, save_history_csv
from config import DEFAULT_HORIZON, EXIT_FLOW, EXIT_INPUT, EXIT_OK, ORACLE_CYCLE_POINTS, ORACLE_T_MAX, RESULTS_DIR
from energy import A_REF_SOURCES, EnergyConfig, evaluate_energy_grid, resolve_a_ref, save_energy_grid
from errors import InputError, RoaflowError
from estimator import (
    QUADRATURE_RULES, TRAPEZOID, format_report, gram_matrices, minimizer,
    minimizer_gradient_flow, save_report,
)
from evaluation_pool import EvaluationPool
from integrator import Termination, derivatives_from_samples, integrate, load_trajectory
from oracle import Membership, hausdorff_distance, reference_limit_cycle, roa_membership, roa_membership_batch
from preset_loader import resolve_settings
from svg_export import export_svg
from systems import system_registry

logger = logging.getLogger(__name__)

# Systems with an oracle reference boundary
REFERENCE_SYSTEMS = {'vdp_reverse'}

# Options whose values may start with a minus sign (e.g. --rect -3,3,-3,3)
VECTOR_OPTIONS = ('--x0', '--rect')


@dataclass
class Command:
    """Represents a command that can be executed."""
    name: str
    handler: Callable[[argparse.Namespace], int]
    description: str
    configure: Callable[[argparse.ArgumentParser], None]


def parse_vector(text: str, name: str = 'vector', length: Optional[int] = None) -> np.ndarray:
    """Parse 'a,b,...' into a float array."""
    try:
        values = np.array([float(v) for v in text.split(',')], dtype=float)
    except (AttributeError, ValueError):
        raise InputError(f"malformed {name} '{text}': expected comma-separated numbers")
    if length is not None and len(values) != length:
        raise InputError(f"{name} needs {length} numbers, got {len(values)} in '{text}'")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{name} must be finite, got '{text}'")
    return values


def _join_vector_options(argv: Optional[Sequence[str]]) -> List[str]:
    """Rewrite `--rect -3,3,...` as `--rect=-3,3,...` so argparse does not read a flag."""
    argv = list(sys.argv[1:] if argv is None else argv)
    joined: List[str] = []
    i = 0
    while i < len(argv):
        if argv[i] in VECTOR_OPTIONS and i + 1 < len(argv):
            joined.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
            continue
        joined.append(argv[i])
        i += 1
    return joined


def _slug(text: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', text)


class CommandProcessor:
    """Registers the subcommands and maps their errors to exit codes."""

    def __init__(self):
        self.commands: Dict[str, Command] = {}
        self._register_commands()

    def _register_commands(self):
        """Register all available commands."""
        self.register('estimate', self.cmd_estimate,
                      "Fit the best linear field to one trajectory", self._configure_estimate)
        self.register('roa', self.cmd_roa,
                      "Estimate the region of attraction with the boundary flow", self._configure_roa)
        self.register('energy-grid', self.cmd_energy_grid,
                      "Evaluate the residual energy on a grid", self._configure_energy_grid)
        self.register('oracle', self.cmd_oracle,
                      "Ground-truth membership and reference limit cycle", self._configure_oracle)

    def register(self, name: str, handler: Callable, description: str,
                 configure: Callable[[argparse.ArgumentParser], None]):
        """Register a new command."""
        self.commands[name] = Command(name=name, handler=handler, description=description,
                                      configure=configure)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog='roaflow',
            description="Trajectory-based linear fits and region-of-attraction estimation",
        )
        sub = parser.add_subparsers(dest='command', required=True)
        for command in self.commands.values():
            command.configure(sub.add_parser(command.name, help=command.description,
                                             description=command.description))
        return parser

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse argv and execute the command.

        Returns:
            Process exit code
        """
        parser = self.build_parser()
        try:
            args = parser.parse_args(_join_vector_options(argv))
        except SystemExit as e:
            # argparse exits 2 on usage errors; usage errors are input errors here
            return EXIT_OK if e.code == 0 else EXIT_INPUT

        command = self.commands[args.command]
        try:
            return command.handler(args)
        except RoaflowError as e:
            logger.error(f"{command.name}: {e}")
            return e.exit_code
        except Exception as e:
            logger.exception(f"Error executing command {command.name}: {e}")
            return EXIT_INPUT

    # ------------------------------------------------------------------
    # estimate

    @staticmethod
    def _configure_estimate(p: argparse.ArgumentParser):
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument('--system', help="system id (vdp_reverse, unbounded, rational, linear:<file>)")
        source.add_argument('--traj', help="trajectory CSV (t,x1..xn[,dx1..dxn])")
        p.add_argument('--x0', help="initial condition a,b,... (with --system)")
        p.add_argument('--horizon', type=float, help="Gram horizon T (default 4.0 with --system, whole file with --traj)")
        p.add_argument('--dt', type=float, default=0.1, help="sample interval (default 0.1)")
        p.add_argument('--rule', choices=QUADRATURE_RULES, default=TRAPEZOID)
        p.add_argument('--method', choices=('direct', 'gradient'), default='direct')
        p.add_argument('--diagnostic', action='store_true',
                       help="pseudo-solve instead of refusing a non-excited trajectory")
        p.add_argument('--out', help="write the report (YAML) to this file")

    def cmd_estimate(self, args: argparse.Namespace) -> int:
        """Fit A_hat(x0) and print the report."""
        if args.system:
            field = system_registry.get(args.system)
            if not args.x0:
                raise InputError("--x0 is required with --system")
            x0 = parse_vector(args.x0, 'x0', field.dimension)
            horizon = args.horizon if args.horizon is not None else DEFAULT_HORIZON
            traj = integrate(field, x0, horizon, dt=args.dt)
            if traj.termination == Termination.ESCAPED:
                raise InputError(f"trajectory from {x0.tolist()} escaped before t={horizon}; nothing to fit")
        else:
            traj = load_trajectory(args.traj)
            if traj.derivatives is None:
                logger.info(f"{args.traj} has no derivatives; reconstructing them from samples")
                traj = derivatives_from_samples(traj)
            horizon = args.horizon

        g = gram_matrices(traj, rule=args.rule, horizon=horizon)
        if args.method == 'gradient':
            estimate = minimizer_gradient_flow(g)
        else:
            estimate = minimizer(g, traj, diagnostic=args.diagnostic)

        print(format_report(estimate), end='')
        if args.out:
            save_report(estimate, args.out)
        return EXIT_OK

    # ------------------------------------------------------------------
    # roa

    @staticmethod
    def _configure_roa(p: argparse.ArgumentParser):
        p.add_argument('--preset', help="experiment preset (vdp, unbounded, rational)")
        p.add_argument('--config', help="YAML settings file layered over the preset")
        p.add_argument('--system')
        p.add_argument('--gamma', type=float)
        p.add_argument('--step-size', type=float)
        p.add_argument('--max-iters', type=int)
        p.add_argument('--points', type=int)
        p.add_argument('--init-radius', type=float)
        p.add_argument('--resample-every', type=int)
        p.add_argument('--history-every', type=int)
        p.add_argument('--conv-tol', type=float)
        p.add_argument('--hold-escaped', action='store_true', default=None,
                       help="keep points whose step would land on an escaping start")
        p.add_argument('--initial', help="start from a curve CSV (idx,x1,x2) instead of the circle")
        p.add_argument('--horizon', type=float)
        p.add_argument('--dt', type=float)
        p.add_argument('--escape-horizon', type=float)
        p.add_argument('--a-ref', choices=A_REF_SOURCES)
        p.add_argument('--out-dir')
        p.add_argument('--svg', action='store_true', default=None)
        p.add_argument('--compare-oracle', action='store_true', default=None)
        p.add_argument('--strict', action='store_true', default=None)
        p.add_argument('--threads', type=int)
        p.add_argument('--seed', type=int)

    def cmd_roa(self, args: argparse.Namespace) -> int:
        """Run the boundary flow and write its history."""
        flags = {k: v for k, v in vars(args).items() if k not in ('command', 'preset', 'config', 'initial')}
        settings = resolve_settings(args.preset, args.config, flags)
        field = system_registry.get(settings.system)
        if field.dimension != 2:
            raise InputError(f"the boundary flow is planar; {field.id} has dimension {field.dimension}")
        cfg = settings.flow_config()
        initial = None
        if args.initial:
            initial = load_curve_csv(args.initial)
            if not initial.is_simple() or initial.signed_area() <= 0:
                raise InputError(f"{args.initial}: initial curve must be simple and counterclockwise")
        logger.info(f"Running roa '{settings.preset}' on {field.id}")

        with EvaluationPool(settings.threads) as pool:
            result = asyncio.run(run_flow(field, cfg, pool=pool, initial=initial))

            out_dir = Path(settings.out_dir)
            name = _slug(settings.preset)
            history_path = save_history_csv(result, out_dir / f"{name}_history.csv")
            final_path = save_curve_csv(result.final, out_dir / f"{name}_final.csv")

            radii = result.final.radii()
            print(f"status: {result.status.value}")
            print(f"iterations: {result.iterations}")
            print(f"radius: min {radii.min():.6f} mean {radii.mean():.6f} max {radii.max():.6f}")
            print(f"history: {history_path}")
            print(f"final: {final_path}")

            reference = None
            if field.id in REFERENCE_SYSTEMS and (settings.compare_oracle or settings.svg):
                reference = reference_limit_cycle()
            if settings.compare_oracle:
                if reference is not None:
                    print(f"hausdorff: {hausdorff_distance(result.final, reference):.6f}")
                else:
                    labels = asyncio.run(roa_membership_batch(field, result.final.points, pool=pool))
                    inside = sum(1 for m in labels if m == Membership.INSIDE)
                    print(f"inside: {inside}/{len(labels)}")
            if settings.svg:
                svg_path = export_svg(result, out_dir / f"{name}.svg", reference,
                                      title=f"{field.id}, gamma={cfg.gamma}")
                print(f"svg: {svg_path}")

        if settings.strict and result.status != FlowStatus.CONVERGED:
            logger.error(f"roa: flow ended with status {result.status.value} (strict mode)")
            return EXIT_FLOW
        return EXIT_OK

    # ------------------------------------------------------------------
    # energy-grid

    @staticmethod
    def _configure_energy_grid(p: argparse.ArgumentParser):
        p.add_argument('--system', required=True)
        p.add_argument('--rect', required=True, help="x1min,x1max,x2min,x2max")
        p.add_argument('--res', type=int, required=True, help="points per axis")
        p.add_argument('--out', help="CSV path (default RESULTS_DIR/energy_<system>.csv)")
        p.add_argument('--horizon', type=float)
        p.add_argument('--dt', type=float)
        p.add_argument('--escape-horizon', type=float)
        p.add_argument('--rule', choices=QUADRATURE_RULES)
        p.add_argument('--a-ref', choices=A_REF_SOURCES)
        p.add_argument('--threads', type=int)
        p.add_argument('--seed', type=int, default=0)

    def cmd_energy_grid(self, args: argparse.Namespace) -> int:
        """Residual energy over a rectangle, one CSV row per grid point."""
        rect = parse_vector(args.rect, 'rect', 4)
        if args.res < 1:
            raise InputError(f"--res must be >= 1, got {args.res}")
        field = system_registry.get(args.system)
        overrides = {
            'horizon': args.horizon, 'dt': args.dt, 'escape_horizon': args.escape_horizon,
            'rule': args.rule, 'a_ref_source': args.a_ref,
        }
        cfg = EnergyConfig(**{k: v for k, v in overrides.items() if v is not None})
        out = Path(args.out) if args.out else RESULTS_DIR / f"energy_{_slug(field.id)}.csv"

        with EvaluationPool(args.threads) as pool:
            a_ref = resolve_a_ref(field, cfg, seed=args.seed, pool=pool)
            rows = asyncio.run(evaluate_energy_grid(field, rect, args.res, a_ref, cfg, pool))
        save_energy_grid(rows, out)
        print(f"wrote {len(rows)} rows to {out}")
        return EXIT_OK

    # ------------------------------------------------------------------
    # oracle

    @staticmethod
    def _configure_oracle(p: argparse.ArgumentParser):
        sub = p.add_subparsers(dest='oracle_command', required=True)
        member = sub.add_parser('member', help="classify one initial condition")
        member.add_argument('--system', required=True)
        member.add_argument('--x0', required=True)
        member.add_argument('--t-max', type=float, default=ORACLE_T_MAX)
        cycle = sub.add_parser('cycle', help="export the reference Van der Pol limit cycle")
        cycle.add_argument('--d', type=int, default=ORACLE_CYCLE_POINTS, help="number of points")
        cycle.add_argument('--out', help="CSV path (default RESULTS_DIR/reference_cycle.csv)")

    def cmd_oracle(self, args: argparse.Namespace) -> int:
        if args.oracle_command == 'member':
            field = system_registry.get(args.system)
            x0 = parse_vector(args.x0, 'x0', field.dimension)
            print(roa_membership(field, x0, t_max=args.t_max).value)
            return EXIT_OK

        curve = reference_limit_cycle(args.d)
        out = Path(args.out) if args.out else RESULTS_DIR / 'reference_cycle.csv'
        save_curve_csv(curve, out)
        print(f"wrote {len(curve)} points to {out}")
        return EXIT_OK


command_processor = CommandProcessor()


def main(argv: Optional[List[str]] = None) -> int:
    return command_processor.run(argv)


if __name__ == '__main__':
    sys.exit(main())
