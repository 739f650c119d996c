import argparse
import json
import logging
import sys
from typing import Any, NoReturn, Optional

import numpy as np
import pandas as pd

from ddic import __version__
from ddic.bell import BellInequality, chsh, tilted
from ddic.covering import AuditReport, biseparable_bound, covering_family, mincut, optimality_audit
from ddic.protocol import Certificate, VisibilityResult, critical_visibility, ingest_counts, run_ddic, simulate_counts
from ddic.qcore import PureState
from ddic.states import BiseparableModel, state_amplitude_table
from ddic.utils.config import ExperimentConfig
from ddic.utils.counts import CountTable
from ddic.utils.errors import NumericalError, ValidationError

FORMATS = ('table', 'json', 'csv')


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise ValidationError(message)


class CLI:
    """Batch front-end over the certification library.

    Attributes
    ----------
    output_format : str
        ``'table'``, ``'json'`` or ``'csv'``.
    progress : bool
        Show progress bars for long loops.
    """

    def __init__(self, output_format: str = 'table', progress: bool = True):
        if output_format not in FORMATS:
            raise ValidationError(f"unknown format '{output_format}', expected one of {FORMATS}")
        self.output_format = output_format
        self.progress = progress

    def run(self, config: ExperimentConfig) -> Certificate:
        """Certificate for the configured state, covering and inequality.

        Parameters
        ----------
        config : ExperimentConfig
            Validated experiment.

        Returns
        -------
        Certificate
            Protocol result.
        """
        return run_ddic(config.build_target(), config.build_covering(), config.build_inequality(),
                        config.build_strategy(), rng=np.random.default_rng(config.seed), progress=self.progress)

    @staticmethod
    def bounds(n: int, ineq: BellInequality) -> pd.DataFrame:
        """Biseparable bound of every covering family on ``n`` parties."""
        rows = []
        for family in ('minimal', 'full', 'ring'):
            if family == 'ring' and n < 3:
                continue
            covering = covering_family(family, n)
            rows.append({'family': family, 'n_parties': n, 'edges': covering.n_edges,
                         'mincut': mincut(covering), 'bound': biseparable_bound(covering, ineq)})
        return pd.DataFrame(rows)

    def audit(self, n: int) -> AuditReport:
        return optimality_audit(n, progress=self.progress)

    def visibility(self, config: ExperimentConfig) -> VisibilityResult:
        state = config.build_state()
        if isinstance(state, BiseparableModel):
            raise ValidationError('critical visibility needs a state, not a biseparable model')
        return critical_visibility(state, config.build_covering(), config.build_inequality(),
                                   config.build_strategy(), progress=self.progress)

    @staticmethod
    def ingest(path: str, ineq: BellInequality, relabel: str = 'parity') -> Certificate:
        return ingest_counts(CountTable.from_csv(path), ineq, relabel)

    def simulate(self, config: ExperimentConfig, shots: int) -> CountTable:
        target = config.build_target()
        if isinstance(target, BiseparableModel):
            raise ValidationError('count simulation needs a state, not a biseparable model')
        return simulate_counts(target, config.build_covering(), config.build_inequality(), config.build_strategy(),
                               shots, np.random.default_rng(config.seed), progress=self.progress)

    @staticmethod
    def states(config: ExperimentConfig) -> pd.DataFrame:
        """Nonzero amplitudes of a pure state, diagonal populations otherwise."""
        target = config.build_target()
        if isinstance(target, PureState):
            rows = [{'basis': label, 'real': amplitude.real, 'imag': amplitude.imag}
                    for label, amplitude in state_amplitude_table(target)]
            return pd.DataFrame(rows, columns=['basis', 'real', 'imag'])
        rho = target.to_mixed_state() if isinstance(target, BiseparableModel) else target
        dims = rho.register.dims
        rows = []
        for index, population in enumerate(np.diag(rho.matrix).real):
            if population > 1e-12:
                digits = np.unravel_index(index, dims)
                rows.append({'basis': ''.join(str(int(d)) for d in digits), 'population': population})
        return pd.DataFrame(rows, columns=['basis', 'population'])

    def render_certificate(self, certificate: Certificate, metadata: dict[str, Any]) -> str:
        if self.output_format == 'json':
            return certificate.to_json(**metadata)
        frame = pd.DataFrame([{'edge': r['edge'], 'beta_e': r['beta_e'], 'stderr': r['stderr'],
                               'branches': len(r['branches'])} for r in certificate.to_dict()['edges']])
        if self.output_format == 'csv':
            return frame.to_csv(index=False)
        lines = [frame.to_string(index=False), '']
        stderr = f' +- {certificate.beta_bar_stderr:.6f}' if certificate.beta_bar_stderr is not None else ''
        lines.append(f'inequality  {certificate.inequality.name}')
        lines.append(f'covering    {certificate.covering.name} ({certificate.covering.n_edges} edges)')
        lines.append(f'beta_bar    {certificate.beta_bar:.6f}{stderr}')
        lines.append(f'bound       {certificate.bound:.6f}')
        lines.append(f"verdict     {'GME' if certificate.gme else 'not certified'}")
        lines.append(f'P_GME >=    {certificate.p_gme:.6f}')
        report = certificate.local_bound
        if report is not None and report.distinct:
            closed = f', closed form {report.closed_form:.6f}' if report.closed_form is not None else ''
            lines.append(f'local bound configured {report.configured:.6f} differs from '
                         f'deterministic {report.bruteforce:.6f}{closed}')
        lines.append(f"config      {metadata.get('config_hash', '-')}")
        lines.append(f'version     {__version__}')
        lines.append(certificate.caveat)
        return '\n'.join(lines) + '\n'

    def render_frame(self, frame: pd.DataFrame) -> str:
        if self.output_format == 'json':
            return json.dumps(frame.to_dict(orient='records'), indent=2, sort_keys=True)
        if self.output_format == 'csv':
            return frame.to_csv(index=False)
        return frame.to_string(index=False) + '\n'


def _add_inequality_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--inequality', choices=['chsh', 'tilted'], default='chsh', help='bipartite inequality')
    parser.add_argument('--theta-deg', type=float, default=None, help='tilting angle in degrees')
    parser.add_argument('--beta-local', type=float, default=None, help='configured local bound')


def _inequality_from_args(args: argparse.Namespace) -> BellInequality:
    if args.inequality == 'tilted':
        if args.theta_deg is None:
            raise ValidationError('--theta-deg is required for the tilted inequality')
        return tilted(np.radians(args.theta_deg), args.beta_local)
    if args.theta_deg is not None:
        raise ValidationError('--theta-deg applies to the tilted inequality only')
    ineq = chsh()
    if args.beta_local is not None:
        raise ValidationError('the CHSH local bound is fixed')
    return ineq


def _write(text: str, path: Optional[str]) -> None:
    if path is None:
        print(text, end='')
        return
    with open(path, 'w') as f:
        f.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog='ddic',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='to see action help message:\n  ddic run -h\n  ddic bounds -h',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='action', parser_class=_Parser)
    run_parser = subparsers.add_parser('run', help='certify the configured state')
    bounds_parser = subparsers.add_parser('bounds', help='biseparable bounds of the covering families')
    audit_parser = subparsers.add_parser('audit', help='exhaustive covering-optimality audit')
    visibility_parser = subparsers.add_parser('visibility', help='critical white-noise visibility')
    ingest_parser = subparsers.add_parser('ingest', help='certificate from a count table')
    simulate_parser = subparsers.add_parser('simulate', help='sample a count table from the configured state')
    states_parser = subparsers.add_parser('states', help="dump the configured state's amplitudes")
    subparsers.required = True
    for subparser in [run_parser, bounds_parser, audit_parser, visibility_parser, ingest_parser,
                      simulate_parser, states_parser]:
        subparser.add_argument('--format', choices=FORMATS, default='table', help='output format')
        subparser.add_argument('--out', type=str, default=None, help='output file path')
        subparser.add_argument('--no-progress', action='store_true', help='hide progress bars')
        subparser.add_argument('--verbose', action='store_true', help='log library diagnostics')
    for subparser in [run_parser, visibility_parser, simulate_parser, states_parser]:
        subparser.add_argument('--config', required=True, type=str, help='path to configuration file')
        subparser.add_argument('--seed', type=int, default=None, help='override the config seed')
    for subparser in [bounds_parser, audit_parser]:
        subparser.add_argument('--n', required=True, type=int, help='number of parties')
    for subparser in [bounds_parser, ingest_parser]:
        _add_inequality_arguments(subparser)
    ingest_parser.add_argument('path', type=str, help='count table (CSV)')
    ingest_parser.add_argument('--relabel', choices=['parity', 'none'], default='parity',
                               help='branch relabelling applied to the counts')
    simulate_parser.add_argument('--shots', type=int, default=100000, help='events per setting pair')
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(args.config)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _dispatch(args: argparse.Namespace) -> None:
    cli = CLI(args.format, progress=not args.no_progress)
    if args.action == 'run':
        config = _load_config(args)
        certificate = cli.run(config)
        metadata = {'config_hash': config.config_hash(), 'version': __version__, 'seed': config.seed}
        _write(cli.render_certificate(certificate, metadata), args.out)
        for kind, path in config.output.items():
            _write(CLI(kind).render_certificate(certificate, metadata), path)
    elif args.action == 'bounds':
        _write(cli.render_frame(cli.bounds(args.n, _inequality_from_args(args))), args.out)
    elif args.action == 'audit':
        report = cli.audit(args.n)
        if args.format == 'table':
            text = (f"parties {report.n_parties}: {report.coverings_checked} connected coverings, "
                    f"{len(report.violations)} below the full-covering bound, "
                    f"{len(report.attainers)} attaining it\n")
        else:
            text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
        _write(text, args.out)
        if not report.passed:
            raise NumericalError('some coverings fall below the full-covering bound')
    elif args.action == 'visibility':
        config = _load_config(args)
        result = cli.visibility(config)
        if args.format == 'csv':
            frame = pd.DataFrame([vars(point) for point in result.sweep])
            _write(frame.to_csv(index=False) + f'# critical visibility {result.critical:.6f}\n', args.out)
        elif args.format == 'json':
            _write(json.dumps({'critical_visibility': result.critical, 'bound': result.bound,
                               'sweep': [vars(point) for point in result.sweep],
                               'config_hash': config.config_hash(), 'version': __version__},
                              indent=2, sort_keys=True), args.out)
        else:
            _write(f'critical visibility {result.critical:.6f} (bound {result.bound:.6f})\n'
                   f'config      {config.config_hash()}\n'
                   f'version     {__version__}\n', args.out)
    elif args.action == 'ingest':
        certificate = cli.ingest(args.path, _inequality_from_args(args), args.relabel)
        _write(cli.render_certificate(certificate, {'version': __version__, 'source': args.path}), args.out)
    elif args.action == 'simulate':
        config = _load_config(args)
        table = cli.simulate(config, args.shots)
        _write(table.to_frame().to_csv(index=False), args.out)
    elif args.action == 'states':
        _write(cli.render_frame(cli.states(_load_config(args))), args.out)
    else:
        raise ValueError(f"invalid action: '{args.action}'")


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format='%(levelname)s %(name)s: %(message)s')
        _dispatch(args)
    except ValidationError as e:
        print(f'error: {e}', file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f'numerical error: {e}', file=sys.stderr)
        return 2
    return 0
