"""Experiment configuration files.

A config names the state, the covering, the inequality, the measurement
strategy and optional noise::

    state: ghz4
    covering: full
    inequality: chsh
    noise:
      visibility: 0.95
    seed: 7

JSON files are accepted as well.
"""
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
import yaml

from ddic.bell import BellInequality, chsh, tilted
from ddic.covering import Covering, covering_family
from ddic.fairsampling import detector_povm, filter_decomposition, filtered_state
from ddic.protocol import MeasurementStrategy
from ddic.qcore import State, pauli_basis
from ddic.states import (
    BiseparableModel,
    WeightedGraph,
    biseparable_product,
    ghz,
    linear_cluster,
    saturating_biseparable_model,
    tilted_ghz,
    weighted_graph_state,
    white_noise,
)
from ddic.utils.errors import ValidationError

STATE_SHORTHAND = re.compile(r'^(ghz|sep|cluster|tilted)(\d+)$')
SHORTHAND_FAMILIES = {'ghz': 'ghz', 'sep': 'biseparable_product', 'cluster': 'linear_cluster', 'tilted': 'tilted_ghz'}
DEFAULT_THETA_DEG = 15.0
DEFAULT_MODES = {'ghz': 'ghz-x', 'tilted_ghz': 'tilted-x', 'linear_cluster': 'cluster-pauli'}
STATE_PARAMETERS = {
    'ghz': {'n'},
    'tilted_ghz': {'n', 'theta_deg'},
    'linear_cluster': {'n'},
    'biseparable_product': {'n'},
    'weighted_graph': {'n', 'edges', 'phases_deg'},
    'saturating_biseparable': {'labels'},
}

Target = Union[State, BiseparableModel]


def _key_lines(node: Optional[yaml.Node], prefix: str = '') -> dict[str, int]:
    lines: dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f'{prefix}{key_node.value}'
            lines[path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, f'{path}.'))
    return lines


def _require_int(value: Any, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(f'{name} must be an integer >= {minimum}, got {value!r}')
    return value


@dataclass
class ExperimentConfig:
    """One protocol run.

    Attributes
    ----------
    state : str | dict
        Shorthand (``ghz4``, ``sep4``, ``cluster4``, ``tilted3``) or a mapping
        with ``family`` and its parameters.
    covering : str | dict
        Family name (``minimal``, ``full``, ``ring``) or ``{'edges': [[1, 2], ...]}``
        with 1-indexed parties.
    inequality : str | dict
        ``chsh`` or ``{'family': 'tilted', 'theta_deg': 15, 'beta_local': 0.952}``.
    strategy : Optional[str]
        Measurement mode; inferred from the state family when omitted.
    noise : Optional[dict]
        ``{'visibility': v}`` or ``{'detector': {'efficiency': eta, 'transmission': [t_H, t_V]}}``.
    seed : int
        Seed of every randomized step.
    output : dict
        Optional ``json``, ``table`` and ``csv`` report paths.
    """

    state: Union[str, dict]
    covering: Union[str, dict] = 'full'
    inequality: Union[str, dict] = 'chsh'
    strategy: Optional[str] = None
    noise: Optional[dict] = None
    seed: int = 0
    output: dict = field(default_factory=dict)

    @classmethod
    def from_yaml(cls, path: str) -> 'ExperimentConfig':
        """Creates class instance from configuration path.

        Parameters
        ----------
        path : str
            Path to a YAML or JSON configuration file.

        Returns
        -------
        ExperimentConfig
            Validated config.
        """
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ValidationError(f'cannot read config {path}: {e}')
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> 'ExperimentConfig':
        try:
            lines = _key_lines(yaml.compose(text))
            config = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ValidationError(f'invalid config: {e}')
        if not isinstance(config, dict):
            raise ValidationError('line 1: config must be a mapping')
        known = {f.name for f in dataclasses.fields(cls)}
        for key in config:
            if key not in known:
                raise ValidationError(f"line {lines.get(str(key), '?')}: unknown key '{key}'")
        if 'state' not in config:
            raise ValidationError("line 1: missing required key 'state'")
        instance = cls(**config)
        instance.validate(lines)
        return instance

    def validate(self, lines: Optional[dict[str, int]] = None) -> None:
        """Builds every part once, prefixing failures with the offending line."""
        lines = lines or {}
        checks = [
            ('state', self.build_target),
            ('covering', self.build_covering),
            ('inequality', self.build_inequality),
            ('strategy', self.build_strategy),
            ('seed', lambda: _require_int(self.seed, 'seed', 0)),
            ('output', self._check_output),
        ]
        for key, check in checks:
            try:
                check()
            except ValidationError as e:
                raise ValidationError(f"line {lines.get(key, '?')}: {key}: {e}") from e

    def _check_output(self) -> None:
        if not isinstance(self.output, dict):
            raise ValidationError('output must be a mapping of report kind to path')
        unknown = set(self.output) - {'json', 'table', 'csv'}
        if unknown:
            raise ValidationError(f'unknown report kinds {sorted(unknown)}')

    def state_params(self) -> dict:
        """State section with shorthands expanded."""
        if isinstance(self.state, str):
            match = STATE_SHORTHAND.match(self.state)
            if match is None:
                raise ValidationError(f"unknown state shorthand '{self.state}'")
            params: dict[str, Any] = {'family': SHORTHAND_FAMILIES[match.group(1)], 'n': int(match.group(2))}
            if params['family'] == 'tilted_ghz':
                params['theta_deg'] = DEFAULT_THETA_DEG
            return params
        if not isinstance(self.state, dict) or 'family' not in self.state:
            raise ValidationError("state must be a shorthand or a mapping with a 'family'")
        family = self.state['family']
        if family not in STATE_PARAMETERS:
            raise ValidationError(f"unknown state family '{family}'")
        unknown = set(self.state) - STATE_PARAMETERS[family] - {'family'}
        if unknown:
            raise ValidationError(f'unknown parameters {sorted(unknown)} for {family}')
        return dict(self.state)

    @property
    def n_parties(self) -> int:
        params = self.state_params()
        if params['family'] == 'saturating_biseparable':
            return 3
        return _require_int(params.get('n'), 'n', 2)

    def build_state(self) -> Target:
        """Noiseless state or model."""
        params = self.state_params()
        family = params['family']
        if family == 'saturating_biseparable':
            return saturating_biseparable_model(params.get('labels', (0, 1, 2)))
        n = self.n_parties
        if family == 'ghz':
            return ghz(n)
        if family == 'tilted_ghz':
            if 'theta_deg' not in params:
                raise ValidationError('tilted_ghz needs theta_deg')
            return tilted_ghz(n, np.radians(float(params['theta_deg'])))
        if family == 'linear_cluster':
            return linear_cluster(n)
        if family == 'biseparable_product':
            return biseparable_product(n)
        return weighted_graph_state(self.weighted_graph())

    def weighted_graph(self) -> WeightedGraph:
        params = self.state_params()
        edges = [tuple(int(p) - 1 for p in edge) for edge in params.get('edges', [])]
        phases = params.get('phases_deg', [180.0] * len(edges))
        if len(phases) != len(edges):
            raise ValidationError('one phase per edge is required')
        return WeightedGraph(self.n_parties, tuple(edges), tuple(np.radians(float(p)) for p in phases))  # type: ignore

    def build_target(self) -> Target:
        """State or model after the configured noise."""
        target = self.build_state()
        if not self.noise:
            return target
        if not isinstance(self.noise, dict) or len(self.noise) != 1:
            raise ValidationError("noise must hold exactly one of 'visibility' or 'detector'")
        if 'visibility' in self.noise:
            if isinstance(target, BiseparableModel):
                raise ValidationError('white noise applies to states, not to biseparable models')
            return white_noise(target, float(self.noise['visibility']))
        if 'detector' in self.noise:
            detector = self.noise['detector']
            if not isinstance(detector, dict):
                raise ValidationError('detector noise must be a mapping')
            efficiency = detector.get('efficiency', 1.0)
            efficiencies = detector.get('efficiencies', [efficiency, efficiency])
            povm = detector_povm([pauli_basis('Z'), pauli_basis('X')], efficiencies, detector.get('transmission'))
            k = filter_decomposition(povm).filter
            if isinstance(target, BiseparableModel):
                return target.filtered([k] * target.n_parties)
            return filtered_state(target, [k] * target.register.n_parties).state
        raise ValidationError(f'unknown noise model {sorted(self.noise)}')

    def build_covering(self) -> Covering:
        n = self.n_parties
        if isinstance(self.covering, str):
            return covering_family(self.covering, n)
        if isinstance(self.covering, dict) and 'family' in self.covering:
            return covering_family(self.covering['family'], n)
        if isinstance(self.covering, dict) and 'edges' in self.covering:
            edges = []
            for edge in self.covering['edges']:
                if len(edge) != 2 or any(_require_int(p, 'party', 1) > n for p in edge):
                    raise ValidationError(f'edge {edge} must name two parties in 1..{n}')
                edges.append((edge[0] - 1, edge[1] - 1))
            return Covering(n, tuple(edges))
        raise ValidationError("covering must be a family name or a mapping with 'family' or 'edges'")

    def build_inequality(self) -> BellInequality:
        params = {'family': self.inequality} if isinstance(self.inequality, str) else dict(self.inequality)
        family = params.pop('family', None)
        theta_deg = params.pop('theta_deg', None)
        beta_local = params.pop('beta_local', None)
        if params:
            raise ValidationError(f'unknown inequality parameters {sorted(params)}')
        if family == 'chsh':
            if theta_deg is not None:
                raise ValidationError('theta_deg applies to the tilted inequality only')
            if beta_local is not None:
                raise ValidationError('the CHSH local bound is fixed')
            return chsh()
        if family == 'tilted':
            if theta_deg is None:
                raise ValidationError('the tilted inequality needs theta_deg')
            return tilted(np.radians(float(theta_deg)), beta_local)
        raise ValidationError(f"unknown inequality family '{family}'")

    def build_strategy(self) -> MeasurementStrategy:
        family = self.state_params()['family']
        mode = self.strategy or DEFAULT_MODES.get(family, 'auto')
        if mode != 'cluster-pauli':
            return MeasurementStrategy(mode)
        if family == 'linear_cluster':
            return MeasurementStrategy.linear_cluster(self.n_parties)
        if family == 'weighted_graph':
            return MeasurementStrategy('cluster-pauli', self.weighted_graph().edges)
        raise ValidationError(f"'cluster-pauli' needs a graph-state family, got '{family}'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()
