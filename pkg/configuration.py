# Copyright 2025 DeepMind Technologies Limited.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Config schema, loading of Python dict configs, and knob overrides.

A config is a flat dict. Files in configs/ define it as a literal, for
example `node_config = {'node': 'node-0', 'iterations': 500}`; keys left out
take their defaults from CONFIG_SCHEMA.
"""

import ast
import copy
import logging
import pathlib
import re
from typing import Any, Iterable, Optional

import analysis
import control
import expressions
import simulation_utils
import workloads

logger = logging.getLogger(__name__)


def _choice(default, choices):
  return {'default': default, 'choices': tuple(choices)}


def _number(default, low=None, high=None, integer=False, optional=False):
  return {
      'default': default,
      'min': low,
      'max': high,
      'integer': integer,
      'optional': optional,
  }


CONFIG_SCHEMA = {
    # Node and workload.
    'node': _choice('node-1', simulation_utils.PRESETS),
    'model': _choice('llama3.1-8b', workloads.MODEL_OP_WORK),
    'fsdp': _choice('v2', workloads.FSDP_COLLECTIVES),
    'precision': _choice('bf16', workloads.PRECISION_GEMM_FACTOR),
    'batch_seq': {'default': 'b2s4', 'pattern': r'^b\d+s\d+$'},
    'iterations': _number(1000, 1, integer=True),
    # Controller.
    'sampling_period': _number(10, 1, integer=True),
    'warm_up': _number(50, 0, integer=True),
    'window_size': _number(3, 1, integer=True),
    'aggregation': _choice('sum', analysis.AGGREGATIONS),
    'max_adjustment': _number(15.0, 0.0),
    'scale': _choice('global', control.SCALES),
    'power_cap': _number(700.0, 0.0),
    'power_budget': _number(20.0, 0.0),
    'use_case': _choice('GPU-Red', control.USE_CASES),
    # Engine.
    'seed': _number(0, 0, integer=True),
    'gpu_count': _number(8, 2, integer=True),
    'layers': _number(8, 1, integer=True),
    'telemetry_interval_ms': _number(100.0, 0.0),
    'overlap_penalty': _number(0.19, 0.0, 1.0),
    'tdp': _number(750.0, 0.0),
    'min_cap': _number(200.0, 0.0),
    'p_idle': _number(100.0, 0.0),
    'm_spread': _number(0.0, 0.0, 1.0),
    'frequency_jitter': _number(None, 0.0, optional=True),
    'warm_start': {'default': False, 'type': bool},
    'tau_v': _number(analysis.DEFAULT_TAU_V, 0.0),
    'max_attempts': _number(3, 1, integer=True),
    'retry_wait_s': _number(0.0, 0.0),
    'converged_sampling_period': _number(None, 1, integer=True, optional=True),
    'rolling_window': _number(5, 1, integer=True),
}


class ConfigError(ValueError):
  """A config key is unknown or its value is out of domain."""

  def __init__(self, key, message):
    super().__init__(f'{key}: {message}')
    self.key = key


def default_config() -> dict[str, Any]:
  return {key: spec['default'] for key, spec in CONFIG_SCHEMA.items()}


def _check_value(key, value):
  spec = CONFIG_SCHEMA[key]
  if 'choices' in spec:
    if value not in spec['choices']:
      raise ConfigError(
          key, f'{value!r} is not one of {list(spec["choices"])}'
      )
    return value
  if 'pattern' in spec:
    if not isinstance(value, str) or not re.match(spec['pattern'], value):
      raise ConfigError(key, f'{value!r} does not match {spec["pattern"]}')
    return value
  if spec.get('type') is bool:
    if not isinstance(value, bool):
      raise ConfigError(key, f'expected true or false, got {value!r}')
    return value
  if value is None:
    if spec.get('optional'):
      return None
    raise ConfigError(key, 'a value is required')
  if isinstance(value, bool) or not isinstance(value, (int, float)):
    raise ConfigError(key, f'expected a number, got {value!r}')
  if spec.get('integer'):
    if value != int(value):
      raise ConfigError(key, f'expected an integer, got {value!r}')
    value = int(value)
  if spec.get('min') is not None and value < spec['min']:
    raise ConfigError(key, f'{value} is below {spec["min"]}')
  if spec.get('max') is not None and value > spec['max']:
    raise ConfigError(key, f'{value} is above {spec["max"]}')
  return value


def validate_config(config: dict[str, Any]) -> dict[str, Any]:
  """Fills defaults and checks every key; returns the resolved config."""
  unknown = sorted(set(config) - set(CONFIG_SCHEMA))
  if unknown:
    raise ConfigError(unknown[0], 'unknown config key')
  resolved = default_config()
  resolved.update(config)
  for key in CONFIG_SCHEMA:
    resolved[key] = _check_value(key, resolved[key])

  if not resolved['min_cap'] > resolved['p_idle']:
    raise ConfigError('min_cap', 'must be above p_idle')
  if not resolved['min_cap'] <= resolved['power_cap'] <= resolved['tdp']:
    raise ConfigError('power_cap', 'must lie between min_cap and tdp')
  if resolved['max_adjustment'] <= 0:
    raise ConfigError('max_adjustment', 'must be positive')
  if resolved['telemetry_interval_ms'] <= 0:
    raise ConfigError('telemetry_interval_ms', 'must be positive')
  return resolved


def parse_python_dict(file_content: str, name: str) -> dict[str, Any]:
  """Reads the `name = {...}` literal of a config file without running it."""
  start_index = file_content.find(f'{name} = {{')
  if start_index == -1:
    raise ConfigError(name, f"no '{name}' dictionary found")
  dict_content = file_content[start_index + len(name) + 3:]
  try:
    value = ast.literal_eval(dict_content)
  except (SyntaxError, ValueError) as e:
    raise ConfigError(name, f'not a literal dictionary: {e}') from e
  if not isinstance(value, dict):
    raise ConfigError(name, 'expected a dictionary')
  return value


def load_config_from_python(path, name: str = 'node_config') -> dict[str, Any]:
  with open(path, 'r') as file:
    file_content = file.read()
  config = parse_python_dict(file_content, name)
  logger.debug('Loaded %s from %s', name, path)
  return config


def apply_knobs(
    config: dict[str, Any], knobs: Iterable[Any]
) -> dict[str, Any]:
  """Overrides config keys with 'key=value' strings or (key, value) pairs."""
  updated = copy.deepcopy(config)
  for knob in knobs:
    if isinstance(knob, str):
      key, value = expressions.parse_assignment(knob)
    else:
      key, value = knob
    if key not in CONFIG_SCHEMA:
      raise ConfigError(key, 'unknown config key')
    updated[key] = value
  return updated


def resolve_config(
    path=None,
    knobs: Iterable[Any] = (),
    seed: Optional[int] = None,
    use_case: Optional[str] = None,
) -> dict[str, Any]:
  """Config file, then knobs, then explicit flags, validated."""
  config = load_config_from_python(path) if path else {}
  config = apply_knobs(config, knobs)
  if seed is not None:
    config['seed'] = seed
  if use_case is not None:
    config['use_case'] = use_case
  return validate_config(config)


def build_workload(config: dict[str, Any]) -> workloads.WorkloadSpec:
  return workloads.build_workload(
      model=config['model'],
      fsdp=config['fsdp'],
      precision=config['precision'],
      batch_seq=config['batch_seq'],
      layers=config['layers'],
      overlap_penalty=config['overlap_penalty'],
  )


def build_node_config(config: dict[str, Any]) -> simulation_utils.NodeConfig:
  """Node calibrated at the default cap, starting from power_cap."""
  return simulation_utils.calibrate_default_node(
      preset=config['node'],
      gpu_count=config['gpu_count'],
      workload=build_workload(config),
      m_spread=config['m_spread'],
      frequency_jitter=config['frequency_jitter'],
      initial_cap_w=config['power_cap'],
      idle_power_w=config['p_idle'],
      iterations=config['iterations'],
      seed=config['seed'],
      telemetry_interval_ns=int(round(config['telemetry_interval_ms'] * 1e6)),
      warm_start=config['warm_start'],
  )


def build_controller_config(config: dict[str, Any]) -> control.ControllerConfig:
  return control.ControllerConfig(
      sampling_period=config['sampling_period'],
      warm_up=config['warm_up'],
      window_size=config['window_size'],
      aggregation=config['aggregation'],
      max_adjustment_w=config['max_adjustment'],
      scale=config['scale'],
      use_case=config['use_case'],
      slosh_budget_w=config['power_budget'],
      iterations=config['iterations'],
      converged_sampling_period=config['converged_sampling_period'],
      max_attempts=config['max_attempts'],
      retry_wait_s=config['retry_wait_s'],
  )


def build_initial_caps(config: dict[str, Any]) -> control.CapVector:
  return control.initial_cap_vector(
      config['use_case'],
      config['gpu_count'],
      cap_w=config['power_cap'],
      tdp_w=config['tdp'],
      budget_w=config['power_budget'],
      min_cap_w=config['min_cap'],
  )


def load_metrics_from_file(file_path) -> list[str]:
  """Metric names, one per line."""
  try:
    with open(file_path, 'r') as file:
      return [line.strip() for line in file if line.strip()]
  except OSError as e:
    logger.error('Error loading metrics: %s', e)
    return []


def config_stem(path) -> str:
  return pathlib.Path(path).stem if path else 'default'
