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

"""Command line runner for simulations, control runs, analysis and sweeps."""

import argparse
from concurrent import futures
import dataclasses
import itertools
import json
import logging
import os
import pathlib
import sys
from typing import Any, Optional

import numpy as np
import pandas as pd

import analysis
import backends
import configuration
import control
import expressions
import models
import reports
import simulation_utils
import straggler_power
import traces

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_NEVER_CONVERGED = 3

SWEEP_METRICS = (
    'power_reduction',
    'throughput_improvement',
    'power_convergence',
    'throughput_convergence',
    'power_variation',
    'throughput_variation',
)


@dataclasses.dataclass
class ExperimentPlan:
  """A sweep: a base config and the overrides of each run."""

  base_config: dict[str, Any]
  overrides: list[dict[str, Any]]
  out_dir: Optional[pathlib.Path] = None
  parallelism: int = 1
  metrics: tuple[str, ...] = SWEEP_METRICS


def get_unique_filename(base_path):
  """Generate a unique filename."""
  path = pathlib.Path(base_path)
  if not path.exists():
    return path

  file_index = 1
  while True:
    new_path = path.with_name(f'{path.stem}_{file_index}{path.suffix}')
    if not new_path.exists():
      return new_path
    file_index += 1


def prepare_output_dir(out, command: str, stem: str) -> pathlib.Path:
  """The given directory, or a fresh results/<command>_<stem>."""
  if out:
    path = pathlib.Path(out)
  else:
    script_dir = pathlib.Path(os.path.dirname(os.path.abspath(__file__)))
    path = get_unique_filename(script_dir / 'results' / f'{command}_{stem}')
  path.mkdir(parents=True, exist_ok=True)
  return path


def _json_ready(value):
  if isinstance(value, dict):
    return {k: _json_ready(v) for k, v in value.items()}
  if isinstance(value, (list, tuple)):
    return [_json_ready(v) for v in value]
  if isinstance(value, np.generic):
    return value.item()
  return value


def save_json(data, path: pathlib.Path) -> pathlib.Path:
  with open(path, 'w') as f:
    json.dump(_json_ready(data), f, indent=2)
  logger.info('Wrote %s', path)
  return path


def write_manifest(out_dir, command, config, argv=None) -> pathlib.Path:
  return save_json(
      {
          'command': command,
          'version': straggler_power.__version__,
          'seed': config.get('seed') if config else None,
          'config': config,
          'argv': list(sys.argv[1:] if argv is None else argv),
      },
      out_dir / 'manifest.json',
  )


def cmd_simulate(config: dict[str, Any], out_dir: pathlib.Path) -> pathlib.Path:
  """Runs the node at fixed caps and writes the trace."""
  node = configuration.build_node_config(config)
  path = out_dir / 'trace.jsonl'
  traces.save_trace(
      path,
      simulation_utils.generate_iteration_stream(node),
      gpu_count=node.gpu_count,
      workload=node.workload.describe(),
      knobs=config,
  )
  return path


def run_control_experiment(config: dict[str, Any]):
  """Control loop on a simulated node; returns (run log, metrics)."""
  node = configuration.build_node_config(config)
  backend = backends.make_backend('simulated', node, tdp_w=config['tdp'])
  log = control.control_loop(
      backend,
      configuration.build_controller_config(config),
      configuration.build_initial_caps(config),
  )
  metrics = control.convergence_metrics(log, config['rolling_window'])
  return log, metrics


def cmd_control(config: dict[str, Any], out_dir: pathlib.Path):
  log, metrics = run_control_experiment(config)
  reports.write_run_log(log, out_dir)
  save_json(
      {
          'use_case': log.use_case,
          'node_cap_w': log.final_caps.node_cap_w,
          'tdp_w': log.final_caps.tdp_w,
          'caps_w': log.final_caps.caps.tolist(),
      },
      out_dir / 'final_caps.json',
  )
  save_json(metrics, out_dir / 'metrics.json')
  return log, metrics


def cmd_analyze(trace_path, out_dir: pathlib.Path, run_log=None,
                aggregation: str = 'sum'):
  """Characterization tables and plots of a trace."""
  iterations = traces.load_trace(trace_path).traces
  if len(iterations) < 2:
    raise ValueError(
        f'correlation needs at least 2 iterations, the trace has'
        f' {len(iterations)}'
    )
  written = []
  written += reports.write_overlap_report(iterations, out_dir)
  written += reports.write_straggler_wave(iterations[-1], out_dir)
  written += reports.write_lead_bands(iterations, out_dir, aggregation)
  written += reports.write_telemetry(iterations, out_dir)
  written += reports.write_correlation(iterations, out_dir)
  if run_log:
    frame = pd.read_csv(run_log)
    final = frame.iloc[-1][reports.cap_columns(frame)].to_numpy(dtype=float)
    initial = frame.iloc[0][reports.cap_columns(frame)].to_numpy(dtype=float)
    written += reports.write_cap_distribution(
        {'initial': initial, 'final': final}, out_dir
    )
  turns = analysis.straggler_turns(iterations, aggregation)
  logger.info('Straggler turns per GPU: %s', turns.tolist())
  return written


def cmd_predict(trace_path, out_dir, use_case=None, p_idle=None,
                p_baseline=None, tau_v=analysis.DEFAULT_TAU_V):
  """Model predictions; p_idle defaults to the idle power the trace ran with."""
  trace_file = traces.load_trace(trace_path)
  iterations = trace_file.traces
  if p_idle is None:
    p_idle = trace_file.header.get('knobs', {}).get(
        'p_idle', configuration.CONFIG_SCHEMA['p_idle']['default']
    )
    logger.info('Idle power %.1f W', p_idle)
  use_cases = [use_case] if use_case else list(models.USE_CASE_AGG)
  predictions = [
      models.predict_use_case(iterations, u, p_idle, p_baseline, tau_v)
      for u in use_cases
  ]
  reports.write_predictions(predictions, out_dir)
  return predictions


def cmd_cost(capacity_gw, gpu_energy_fraction, price_per_kwh,
             saving_fraction) -> float:
  return models.cost_savings(
      capacity_gw, gpu_energy_fraction, price_per_kwh, saving_fraction
  )


def cmd_calibrate(config: dict[str, Any], out_dir: pathlib.Path,
                  iterations: int = 120, warm_up: int = 40):
  node = configuration.build_node_config(config)
  report = simulation_utils.calibration_report(node, iterations, warm_up)
  save_json(report, out_dir / 'calibration.json')
  return report


def load_plan(path, knobs=(), jobs=None) -> ExperimentPlan:
  """Reads `sweep_plan = {...}` and expands it into runs.

  The plan keys are 'base' (config file path or dict of overrides), 'knobs'
  (key -> list of values or an expression such as 'range(500, 701, 50)'),
  'mode' ('list' varies one knob at a time, 'cartesian' takes the product),
  'parallelism' and 'metrics' (path of a metric list file). Paths are
  relative to the plan file.
  """
  plan = configuration.load_config_from_python(path, 'sweep_plan')
  base = plan.get('base', {})
  if isinstance(base, str):
    base = configuration.load_config_from_python(
        pathlib.Path(path).parent / base
    )
  base = configuration.apply_knobs(base, knobs)
  swept = {
      key: expressions.expand_values(values)
      for key, values in plan.get('knobs', {}).items()
  }
  for key in swept:
    if key not in configuration.CONFIG_SCHEMA:
      raise configuration.ConfigError(key, 'unknown config key')
  mode = plan.get('mode', 'list')
  if mode == 'list':
    overrides = [{key: v} for key, values in swept.items() for v in values]
  elif mode == 'cartesian':
    keys = list(swept)
    overrides = [
        dict(zip(keys, combo))
        for combo in itertools.product(*(swept[k] for k in keys))
    ]
  else:
    raise configuration.ConfigError('mode', f'unknown sweep mode {mode!r}')
  for override in overrides:
    configuration.validate_config({**base, **override})
  metrics = SWEEP_METRICS
  if plan.get('metrics'):
    metrics = tuple(configuration.load_metrics_from_file(
        pathlib.Path(path).parent / plan['metrics']
    ))
  return ExperimentPlan(
      base_config=base,
      overrides=overrides,
      parallelism=jobs or int(plan.get('parallelism', 1)),
      metrics=metrics,
  )


def _sweep_row(override, metrics, log):
  key = ','.join(override)
  value = ','.join(str(v) for v in override.values())
  row = {'knob': key, 'value': value}
  row.update({
      'power_reduction': 1.0 - metrics['power_change'],
      'throughput_improvement': metrics['throughput_change'] - 1.0,
      'power_convergence': metrics['power_convergence'],
      'throughput_convergence': metrics['throughput_convergence'],
      'power_variation': metrics['power_variation'],
      'throughput_variation': metrics['throughput_variation'],
      'caps_converged': metrics['caps_converged'],
      'final_caps': ' '.join(f'{c:g}' for c in log.final_caps.caps),
      'error': '',
  })
  return row


def sweep_worker(base_config, override):
  """One sweep run; failures become a row with the error."""
  try:
    config = configuration.validate_config({**base_config, **override})
    log, metrics = run_control_experiment(config)
    return _sweep_row(override, metrics, log)
  except Exception as e:  # pylint: disable=broad-exception-caught
    logger.error('Sweep run %s failed: %s', override, e)
    return {
        'knob': ','.join(override),
        'value': ','.join(str(v) for v in override.values()),
        'error': str(e),
    }


def cmd_sweep(plan: ExperimentPlan, out_dir: pathlib.Path) -> list[dict]:
  """Runs every override; row order follows the plan, not completion."""
  if plan.parallelism > 1:
    with futures.ProcessPoolExecutor(max_workers=plan.parallelism) as pool:
      rows = list(pool.map(
          sweep_worker,
          itertools.repeat(plan.base_config),
          plan.overrides,
      ))
  else:
    rows = [sweep_worker(plan.base_config, o) for o in plan.overrides]
  reports.write_sweep_summary(rows, out_dir, plan.metrics)
  finals = {
      f'{r["knob"]}={r["value"]}': [float(c) for c in r['final_caps'].split()]
      for r in rows if r.get('final_caps')
  }
  if finals:
    reports.write_cap_distribution(finals, out_dir)
  return rows


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      description='Thermal straggler detection and power-cap mitigation'
  )
  parser.add_argument(
      '--verbose', action='store_true', help='Log debug messages'
  )
  subparsers = parser.add_subparsers(dest='command', required=True)

  def add_common(sub, config=True):
    if config:
      sub.add_argument('--config', help='Python config file (node_config)')
      sub.add_argument(
          '--knob', action='append', default=[],
          help='Config override key=value, repeatable',
      )
      sub.add_argument('--seed', type=int, help='Random seed')
    sub.add_argument('--out', help='Output directory')

  simulate = subparsers.add_parser('simulate', help='Write a node trace')
  add_common(simulate)

  control_cmd = subparsers.add_parser('control', help='Run the control loop')
  add_common(control_cmd)
  control_cmd.add_argument(
      '--use-case', choices=control.USE_CASES, help='Mitigation policy'
  )

  analyze = subparsers.add_parser('analyze', help='Characterize a trace')
  add_common(analyze, config=False)
  analyze.add_argument('trace', help='Trace file')
  analyze.add_argument('--run-log', help='Run log CSV for cap distribution')
  analyze.add_argument(
      '--aggregation', choices=analysis.AGGREGATIONS, default='sum'
  )

  predict = subparsers.add_parser('predict', help='Model predictions')
  add_common(predict, config=False)
  predict.add_argument('trace', help='Trace file')
  predict.add_argument('--use-case', choices=control.USE_CASES)
  predict.add_argument(
      '--p-idle', type=float, help="Defaults to the trace's p_idle knob"
  )
  predict.add_argument('--p-baseline', type=float)
  predict.add_argument('--tau-v', type=float, default=analysis.DEFAULT_TAU_V)

  sweep = subparsers.add_parser('sweep', help='Knob sensitivity sweep')
  add_common(sweep, config=False)
  sweep.add_argument('plan', help='Python sweep plan (sweep_plan)')
  sweep.add_argument(
      '--knob', action='append', default=[],
      help='Base config override key=value, repeatable',
  )
  sweep.add_argument('--jobs', type=int, help='Parallel runs')

  cost = subparsers.add_parser('cost', help='Yearly savings estimate')
  cost.add_argument('--capacity-gw', type=float, default=6.0)
  cost.add_argument('--gpu-energy-fraction', type=float, default=0.5)
  cost.add_argument('--price-per-kwh', type=float, default=0.14)
  cost.add_argument('--saving-fraction', type=float, default=0.04)

  calibrate = subparsers.add_parser('calibrate', help='Calibration report')
  add_common(calibrate)
  calibrate.add_argument('--iterations', type=int, default=120)
  calibrate.add_argument('--warm-up', type=int, default=40)
  return parser


def run(args) -> int:
  """Dispatches a parsed command; returns the exit code."""
  command = args.command
  if command == 'cost':
    dollars = cmd_cost(args.capacity_gw, args.gpu_energy_fraction,
                       args.price_per_kwh, args.saving_fraction)
    print(f'${dollars:,.0f} per year')
    return EXIT_OK

  if command in ('analyze', 'predict'):
    out_dir = prepare_output_dir(
        args.out, command, configuration.config_stem(args.trace)
    )
    write_manifest(out_dir, command, {})
    if command == 'analyze':
      cmd_analyze(args.trace, out_dir, args.run_log, args.aggregation)
    else:
      for p in cmd_predict(args.trace, out_dir, args.use_case, args.p_idle,
                           args.p_baseline, args.tau_v):
        print(f'{p.use_case}: {p.benefit}')
    return EXIT_OK

  if command == 'sweep':
    plan = load_plan(args.plan, args.knob, args.jobs)
    out_dir = prepare_output_dir(
        args.out, command, configuration.config_stem(args.plan)
    )
    write_manifest(out_dir, command, {
        'base': plan.base_config,
        'overrides': plan.overrides,
        'parallelism': plan.parallelism,
    })
    rows = cmd_sweep(plan, out_dir)
    failed = sum(1 for r in rows if r.get('error'))
    print(f'{len(rows)} runs, {failed} failed')
    return EXIT_OK

  config = configuration.resolve_config(
      args.config, args.knob, args.seed, getattr(args, 'use_case', None)
  )
  out_dir = prepare_output_dir(
      args.out, command, configuration.config_stem(args.config)
  )
  write_manifest(out_dir, command, config)
  if command == 'simulate':
    cmd_simulate(config, out_dir)
    return EXIT_OK
  if command == 'calibrate':
    report = cmd_calibrate(config, out_dir, args.iterations, args.warm_up)
    print(json.dumps(_json_ready(report), indent=2))
    return EXIT_OK
  _, metrics = cmd_control(config, out_dir)
  print(json.dumps(_json_ready(metrics), indent=2))
  if metrics['power_convergence'] is control.NEVER:
    return EXIT_NEVER_CONVERGED
  return EXIT_OK


def main(argv=None) -> int:
  args = build_parser().parse_args(argv)
  logging.basicConfig(
      level=logging.DEBUG if args.verbose else logging.INFO,
      format='%(levelname)s %(name)s: %(message)s',
  )
  try:
    return run(args)
  except ValueError as e:
    print(f'Error: {e}', file=sys.stderr)
    return EXIT_VALIDATION
  except (RuntimeError, OSError) as e:
    print(f'Error: {e}', file=sys.stderr)
    return EXIT_RUNTIME


if __name__ == '__main__':
  sys.exit(main())
