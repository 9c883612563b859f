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

"""Lead-driven power capping: cap updates, use-case policies and the loop."""

import dataclasses
import logging
import math
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

import analysis
from backends import PowerBackend
from backends import call_with_retries

logger = logging.getLogger(__name__)

USE_CASES = ('GPU-Red', 'GPU-Realloc', 'CPU-Slosh')
SCALES = ('global', 'local')

# Knob values evaluated for each setting, default first.
KNOB_VALUES = {
    'sampling_period': (10, 4, 7),
    'warm_up': (50, 3, 6, 12, 25),
    'window_size': (3, 1, 2, 5),
    'aggregation': ('sum', 'max', 'last'),
    'max_adjustment': (15, 5, 10, 30),
    'scale': ('global', 'local'),
    'power_cap': (700, 650, 600, 550, 500),
    'power_budget': (20, 10, 30, 50),
}

# Marker for a series that never settles.
NEVER = None


class InfeasibleCapError(ValueError):
  """The node cap cannot give every GPU its minimum operational cap."""


@dataclasses.dataclass(frozen=True, eq=False)
class CapVector:
  """Per-GPU power caps with the node-level limits they must respect."""

  caps: np.ndarray
  tdp_w: float = 750.0
  node_cap_w: Optional[float] = None
  min_cap_w: float = 200.0

  def __post_init__(self):
    caps = np.asarray(self.caps, dtype=float)
    object.__setattr__(self, 'caps', caps)
    if np.any(caps > self.tdp_w + 1e-9):
      raise ValueError(f'caps {caps.tolist()} exceed TDP {self.tdp_w} W')
    if self.node_cap_w is not None and caps.sum() > self.node_cap_w + 1e-6:
      raise ValueError(
          f'caps sum to {caps.sum():.1f} W above the node cap'
          f' {self.node_cap_w} W'
      )

  def __len__(self):
    return len(self.caps)

  @property
  def total_w(self) -> float:
    return float(self.caps.sum())

  def with_caps(self, caps) -> 'CapVector':
    return dataclasses.replace(self, caps=caps)

  def rounded(self) -> 'CapVector':
    """Caps in whole watts; floored when a node cap must hold."""
    if self.node_cap_w is None:
      return self.with_caps(
          np.minimum(np.round(self.caps), math.floor(self.tdp_w))
      )
    return self.with_caps(np.floor(self.caps + 1e-9))


def initial_cap_vector(
    use_case: str,
    gpu_count: int,
    cap_w: float = 700.0,
    tdp_w: float = 750.0,
    budget_w: float = 0.0,
    min_cap_w: float = 200.0,
) -> CapVector:
  """Starting caps; the node cap depends on the use case.

  GPU-Realloc holds the node at the sum of the starting caps. CPU-Slosh adds
  budget_w for every GPU, the power moved over from the CPUs.
  """
  if use_case not in USE_CASES:
    raise ValueError(f'unknown use case {use_case!r}')
  caps = np.full(gpu_count, float(cap_w))
  node_cap = None
  if use_case == 'GPU-Realloc':
    node_cap = caps.sum()
  elif use_case == 'CPU-Slosh':
    node_cap = caps.sum() + gpu_count * budget_w
  return CapVector(caps, tdp_w=tdp_w, node_cap_w=node_cap, min_cap_w=min_cap_w)


@dataclasses.dataclass(frozen=True)
class ControllerConfig:
  """Sampling and adjustment knobs of the control loop.

  Attributes:
    sampling_period: Iterations between two samples.
    warm_up: Samples discarded before the first adjustment.
    window_size: Lead vectors averaged per adjustment.
    aggregation: Lead aggregation, 'sum', 'max' or 'last'.
    max_adjustment_w: Largest per-adjustment cap increase.
    scale: 'global' scales increases by the lead relative to the largest lead
      seen so far, 'local' does not.
    use_case: 'GPU-Red', 'GPU-Realloc' or 'CPU-Slosh'.
    slosh_budget_w: Power per GPU moved from the CPU under CPU-Slosh.
    iterations: Iterations to run.
    convergence_windows: Windows with unchanged caps that mark convergence.
    convergence_tolerance_w: Largest cap change that counts as unchanged.
    converged_sampling_period: Sampling period after convergence; unchanged
      when None.
    max_attempts: Attempts per backend call.
    retry_wait_s: Wait between attempts.
  """

  sampling_period: int = 10
  warm_up: int = 50
  window_size: int = 3
  aggregation: str = 'sum'
  max_adjustment_w: float = 15.0
  scale: str = 'global'
  use_case: str = 'GPU-Red'
  slosh_budget_w: float = 20.0
  iterations: int = 1000
  convergence_windows: int = 3
  convergence_tolerance_w: float = 1.0
  converged_sampling_period: Optional[int] = None
  max_attempts: int = 3
  retry_wait_s: float = 0.0

  def __post_init__(self):
    for name in ('sampling_period', 'window_size', 'iterations',
                 'convergence_windows', 'max_attempts'):
      if getattr(self, name) < 1:
        raise ValueError(f'{name} must be >= 1')
    if self.warm_up < 0:
      raise ValueError('warm_up must be >= 0')
    if self.max_adjustment_w <= 0:
      raise ValueError('max_adjustment_w must be positive')
    if self.slosh_budget_w < 0:
      raise ValueError('slosh_budget_w must be >= 0')
    if self.aggregation not in analysis.AGGREGATIONS:
      raise ValueError(f'unknown aggregation {self.aggregation!r}')
    if self.scale not in SCALES:
      raise ValueError(f'unknown scale {self.scale!r}')
    if self.use_case not in USE_CASES:
      raise ValueError(f'unknown use case {self.use_case!r}')


@dataclasses.dataclass
class ControllerState:
  global_max_lead: float = 0.0
  window: list[np.ndarray] = dataclasses.field(default_factory=list)
  sample_count: int = 0
  stable_windows: int = 0
  converged: bool = False
  cap_history: list[np.ndarray] = dataclasses.field(default_factory=list)


def _lead_array(leads) -> np.ndarray:
  return np.asarray(getattr(leads, 'values', leads), dtype=float)


def inc_power_gpu(leads, max_inc: float, global_max: float, scale: str):
  """Cap increases proportional to how far each GPU trails the leader.

  Args:
    leads: LeadVector or array of per-GPU lead values.
    max_inc: Largest increase in watts.
    global_max: Largest lead seen in earlier windows.
    scale: 'global' or 'local'.

  Returns:
    (increase vector in watts, updated global maximum lead).
  """
  values = _lead_array(leads)
  if values.size < 2:
    raise ValueError('need lead values for at least 2 GPUs')
  if scale not in SCALES:
    raise ValueError(f'unknown scale {scale!r}')
  low, high = values.min(), values.max()
  new_global_max = max(float(global_max), float(high))
  if high > low:
    norm_lead = 1.0 - (values - low) / (high - low)
  else:
    norm_lead = np.ones_like(values)
  if scale == 'local':
    factor = 1.0
  elif new_global_max > 0:
    factor = high / new_global_max
  else:
    factor = 0.0
  return norm_lead * factor * max_inc, new_global_max


def adj_power_node(increase, caps: CapVector) -> CapVector:
  """Applies increases, then pulls caps back under the node cap and TDP.

  Both corrections subtract the same amount from every GPU, so the
  differences between caps are those right after the increase.

  Raises:
    InfeasibleCapError: if the node cap cannot cover every GPU at its minimum
      cap, or the corrections push a cap below that minimum. No change is
      applied.
  """
  if caps.node_cap_w is None:
    raise ValueError('adj_power_node needs a node-level cap')
  g_count = len(caps)
  if caps.node_cap_w < g_count * caps.min_cap_w:
    raise InfeasibleCapError(
        f'node cap {caps.node_cap_w} W cannot cover {g_count} GPUs at'
        f' {caps.min_cap_w} W'
    )
  updated = caps.caps + np.asarray(increase, dtype=float)
  excess = updated.sum() - caps.node_cap_w
  if excess > 0:
    updated = updated - math.ceil(excess / g_count)
  over_tdp = updated.max() - caps.tdp_w
  if over_tdp > 0:
    updated = updated - over_tdp
  if updated.min() < caps.min_cap_w - 1e-9:
    raise InfeasibleCapError(
        f'cap {updated.min():.1f} W of GPU {int(updated.argmin())} falls below'
        f' the minimum {caps.min_cap_w} W'
    )
  return caps.with_caps(updated)


def gpu_red_deltas(increase) -> np.ndarray:
  increase = np.asarray(increase, dtype=float)
  return increase - increase.max()


def apply_gpu_red(
    leads, caps: CapVector, max_inc: float, global_max: float, scale: str
):
  """Lowers leader caps in proportion to their lead.

  Returns:
    (new CapVector, updated global maximum lead).
  """
  if caps.node_cap_w is not None:
    raise ValueError('GPU-Red runs without a node-level cap')
  increase, new_global_max = inc_power_gpu(leads, max_inc, global_max, scale)
  return caps.with_caps(caps.caps + gpu_red_deltas(increase)), new_global_max


def apply_policy(use_case, leads, caps, config, global_max):
  if use_case == 'GPU-Red':
    return apply_gpu_red(
        leads, caps, config.max_adjustment_w, global_max, config.scale
    )
  increase, new_global_max = inc_power_gpu(
      leads, config.max_adjustment_w, global_max, config.scale
  )
  return adj_power_node(increase, caps), new_global_max


@dataclasses.dataclass
class RunLog:
  """Everything the control loop observed and did."""

  gpu_count: int
  use_case: str
  samples: list[dict[str, Any]] = dataclasses.field(default_factory=list)
  iteration_power_w: list[float] = dataclasses.field(default_factory=list)
  iteration_throughput: list[float] = dataclasses.field(default_factory=list)
  adjustments: list[dict[str, Any]] = dataclasses.field(default_factory=list)
  first_adjustment_sample: Optional[int] = None
  converged: bool = False
  converged_sample: Optional[int] = None
  initial_caps: Optional[CapVector] = None
  final_caps: Optional[CapVector] = None

  def to_frame(self) -> pd.DataFrame:
    rows = []
    for sample in self.samples:
      row = {'sample_idx': sample['sample_idx'],
             'iteration': sample['iteration']}
      for g in range(self.gpu_count):
        row[f'cap_{g}'] = sample['caps'][g]
      for g in range(self.gpu_count):
        row[f'lead_{g}'] = sample['leads'][g]
      row['node_power_w'] = sample['node_power_w']
      row['throughput'] = sample['throughput']
      row['converged'] = sample['converged']
      rows.append(row)
    return pd.DataFrame(rows)

  @property
  def power_series(self) -> np.ndarray:
    return np.array([s['node_power_w'] for s in self.samples])

  @property
  def throughput_series(self) -> np.ndarray:
    return np.array([s['throughput'] for s in self.samples])


def control_loop(
    backend: PowerBackend,
    config: ControllerConfig,
    caps: CapVector,
) -> RunLog:
  """Samples leads, adjusts caps through the backend and logs the run.

  Args:
    backend: Power management backend of the node.
    config: Loop knobs.
    caps: Initial caps, with the node cap of the use case.

  Returns:
    The run log.

  Raises:
    RuntimeError: when a backend call keeps failing.
  """
  retry = dict(max_attempts=config.max_attempts, wait_time=config.retry_wait_s)
  log = RunLog(gpu_count=len(caps), use_case=config.use_case,
               initial_caps=caps)
  state = ControllerState()
  call_with_retries(backend.set_caps, caps, **retry)
  state.cap_history.append(caps.caps.copy())

  period = config.sampling_period
  next_sample = period
  for iteration in range(config.iterations):
    trace = call_with_retries(backend.sample_iteration, **retry)
    node_power = float(np.sum(call_with_retries(backend.read_power, **retry)))
    throughput = 1e9 / trace.wall_time_ns
    log.iteration_power_w.append(node_power)
    log.iteration_throughput.append(throughput)
    if iteration + 1 < next_sample:
      continue
    next_sample = iteration + 1 + period

    leads = analysis.lead_values(trace, config.aggregation)
    sample_idx = state.sample_count
    state.sample_count += 1
    if state.sample_count > config.warm_up:
      state.window.append(leads.values.astype(float))
      if len(state.window) >= config.window_size:
        averaged = np.mean(state.window, axis=0)
        state.window.clear()
        proposed, state.global_max_lead = apply_policy(
            config.use_case, averaged, caps, config, state.global_max_lead
        )
        proposed = proposed.rounded()
        change = float(np.max(np.abs(proposed.caps - caps.caps)))
        if change > config.convergence_tolerance_w:
          state.stable_windows = 0
        else:
          state.stable_windows += 1
        if change > 0:
          call_with_retries(backend.set_caps, proposed, **retry)
          log.adjustments.append({
              'sample_idx': sample_idx,
              'iteration': iteration,
              'before': caps.caps.tolist(),
              'after': proposed.caps.tolist(),
          })
          logger.debug('Sample %d: caps %s', sample_idx, proposed.caps)
          caps = proposed
          state.cap_history.append(caps.caps.copy())
        if log.first_adjustment_sample is None:
          log.first_adjustment_sample = sample_idx
        if (not state.converged
            and state.stable_windows >= config.convergence_windows):
          state.converged = True
          log.converged_sample = sample_idx
          logger.info('Caps converged at sample %d', sample_idx)
          if config.converged_sampling_period:
            period = config.converged_sampling_period
            next_sample = iteration + 1 + period

    log.samples.append({
        'sample_idx': sample_idx,
        'iteration': iteration,
        'caps': caps.caps.tolist(),
        'leads': leads.values.tolist(),
        'node_power_w': node_power,
        'throughput': throughput,
        'converged': state.converged,
    })

  log.converged = state.converged
  log.final_caps = caps
  return log


def convergence_index(values, window: int = 1, increasing=None):
  """First sample of the window whose rolling mean reaches the settled level.

  A decreasing series settles within 0.5% above its rolling minimum, an
  increasing one within 0.5% below its rolling maximum. The rolling mean
  trails the series by window - 1 samples, so the reported index is the start
  of the first settled window: a step at sample 10 converges at 10.

  Returns:
    The sample index, or NEVER when only the final sample qualifies.
  """
  values = np.asarray(values, dtype=float)
  if values.size == 0:
    raise ValueError('convergence needs at least one sample')
  rolling = pd.Series(values).rolling(window, min_periods=1).mean().to_numpy()
  if increasing is None:
    increasing = rolling[-1] > rolling[0]
  if increasing:
    settled = rolling >= 0.995 * rolling.max()
  else:
    settled = rolling <= 1.005 * rolling.min()
  index = int(np.argmax(settled))
  if index == values.size - 1 and values.size > 1:
    return NEVER
  return max(0, index - window + 1)


def coefficient_of_variation(values) -> float:
  values = np.asarray(values, dtype=float)
  mean = values.mean()
  if mean == 0:
    return 0.0
  return float(values.std() / mean)


def _change(series, first_adjustment, tail=5):
  if first_adjustment is None or first_adjustment == 0:
    return 1.0
  before = series[:first_adjustment][-tail:]
  after = series[first_adjustment:][-tail:]
  return float(np.mean(after) / np.mean(before))


def convergence_metrics(log: RunLog, rolling_window: int = 5):
  """Convergence, variation and change of node power and throughput.

  Args:
    log: A run log with at least one sample.
    rolling_window: Samples in the rolling mean.

  Returns:
    A dict with power_convergence, throughput_convergence (sample counts or
    NEVER), power_variation and throughput_variation (CV after convergence),
    and power_change and throughput_change (mean of the last five samples
    over the mean of the last five samples before the first adjustment).
  """
  if not log.samples:
    raise ValueError('run log has no samples')
  power = log.power_series
  throughput = log.throughput_series
  power_at = convergence_index(power, rolling_window)
  throughput_at = convergence_index(throughput, rolling_window,
                                    increasing=True)
  return {
      'power_convergence': power_at,
      'throughput_convergence': throughput_at,
      'power_variation': (
          NEVER if power_at is NEVER
          else coefficient_of_variation(power[power_at:])
      ),
      'throughput_variation': (
          NEVER if throughput_at is NEVER
          else coefficient_of_variation(throughput[throughput_at:])
      ),
      'power_change': _change(power, log.first_adjustment_sample),
      'throughput_change': _change(throughput, log.first_adjustment_sample),
      'caps_converged': log.converged,
  }
