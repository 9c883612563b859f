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

"""Analytical performance, power and cost models for straggler mitigation.

Kernels are split into a constant-overlap set C and a varying-overlap set V.
Aligning every GPU to an aggregate runtime t_agg(C) speeds the iteration up by
S = t_max(C) / t_agg(C) and changes the power of rank r, whose constant-set
runtime is t_r, by the factor delta_r = t_agg(C) / t_r.
"""

import dataclasses
import logging
import math
from typing import Optional, Sequence

import numpy as np

import analysis
from traces import IterationTrace

logger = logging.getLogger(__name__)

AGG_FUNCTIONS = {'min': np.min, 'med': np.median, 'max': np.max}

# Each use case aligns GPUs to a different aggregate of the constant set.
USE_CASE_AGG = {
    'GPU-Red': 'max',
    'GPU-Realloc': 'med',
    'CPU-Slosh': 'min',
}

HOURS_PER_YEAR = 8760


@dataclasses.dataclass(frozen=True, eq=False)
class PerfModelInput:
  """Kernel durations split into constant and varying overlap sets.

  Attributes:
    durations: [G, K] kernel durations, positive.
    constant: Column positions of the constant-overlap kernels.
    varying: Column positions of the varying-overlap kernels.
    agg: Aggregation over GPUs, one of 'min', 'med', 'max'.
  """

  durations: np.ndarray
  constant: tuple[int, ...]
  varying: tuple[int, ...]
  agg: str = 'max'

  def __post_init__(self):
    durations = np.asarray(self.durations, dtype=float)
    if durations.ndim != 2:
      raise ValueError('durations must be a [G, K] matrix')
    object.__setattr__(self, 'durations', durations)
    constant = set(self.constant)
    varying = set(self.varying)
    if constant & varying:
      raise ValueError(f'kernels {sorted(constant & varying)} are in both sets')
    if constant | varying != set(range(durations.shape[1])):
      raise ValueError('constant and varying sets must cover every kernel')
    if np.any(durations <= 0):
      raise ValueError('kernel durations must be positive')
    if self.agg not in AGG_FUNCTIONS:
      raise ValueError(f'unknown aggregation {self.agg!r}')

  @property
  def gpu_count(self) -> int:
    return self.durations.shape[0]


@dataclasses.dataclass(frozen=True)
class PowerModelInput:
  p_baseline: float
  p_idle: float
  rank_runtimes: tuple[float, ...]
  t_agg_constant: float
  gpu_count: int

  def __post_init__(self):
    if not self.p_baseline > self.p_idle >= 0:
      raise ValueError(
          f'need P_baseline > P_idle >= 0, got {self.p_baseline} and'
          f' {self.p_idle}'
      )
    if any(b < a for a, b in zip(self.rank_runtimes, self.rank_runtimes[1:])):
      raise ValueError('rank runtimes must be non-decreasing')


@dataclasses.dataclass(frozen=True)
class ModelPrediction:
  """Predicted effect of aligning GPUs for one use case.

  power_ratio is the raw P_sys'/P_sys of the model. expected_power_change is
  its reciprocal, the node power after/before that the use case implies.
  """

  use_case: Optional[str] = None
  agg: Optional[str] = None
  power_ratio: Optional[float] = None
  throughput_ratio: Optional[float] = None
  s_c: Optional[float] = None
  s_v: Optional[float] = None
  r_c: Optional[float] = None
  r_v: Optional[float] = None
  t_baseline: Optional[float] = None
  deltas: tuple[float, ...] = ()
  rank_powers: tuple[float, ...] = ()
  expected_power_change: Optional[float] = None
  benefit: str = ''

  def as_row(self) -> dict[str, object]:
    return {
        'use_case': self.use_case,
        'agg': self.agg,
        'power_ratio': self.power_ratio,
        'throughput_ratio': self.throughput_ratio,
        'S_C': self.s_c,
        'R_C': self.r_c,
        'R_V': self.r_v,
        'expected_power_change': self.expected_power_change,
        'benefit': self.benefit,
    }


def t_agg(durations, kernel_set: Sequence[int], agg: str) -> float:
  """Sum over kernel_set of the aggregate over GPUs of each duration."""
  if not len(kernel_set):  # pylint: disable=g-explicit-length-test
    raise ValueError('t_agg needs a non-empty kernel set')
  columns = np.asarray(durations, dtype=float)[:, list(kernel_set)]
  per_kernel = AGG_FUNCTIONS[agg](columns, axis=0)
  return math.fsum(per_kernel)


def baseline_runtime(inp: PerfModelInput) -> float:
  """Runtime confined by the straggler: t_max(C) + t_min(V)."""
  if not inp.constant and not inp.varying:
    raise ValueError('both kernel sets are empty')
  total = 0.0
  if inp.constant:
    total += t_agg(inp.durations, inp.constant, 'max')
  if inp.varying:
    total += t_agg(inp.durations, inp.varying, 'min')
  return total


def speedup(inp: PerfModelInput) -> ModelPrediction:
  if not inp.constant:
    raise ValueError('speedup needs at least one constant-overlap kernel')
  t_max_c = t_agg(inp.durations, inp.constant, 'max')
  t_min_v = t_agg(inp.durations, inp.varying, 'min') if inp.varying else 0.0
  t_base = t_max_c + t_min_v
  s_c = t_max_c / t_agg(inp.durations, inp.constant, inp.agg)
  # Varying kernels only get faster once C is aligned, so S_V = S_C.
  s_v = s_c
  r_c = t_max_c / t_base
  r_v = t_min_v / t_base
  # 1 / (R_C / S_C + R_V / S_V) with t_base factored out.
  s_iter = t_base / (t_max_c / s_c + t_min_v / s_v)
  return ModelPrediction(
      agg=inp.agg,
      throughput_ratio=s_iter,
      s_c=s_c,
      s_v=s_v,
      r_c=r_c,
      r_v=r_v,
      t_baseline=t_base,
  )


def rank_runtimes(durations, constant: Sequence[int]) -> tuple[float, ...]:
  """Sorts each constant kernel's durations over GPUs and sums per rank."""
  columns = np.sort(np.asarray(durations, dtype=float)[:, list(constant)],
                    axis=0)
  return tuple(math.fsum(row) for row in columns)


def rank_power(p_baseline: float, p_idle: float, delta: float) -> float:
  return (p_baseline - p_idle) / delta + p_idle


def power_model_input(
    inp: PerfModelInput, p_baseline: float, p_idle: float
) -> PowerModelInput:
  return PowerModelInput(
      p_baseline=p_baseline,
      p_idle=p_idle,
      rank_runtimes=rank_runtimes(inp.durations, inp.constant),
      t_agg_constant=t_agg(inp.durations, inp.constant, inp.agg),
      gpu_count=inp.gpu_count,
  )


def power_ratio(inp: PowerModelInput, agg: Optional[str] = None):
  """Node power ratio P_sys'/P_sys after aligning ranks to t_agg(C)."""
  if inp.t_agg_constant == 0:
    raise ValueError('t_agg(C) is zero')
  deltas = tuple(inp.t_agg_constant / t_r for t_r in inp.rank_runtimes)
  powers = tuple(rank_power(inp.p_baseline, inp.p_idle, d) for d in deltas)
  p_sys = inp.gpu_count * inp.p_baseline
  ratio = math.fsum(powers) / p_sys
  return ModelPrediction(
      agg=agg,
      power_ratio=ratio,
      deltas=deltas,
      rank_powers=powers,
      expected_power_change=1.0 / ratio,
  )


def perf_input_from_traces(
    traces: Sequence[IterationTrace],
    agg: str = 'max',
    tau_v: float = analysis.DEFAULT_TAU_V,
) -> PerfModelInput:
  classification = analysis.classify_overlap(traces, tau_v)
  indices, durations = analysis.kernel_duration_medians(traces)
  constant = tuple(
      j for j, k in enumerate(indices) if classification[k] == 'constant'
  )
  varying = tuple(
      j for j, k in enumerate(indices) if classification[k] == 'varying'
  )
  return PerfModelInput(durations, constant, varying, agg)


def power_input_from_traces(
    traces: Sequence[IterationTrace],
    p_baseline: float,
    p_idle: float,
    agg: str = 'max',
    tau_v: float = analysis.DEFAULT_TAU_V,
) -> PowerModelInput:
  return power_model_input(
      perf_input_from_traces(traces, agg, tau_v), p_baseline, p_idle
  )


def _benefit(use_case, throughput, power_change):
  power_pct = (power_change - 1.0) * 100
  gain_pct = (throughput - 1.0) * 100
  if use_case == 'GPU-Red':
    return f'node power {power_pct:+.1f}% at unchanged throughput'
  if use_case == 'GPU-Realloc':
    return f'throughput {gain_pct:+.1f}% under the node cap'
  return (
      f'throughput {gain_pct:+.1f}% drawing {power_pct:+.1f}% GPU power from'
      ' the CPU budget'
  )


def baseline_power_from_traces(traces: Sequence[IterationTrace]) -> float:
  caps = [
      s.cap_mW for t in traces for samples in t.telemetry for s in samples
  ]
  if not caps:
    raise ValueError('traces carry no telemetry to read the power cap from')
  return float(np.median(caps)) / 1e3


def predict_use_case(
    traces: Sequence[IterationTrace],
    use_case: str,
    p_idle: float,
    p_baseline: Optional[float] = None,
    tau_v: float = analysis.DEFAULT_TAU_V,
) -> ModelPrediction:
  """Composes the performance and power predictions for one use case.

  Args:
    traces: Sampled iterations.
    use_case: 'GPU-Red', 'GPU-Realloc' or 'CPU-Slosh'.
    p_idle: Idle power of one GPU in watts.
    p_baseline: Baseline power of one GPU; the traced power cap by default.
    tau_v: Overlap range separating constant from varying kernels.

  Returns:
    The combined prediction.
  """
  if use_case not in USE_CASE_AGG:
    raise ValueError(
        f'unknown use case {use_case!r}, expected one of {list(USE_CASE_AGG)}'
    )
  agg = USE_CASE_AGG[use_case]
  if p_baseline is None:
    p_baseline = baseline_power_from_traces(traces)
  perf_in = perf_input_from_traces(traces, agg, tau_v)
  perf = speedup(perf_in)
  power = power_ratio(power_model_input(perf_in, p_baseline, p_idle), agg)
  logger.debug(
      '%s: agg=%s throughput=%.4f power=%.4f', use_case, agg,
      perf.throughput_ratio, power.power_ratio,
  )
  return dataclasses.replace(
      perf,
      use_case=use_case,
      power_ratio=power.power_ratio,
      deltas=power.deltas,
      rank_powers=power.rank_powers,
      expected_power_change=power.expected_power_change,
      benefit=_benefit(
          use_case, perf.throughput_ratio, power.expected_power_change
      ),
  )


def annual_energy_kwh(capacity_gw: float, gpu_energy_fraction: float) -> float:
  return capacity_gw * 1e6 * gpu_energy_fraction * HOURS_PER_YEAR


def cost_savings(
    capacity_gw: float,
    gpu_energy_fraction: float,
    price_per_kwh: float,
    saving_fraction: float,
) -> float:
  """Yearly dollars saved by cutting GPU energy by saving_fraction."""
  arguments = {
      'capacity_gw': capacity_gw,
      'gpu_energy_fraction': gpu_energy_fraction,
      'price_per_kwh': price_per_kwh,
      'saving_fraction': saving_fraction,
  }
  for name, value in arguments.items():
    if value < 0:
      raise ValueError(f'{name} must be >= 0, got {value}')
  return (
      annual_energy_kwh(capacity_gw, gpu_energy_fraction)
      * price_per_kwh
      * saving_fraction
  )
