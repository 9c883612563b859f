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

"""Shared fixtures: synthetic traces and small simulated nodes."""

import numpy as np
import pytest

import simulation_utils
from traces import IterationTrace
from traces import KernelEvent
from traces import TelemetrySample
import workloads


def build_trace(
    gpu_count=4,
    kernel_count=6,
    duration_ns=1000,
    delays=None,
    durations=None,
    overlaps=None,
    iteration=0,
    collective=True,
    base_ns=0,
):
  """A valid iteration where every GPU runs the same kernels back to back.

  Args:
    gpu_count: GPUs in the node.
    kernel_count: Compute kernels per GPU.
    duration_ns: Duration of every compute kernel unless durations is given.
    delays: Per-GPU start offset; a uniform delay shifts all of its kernels.
    durations: Optional [G, K] kernel durations.
    overlaps: Optional [G, K] overlap fractions.
    iteration: Iteration number.
    collective: Whether to add an all-gather at kernel_index 0.
    base_ns: Start of the iteration.

  Returns:
    An IterationTrace with two telemetry samples per GPU.
  """
  delays = np.zeros(gpu_count, dtype=np.int64) if delays is None else delays
  if durations is None:
    durations = np.full((gpu_count, kernel_count), duration_ns)
  durations = np.asarray(durations, dtype=np.int64)
  if overlaps is None:
    overlaps = np.zeros((gpu_count, kernel_count))
  events = []
  first = 0
  if collective:
    comm_end = base_ns + int(max(delays)) + 500
    for g in range(gpu_count):
      events.append(KernelEvent(
          gpu_id=g, iteration=iteration, kernel_index=0, name='f_ag',
          layer=0, phase='forward', kind='communication',
          start_ns=base_ns + int(delays[g]), end_ns=comm_end,
      ))
    first = 1
  for k in range(kernel_count):
    for g in range(gpu_count):
      start = base_ns + int(delays[g]) + int(durations[g, :k].sum())
      duration = int(durations[g, k])
      events.append(KernelEvent(
          gpu_id=g, iteration=iteration, kernel_index=first + k,
          name=f'f_op{k}', layer=k // 2, phase='forward', kind='compute',
          start_ns=start, end_ns=start + duration,
          overlap_ns=int(round(overlaps[g][k] * duration)),
      ))
  telemetry = tuple(
      tuple(
          TelemetrySample(
              ts_ns=base_ns + 100 * (i + 1),
              temp_mC=60_000 + 1_000 * g,
              freq_kHz=2_000_000 - 10_000 * g,
              power_mW=650_000,
              cap_mW=700_000,
          )
          for i in range(2)
      )
      for g in range(gpu_count)
  )
  return IterationTrace(
      iteration=iteration,
      gpu_count=gpu_count,
      events=tuple(events),
      telemetry=telemetry,
  )


@pytest.fixture
def trace_factory():
  return build_trace


@pytest.fixture
def small_workload():
  return workloads.build_workload(layers=2)


@pytest.fixture
def small_node(small_workload):
  """8-GPU default node, two layers, starting at steady state."""
  return simulation_utils.calibrate_default_node(
      workload=small_workload, warm_start=True, iterations=40
  )


@pytest.fixture
def symmetric_node(small_workload):
  return simulation_utils.calibrate_default_node(
      preset='symmetric', workload=small_workload, warm_start=True,
      iterations=40,
  )


@pytest.fixture
def quick_config():
  """Resolved-config overrides for short control runs."""
  return {
      'iterations': 200,
      'layers': 2,
      'sampling_period': 2,
      'warm_up': 3,
      'window_size': 2,
      'warm_start': True,
  }
