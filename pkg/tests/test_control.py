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

import numpy as np
import pytest

from backends import SimulatedBackend
import control
from control import CapVector
from control import ControllerConfig
import simulation_utils


def test_increase_example():
  increase, global_max = control.inc_power_gpu([0, 50, 100], 15, 0, 'global')

  np.testing.assert_allclose(increase, [15, 7.5, 0])
  assert global_max == 100


def test_global_scale_shrinks_increase_below_seen_maximum():
  increase, global_max = control.inc_power_gpu(
      [0, 50, 100], 15, 200, 'global'
  )

  np.testing.assert_allclose(increase, [7.5, 3.75, 0])
  assert global_max == 200


def test_local_scale_ignores_seen_maximum():
  increase, _ = control.inc_power_gpu([0, 50, 100], 15, 200, 'local')

  np.testing.assert_allclose(increase, [15, 7.5, 0])


def test_equal_leads():
  zero, _ = control.inc_power_gpu([0, 0, 0], 15, 0, 'global')
  equal, _ = control.inc_power_gpu([5, 5], 15, 0, 'global')

  np.testing.assert_array_equal(zero, 0)
  np.testing.assert_allclose(equal, [15, 15])


def test_increase_needs_two_gpus():
  with pytest.raises(ValueError):
    control.inc_power_gpu([3], 15, 0, 'global')
  with pytest.raises(ValueError):
    control.inc_power_gpu([3, 4], 15, 0, 'remote')


def test_node_adjustment_example():
  caps = CapVector([700, 700], node_cap_w=1400)

  adjusted = control.adj_power_node([15, 0], caps)

  np.testing.assert_allclose(adjusted.caps, [707, 692])


def test_node_adjustment_clips_to_tdp():
  caps = CapVector([745, 700], node_cap_w=1445)

  adjusted = control.adj_power_node([15, 0], caps)

  np.testing.assert_allclose(adjusted.caps, [750, 690])


def test_node_adjustment_under_budget_keeps_increase():
  caps = CapVector([650, 650], node_cap_w=1400)

  adjusted = control.adj_power_node([15, 5], caps)

  np.testing.assert_allclose(adjusted.caps, [665, 655])


def test_infeasible_node_cap():
  with pytest.raises(control.InfeasibleCapError):
    control.adj_power_node([0, 0], CapVector([150, 150], node_cap_w=300))
  with pytest.raises(ValueError):
    control.adj_power_node([0, 0], CapVector([700, 700]))


def test_node_adjustment_properties():
  rng = np.random.default_rng(13)
  for _ in range(10_000):
    gpu_count = int(rng.integers(2, 9))
    # Far enough above the minimum cap that no draw is infeasible.
    caps = rng.uniform(240, 750, size=gpu_count)
    node_cap = caps.sum() + rng.uniform(0, 50)
    leads = rng.uniform(0, 1e6, size=gpu_count)
    increase, _ = control.inc_power_gpu(leads, 15, 0, 'global')

    adjusted = control.adj_power_node(
        increase, CapVector(caps, node_cap_w=node_cap)
    )

    assert adjusted.caps.sum() <= node_cap + 1e-6
    assert adjusted.caps.max() <= 750 + 1e-9
    shift = adjusted.caps - (caps + increase)
    np.testing.assert_allclose(shift, shift[0], atol=1e-9)


def test_node_adjustment_refuses_caps_below_minimum():
  # Pulling GPU 0 back to TDP takes 25 W from GPU 1 as well.
  caps = CapVector([740, 205], node_cap_w=1000, min_cap_w=200)

  with pytest.raises(control.InfeasibleCapError, match='below the minimum'):
    control.adj_power_node([35, 0], caps)

  crowded = CapVector([600, 205], node_cap_w=805, min_cap_w=200)
  with pytest.raises(control.InfeasibleCapError):
    control.adj_power_node([20, 0], crowded)


def test_gpu_red_only_lowers_leaders():
  caps = CapVector([700, 700, 700, 700])

  lowered, _ = control.apply_gpu_red([400, 0, 200, 100], caps, 15, 0,
                                     'global')

  np.testing.assert_allclose(lowered.caps, [685, 700, 692.5, 696.25])


def test_gpu_red_never_raises_caps():
  rng = np.random.default_rng(17)
  for _ in range(1000):
    leads = rng.uniform(0, 1e5, size=8)
    caps = CapVector(rng.uniform(300, 750, size=8))

    lowered, _ = control.apply_gpu_red(leads, caps, 15, 0, 'global')

    assert np.all(lowered.caps <= caps.caps)
    slowest = int(np.argmin(leads))
    assert lowered.caps[slowest] == caps.caps[slowest]


def test_gpu_red_rejects_node_cap():
  with pytest.raises(ValueError):
    control.apply_gpu_red([0, 1], CapVector([700, 700], node_cap_w=1400),
                          15, 0, 'global')


def test_cap_vector_checks_limits():
  with pytest.raises(ValueError, match='TDP'):
    CapVector([760, 700])
  with pytest.raises(ValueError, match='node cap'):
    CapVector([700, 700], node_cap_w=1300)
  np.testing.assert_array_equal(
      CapVector([699.99999999999, 650.6]).rounded().caps, [700, 651]
  )
  np.testing.assert_array_equal(
      CapVector([699.99999999999, 650.6], node_cap_w=1351).rounded().caps,
      [700, 650],
  )


def test_initial_cap_vector_per_use_case():
  red = control.initial_cap_vector('GPU-Red', 8)
  realloc = control.initial_cap_vector('GPU-Realloc', 8, cap_w=600)
  slosh = control.initial_cap_vector('CPU-Slosh', 8, budget_w=20)

  assert red.node_cap_w is None
  assert realloc.node_cap_w == 4800
  assert slosh.node_cap_w == 5600 + 8 * 20
  with pytest.raises(ValueError):
    control.initial_cap_vector('GPU-Boost', 8)


def test_controller_config_validation():
  with pytest.raises(ValueError):
    ControllerConfig(sampling_period=0)
  with pytest.raises(ValueError):
    ControllerConfig(aggregation='mean')
  with pytest.raises(ValueError):
    ControllerConfig(use_case='GPU-Boost')
  with pytest.raises(ValueError):
    ControllerConfig(warm_up=-1)


def test_convergence_index():
  assert control.convergence_index([5.0] * 10) == 0
  assert control.convergence_index([10.0] * 10 + [5.0] * 10) == 10
  assert control.convergence_index(
      [1.0] * 5 + [2.0] * 5, increasing=True
  ) == 5
  assert control.convergence_index(np.arange(10, 0, -1)) is control.NEVER
  assert control.convergence_index([3.0]) == 0
  assert control.convergence_index([3.0, 3.0], window=5) == 0
  with pytest.raises(ValueError):
    control.convergence_index([])


def test_rolling_convergence_reports_the_step_sample():
  step = [100.0] * 10 + [90.0] * 20

  for window in (1, 3, 5):
    assert control.convergence_index(step, window) == 10
  assert control.convergence_index(
      [1.0] * 10 + [2.0] * 20, window=5, increasing=True
  ) == 10


def test_convergence_metrics_from_log():
  log = control.RunLog(gpu_count=2, use_case='GPU-Red')
  power = [100.0] * 5 + [90.0] * 10
  for i, p in enumerate(power):
    log.samples.append({
        'sample_idx': i, 'iteration': i, 'caps': [700, 700],
        'leads': [0, 0], 'node_power_w': p, 'throughput': 1.0,
        'converged': False,
    })
  log.first_adjustment_sample = 5

  metrics = control.convergence_metrics(log)

  assert metrics['power_convergence'] == 5
  assert metrics['throughput_convergence'] == 0
  assert metrics['power_variation'] == 0.0
  assert metrics['power_change'] == pytest.approx(0.9)
  assert metrics['throughput_change'] == 1.0


def test_coefficient_of_variation():
  assert control.coefficient_of_variation([0.0, 0.0]) == 0.0
  assert control.coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)


def _loop_config(use_case='GPU-Red', **kwargs):
  defaults = dict(
      sampling_period=2, warm_up=2, window_size=2, iterations=60,
      use_case=use_case,
  )
  defaults.update(kwargs)
  return ControllerConfig(**defaults)


def test_symmetric_node_keeps_caps(symmetric_node):
  config = _loop_config(sampling_period=1, warm_up=1, window_size=1,
                        iterations=6)
  caps = control.initial_cap_vector('GPU-Red', 8)

  log = control.control_loop(SimulatedBackend(symmetric_node), config, caps)

  assert log.adjustments == []
  np.testing.assert_array_equal(log.final_caps.caps, 700)
  assert log.converged
  assert log.first_adjustment_sample == 1
  assert len(log.samples) == 6


def _jitter_free_node(small_workload):
  return simulation_utils.calibrate_default_node(
      workload=small_workload, warm_start=True, frequency_jitter=0.0
  )


def test_gpu_red_lowers_leader_caps_without_losing_throughput(
    small_workload,
):
  log = control.control_loop(
      SimulatedBackend(_jitter_free_node(small_workload)),
      _loop_config(),
      control.initial_cap_vector('GPU-Red', 8),
  )

  assert log.adjustments
  assert log.final_caps.total_w < log.initial_caps.total_w
  assert np.all(log.final_caps.caps <= 700)
  metrics = control.convergence_metrics(log)
  assert metrics['throughput_change'] > 0.97
  assert metrics['power_change'] < 1.0


def test_realloc_respects_node_cap(small_workload):
  caps = control.initial_cap_vector('GPU-Realloc', 8)

  log = control.control_loop(
      SimulatedBackend(_jitter_free_node(small_workload)),
      _loop_config('GPU-Realloc'),
      caps,
  )

  assert log.adjustments
  for sample in log.samples:
    assert sum(sample['caps']) <= caps.node_cap_w + 1e-6
    assert max(sample['caps']) <= 750
  # The straggler is fed from the leaders.
  assert log.final_caps.caps[4] > 700


def test_run_log_frame_columns(symmetric_node):
  config = _loop_config(sampling_period=1, warm_up=0, window_size=1,
                        iterations=3)
  log = control.control_loop(
      SimulatedBackend(symmetric_node), config,
      control.initial_cap_vector('GPU-Red', 8),
  )

  frame = log.to_frame()

  assert list(frame.columns) == (
      ['sample_idx', 'iteration']
      + [f'cap_{g}' for g in range(8)]
      + [f'lead_{g}' for g in range(8)]
      + ['node_power_w', 'throughput', 'converged']
  )
  assert len(frame) == 3
  assert len(log.iteration_power_w) == 3


def test_converged_sampling_period_slows_sampling(symmetric_node):
  config = _loop_config(sampling_period=1, warm_up=0, window_size=1,
                        iterations=20, convergence_windows=2,
                        converged_sampling_period=5)

  log = control.control_loop(
      SimulatedBackend(symmetric_node), config,
      control.initial_cap_vector('GPU-Red', 8),
  )

  assert log.converged_sample == 1
  iterations = [s['iteration'] for s in log.samples]
  assert iterations[:2] == [0, 1]
  assert np.all(np.diff(iterations[2:]) == 5)
