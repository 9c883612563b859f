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

import analysis
import gpu_physics
from gpu_physics import GpuModel
import simulation_utils
from simulation_utils import NodeConfig
from simulation_utils import NodeSimulator
import traces


def _run(config, iterations):
  return list(
      simulation_utils.generate_iteration_stream(config, iterations=iterations)
  )


def test_stream_yields_requested_iterations(small_node):
  iterations = _run(small_node, 3)

  assert [t.iteration for t in iterations] == [0, 1, 2]
  assert iterations[1].events[0].start_ns >= iterations[0].wall_time_ns


def test_simulated_iterations_are_valid_traces(small_node):
  for trace in _run(small_node, 3):
    traces.validate_trace(trace)
    assert all(len(samples) >= 1 for samples in trace.telemetry)


def test_collectives_end_together(small_node):
  trace = _run(small_node, 1)[0]

  for events in trace.by_kernel.values():
    if events[0].kind == 'communication':
      assert len({e.end_ns for e in events}) == 1


def test_same_seed_is_deterministic(small_node):
  assert _run(small_node, 3) == _run(small_node, 3)


def test_symmetric_node_has_no_straggler(symmetric_node):
  for trace in _run(symmetric_node, 5):
    leads = analysis.lead_values(trace, 'sum')
    np.testing.assert_array_equal(leads.values, 0)
    _, table = analysis.layer_overlap_table(trace)
    assert np.all(table == table[0])


def test_default_node_has_dominant_straggler(small_node):
  iterations = _run(small_node, 40)
  turns = analysis.straggler_turns(iterations)

  assert int(np.argmax(turns)) == 4
  assert turns[4] >= 0.8 * len(iterations)


def test_straggler_overlaps_least(small_node):
  tail = _run(small_node, 40)[-10:]
  summaries = [analysis.overlap_summary(t) for t in tail]

  hits = sum(s['min_overlap_gpu'] == s['straggler'] for s in summaries)
  assert hits >= 8
  assert all(s['max_leader_overlap'] > s['straggler_overlap']
             for s in summaries)


def test_default_node_telemetry_spread(small_node):
  iterations = _run(small_node, 40)[10:]
  ambient = small_node.gpus[0].ambient_c

  frequency = analysis.median_ratio(iterations, 'frequency_ghz')
  temperature = analysis.median_ratio(iterations, 'temperature_c', ambient)

  assert 1.04 <= frequency <= 1.09
  assert 1.10 <= temperature <= 1.22


def test_hotter_gpu_becomes_the_straggler(small_workload):
  config = NodeConfig(
      gpus=(
          GpuModel(leakage_w_per_c=4.0, thermal_resistance_k_per_w=0.06),
          GpuModel(leakage_w_per_c=4.0, thermal_resistance_k_per_w=0.07),
      ),
      workload=small_workload,
      warm_start=True,
      iterations=5,
  )

  for trace in _run(config, 5):
    assert analysis.lead_values(trace).straggler == 1


def test_raising_a_cap_raises_the_clock(small_node):
  simulator = NodeSimulator(small_node)
  before = simulator.state.gpus[4].frequency_ghz

  simulator.set_caps([700.0] * 4 + [750.0] + [700.0] * 3)

  assert simulator.caps[4] == 750.0
  assert simulator.state.gpus[4].frequency_ghz > before
  with pytest.raises(ValueError):
    simulator.set_caps([700.0] * 3)


def test_module_run_iteration_leaves_state_untouched(small_node):
  state = simulation_utils.initial_state(small_node)

  trace, new_state = simulation_utils.run_iteration(small_node, None, state)

  assert state.iteration == 0
  assert state.time_ns == 0
  assert new_state.iteration == 1
  assert new_state.time_ns == trace.wall_time_ns


def test_initial_caps_override_config(small_node):
  state = simulation_utils.initial_state(small_node, [650.0] * 8)

  assert [g.power_cap_w for g in state.gpus] == [650.0] * 8


def test_initial_cap_keeps_calibrated_hardware(small_workload):
  base = simulation_utils.calibrate_default_node(workload=small_workload)
  lowered = simulation_utils.calibrate_default_node(
      workload=small_workload, initial_cap_w=550.0
  )

  assert base.gpus == lowered.gpus
  assert lowered.initial_cap_w == 550.0


def test_node_validation(small_workload):
  with pytest.raises(ValueError):
    NodeConfig(gpus=(GpuModel(),), workload=small_workload)
  with pytest.raises(ValueError):
    simulation_utils.calibrate_default_node(preset='node-9')


def test_calibration_report(small_node):
  report = simulation_utils.calibration_report(
      small_node, iterations=30, warm_up=10
  )

  assert report['dominant_straggler'] == 4
  assert report['straggler_share'] >= 0.8
  assert report['targets']['frequency_ratio'] == pytest.approx(1.062)
  assert set(report) >= {
      'frequency_ratio', 'temperature_ratio', 'straggler_overlap',
      'max_leader_overlap', 'distinct_stragglers', 'leader_equilibrium_cv',
      'mean_frequency_ghz',
  }


def test_node0_rotates_stragglers(small_workload):
  config = simulation_utils.calibrate_default_node(
      preset='node-0', workload=small_workload, warm_start=True
  )

  stragglers = {
      analysis.lead_values(t).straggler for t in _run(config, 60)
  }

  assert len(stragglers) >= 2


def test_gpu_waiting_for_a_slower_peer_draws_static_power(small_workload):
  model = GpuModel()
  config = NodeConfig(
      gpus=(model, model), workload=small_workload, iterations=6,
      initial_cap_w=700.0,
  )
  caps = [700.0, 300.0]

  iterations = list(
      simulation_utils.generate_iteration_stream(config, caps=caps)
  )[2:]

  fast = [s.power_mW / 1e3 for t in iterations for s in t.telemetry[0]]
  slow = [s.power_mW / 1e3 for t in iterations for s in t.telemetry[1]]
  busy = model.busy_power_w(model.f_max_ghz, 30.0)
  # The fast GPU runs about 40% of the time at the top clock.
  assert np.median(fast) < 0.7 * busy
  assert min(fast) >= model.idle_power_w - 1e-3
  assert np.median(fast) < np.median(slow) <= 300.0 + 1e-3


def test_preset_clock_ceiling_is_the_coolest_calibrated_clock():
  gpus = simulation_utils.preset_gpus('node-1')
  clocks = [
      gpu_physics.step_frequency(
          g, 700.0, g.ambient_c + g.thermal_resistance_k_per_w * 700.0
      )
      for g in gpus
  ]

  assert len({g.f_max_ghz for g in gpus}) == 1
  assert max(clocks) == pytest.approx(gpus[0].f_max_ghz)
  assert int(np.argmax(clocks)) == 0
  assert int(np.argmin(clocks)) == 4


def test_waiting_rise_fit_keeps_target_temperatures(small_workload):
  gpus = simulation_utils.preset_gpus('node-1')

  fitted, busy = simulation_utils.fit_waiting_rise(
      gpus, small_workload, 700.0
  )

  assert len(busy) == 8
  assert all(0.0 < b <= 1.0 for b in busy)
  assert int(np.argmax(busy)) == 4
  for before, after, fraction in zip(gpus, fitted, busy):
    assert after.thermal_resistance_k_per_w >= (
        before.thermal_resistance_k_per_w
    )
    assert gpu_physics.steady_state_temperature(
        after, 700.0, fraction
    ) == pytest.approx(
        before.ambient_c + before.thermal_resistance_k_per_w * 700.0,
        abs=0.5,
    )


def test_busy_fractions_need_one_value_per_gpu(small_workload):
  with pytest.raises(ValueError, match='busy_fractions'):
    NodeConfig(
        gpus=(GpuModel(), GpuModel()), workload=small_workload,
        busy_fractions=(1.0,),
    )
