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

"""Discrete-event simulator of one multi-GPU training node.

Every GPU runs the same kernel sequence on a compute lane and a serial
communication lane. Collectives end at the same time on all GPUs, so a GPU
that issues early keeps its collective active longer and overlaps, and is
slowed by, more of its compute. Temperature and clock are updated once per
telemetry interval.
"""

import copy
import dataclasses
import logging
from typing import Any, Iterator, Optional, Sequence

import numpy as np

import analysis
from gpu_physics import GpuModel
from gpu_physics import GpuState
from gpu_physics import overlapped_duration
from gpu_physics import step_frequency
from gpu_physics import step_thermal
from gpu_physics import steady_state_temperature
from traces import IterationTrace
from traces import KernelEvent
from traces import TelemetrySample
from workloads import WorkloadSpec
from workloads import build_workload

logger = logging.getLogger(__name__)

# Calibration targets for the shipped node presets.
TARGET_TEMPERATURE_RATIO = 1.155
TARGET_FREQUENCY_RATIO = 1.062
TARGET_STRAGGLER_OVERLAP = 0.296
TARGET_MAX_LEADER_OVERLAP = 0.527

DEFAULT_CAP_W = 700.0
DEFAULT_TDP_W = 750.0
_COOLEST_RISE_C = 40.0

# Relative heating of each GPU, 0 for the coolest and 1 for the hottest.
_HEAT_PROFILES = {
    'node-1': (0.0, 0.52, 0.40, 0.56, 1.0, 0.24, 0.36, 0.50),
    'node-0': (0.0, 0.92, 0.94, 1.0, 0.2, 0.35, 0.96, 0.1),
}
_PRESET_JITTER = {'node-1': 0.002, 'node-0': 0.01, 'symmetric': 0.0}
PRESETS = tuple(_PRESET_JITTER)

# Iterations longer than this are treated as a stall.
_MAX_ITERATION_NS = 3_600 * 10**9


class SimulationError(RuntimeError):
  """The simulated node cannot make progress."""


@dataclasses.dataclass(frozen=True)
class NodeConfig:
  """Everything needed to reproduce a simulated run.

  Attributes:
    gpus: One GpuModel per GPU.
    workload: Kernel sequence of one iteration.
    iterations: Iterations per run.
    seed: Seed of the frequency jitter.
    telemetry_interval_ns: Telemetry sampling interval.
    frequency_jitter: Standard deviation of the relative clock jitter.
    warm_start: Start from steady-state temperatures instead of ambient.
    initial_cap_w: Cap applied to every GPU at start.
    preset: Name of the node preset the GPUs came from.
    busy_fractions: Per-GPU share of an iteration spent running kernels,
      used by the warm start. Empty means always busy.
  """

  gpus: tuple[GpuModel, ...]
  workload: WorkloadSpec
  iterations: int = 1000
  seed: int = 0
  telemetry_interval_ns: int = 100_000_000
  frequency_jitter: float = 0.0
  warm_start: bool = False
  initial_cap_w: float = DEFAULT_CAP_W
  preset: str = 'custom'
  busy_fractions: tuple[float, ...] = ()

  def __post_init__(self):
    if len(self.gpus) < 2:
      raise ValueError('a node needs at least 2 GPUs')
    if self.iterations < 1:
      raise ValueError('iterations must be >= 1')
    if self.telemetry_interval_ns <= 0:
      raise ValueError('telemetry_interval_ns must be positive')
    if self.frequency_jitter < 0:
      raise ValueError('frequency_jitter must be >= 0')
    if self.busy_fractions and len(self.busy_fractions) != len(self.gpus):
      raise ValueError('busy_fractions needs one value per GPU')

  @property
  def gpu_count(self) -> int:
    return len(self.gpus)


@dataclasses.dataclass
class NodeState:
  """Mutable simulator state carried from one iteration to the next."""

  gpus: list[GpuState]
  time_ns: int = 0
  iteration: int = 0
  next_tick_ns: list[int] = dataclasses.field(default_factory=list)
  jitter: list[float] = dataclasses.field(default_factory=list)
  segments: list[list[tuple[int, int, float]]] = dataclasses.field(
      default_factory=list
  )
  rng: Optional[np.random.Generator] = None


def initial_state(config: NodeConfig, caps=None) -> NodeState:
  """Cold (ambient) or warm (steady-state) start at the given caps."""
  if caps is None:
    caps = [config.initial_cap_w] * config.gpu_count
  busy = config.busy_fractions or (1.0,) * config.gpu_count
  gpus = []
  for model, cap, fraction in zip(config.gpus, caps, busy):
    if config.warm_start:
      temperature = steady_state_temperature(model, cap, fraction)
    else:
      temperature = model.ambient_c
    frequency = step_frequency(model, cap, temperature)
    gpus.append(GpuState(
        temperature_c=temperature,
        frequency_ghz=frequency,
        power_w=model.static_power_w(temperature),
        power_cap_w=float(cap),
    ))
  return NodeState(
      gpus=gpus,
      next_tick_ns=[config.telemetry_interval_ns] * config.gpu_count,
      jitter=[1.0] * config.gpu_count,
      segments=[[] for _ in range(config.gpu_count)],
      rng=np.random.default_rng(config.seed),
  )


class NodeSimulator:
  """Runs iterations of a node, one at a time."""

  def __init__(self, config: NodeConfig, state: Optional[NodeState] = None):
    self.config = config
    self.state = state if state is not None else initial_state(config)

  @property
  def caps(self) -> list[float]:
    return [g.power_cap_w for g in self.state.gpus]

  def set_caps(self, caps: Sequence[float]) -> None:
    """Applies new caps; clocks follow immediately."""
    if len(caps) != self.config.gpu_count:
      raise ValueError(
          f'{len(caps)} caps for {self.config.gpu_count} GPUs'
      )
    for g, (model, gpu, cap) in enumerate(
        zip(self.config.gpus, self.state.gpus, caps)
    ):
      if cap == gpu.power_cap_w:
        continue
      gpu.power_cap_w = float(cap)
      gpu.frequency_ghz = self._clock(g, model, gpu)

  def _clock(self, g, model, gpu):
    frequency = step_frequency(model, gpu.power_cap_w, gpu.temperature_c)
    return max(model.f_min_ghz, frequency * self.state.jitter[g])

  def _tick(self, g: int, until_ns: int, samples: list[TelemetrySample]):
    """Processes every telemetry tick of GPU g at or before until_ns."""
    state = self.state
    interval = self.config.telemetry_interval_ns
    model = self.config.gpus[g]
    gpu = state.gpus[g]
    while state.next_tick_ns[g] <= until_ns:
      tick = state.next_tick_ns[g]
      window_start = tick - interval
      busy = 0
      energy = 0.0
      kept = []
      for begin, end, power in state.segments[g]:
        covered = min(end, tick) - max(begin, window_start)
        if covered > 0:
          busy += covered
          energy += covered * power
        if end > tick:
          kept.append((begin, end, power))
      state.segments[g] = kept
      energy += (interval - busy) * model.static_power_w(gpu.temperature_c)
      average = energy / interval

      gpu.temperature_c = step_thermal(model, gpu, average, interval / 1e9)
      gpu.power_w = average
      if self.config.frequency_jitter > 0:
        draw = abs(state.rng.normal(0.0, self.config.frequency_jitter))
        state.jitter[g] = 1.0 - min(draw, 0.5)
      gpu.frequency_ghz = self._clock(g, model, gpu)
      gpu.clock_ns = tick
      samples.append(TelemetrySample(
          ts_ns=tick,
          temp_mC=int(round(gpu.temperature_c * 1e3)),
          freq_kHz=int(round(gpu.frequency_ghz * 1e6)),
          power_mW=int(round(average * 1e3)),
          cap_mW=int(round(gpu.power_cap_w * 1e3)),
      ))
      state.next_tick_ns[g] = tick + interval

  def run_iteration(self, caps: Optional[Sequence[float]] = None):
    """Simulates one iteration.

    Args:
      caps: Per-GPU power caps for this iteration; current caps when omitted.

    Returns:
      The IterationTrace of the iteration.

    Raises:
      SimulationError: if the iteration stalls.
    """
    if caps is not None:
      self.set_caps(caps)
    config = self.config
    state = self.state
    g_count = config.gpu_count
    workload = config.workload
    beta = workload.overlap_penalty
    iteration = state.iteration
    start = state.time_ns

    clock = [start] * g_count
    comm_free = [start] * g_count
    active = [[] for _ in range(g_count)]
    samples = [[] for _ in range(g_count)]
    events = []

    for k, spec in enumerate(workload.kernels):
      if spec.is_communication:
        begin = [max(clock[g], comm_free[g]) for g in range(g_count)]
        end = max(begin) + spec.duration_ns
        for g in range(g_count):
          active[g].append((begin[g], end))
          comm_free[g] = end
          events.append(KernelEvent(
              gpu_id=g,
              iteration=iteration,
              kernel_index=k,
              name=spec.name,
              layer=spec.layer,
              phase=spec.phase,
              kind=spec.kind,
              start_ns=begin[g],
              end_ns=end,
              overlap_ns=0,
          ))
        continue

      for g in range(g_count):
        self._tick(g, clock[g], samples[g])
        model = config.gpus[g]
        gpu = state.gpus[g]
        base_ns = spec.work_gcycles / gpu.frequency_ghz * 1e9
        windows = [w for w in active[g] if w[1] > clock[g]]
        active[g] = windows
        duration, overlap = overlapped_duration(
            clock[g], base_ns, windows, beta
        )
        power = model.busy_power_w(gpu.frequency_ghz, gpu.temperature_c)
        state.segments[g].append((clock[g], clock[g] + duration, power))
        events.append(KernelEvent(
            gpu_id=g,
            iteration=iteration,
            kernel_index=k,
            name=spec.name,
            layer=spec.layer,
            phase=spec.phase,
            kind=spec.kind,
            start_ns=clock[g],
            end_ns=clock[g] + duration,
            overlap_ns=overlap,
        ))
        clock[g] += duration

    finish = max(clock + comm_free)
    if finish - start > _MAX_ITERATION_NS:
      raise SimulationError(
          f'iteration {iteration} did not finish within'
          f' {_MAX_ITERATION_NS / 1e9:.0f} s of simulated time'
      )
    # A GPU done before the iteration ends waits at its static power.
    for g in range(g_count):
      self._tick(g, finish, samples[g])
      state.gpus[g].clock_ns = finish

    state.time_ns = finish
    state.iteration += 1
    return IterationTrace(
        iteration=iteration,
        gpu_count=g_count,
        events=tuple(events),
        telemetry=tuple(tuple(s) for s in samples),
    )


def run_iteration(config: NodeConfig, caps, state: NodeState):
  """Runs one iteration without touching the given state.

  Returns:
    (IterationTrace, new NodeState).
  """
  simulator = NodeSimulator(config, copy.deepcopy(state))
  trace = simulator.run_iteration(caps)
  return trace, simulator.state


def iteration_stream_generator(
    config: NodeConfig, caps=None
) -> Iterator[IterationTrace]:
  """Yields one IterationTrace per iteration, forever.

  Args:
    config: The node to simulate.
    caps: Initial per-GPU caps; config.initial_cap_w everywhere when omitted.

  Yields:
    Iteration traces in order.
  """
  simulator = NodeSimulator(config, initial_state(config, caps))
  while True:
    yield simulator.run_iteration()


def generate_iteration_stream(config: NodeConfig, caps=None, iterations=None):
  """Runs iteration_stream_generator for a fixed number of iterations.

  Args:
    config: The node to simulate.
    caps: Initial per-GPU caps.
    iterations: Iteration count; config.iterations when omitted.

  Returns:
    A generator of exactly that many IterationTraces.
  """
  count = config.iterations if iterations is None else iterations
  stream = iteration_stream_generator(config, caps)
  return (next(stream) for _ in range(count))


def _heat_profile(preset: str, gpu_count: int) -> np.ndarray:
  if preset == 'symmetric':
    return np.full(gpu_count, 0.5)
  if gpu_count == 8 and preset in _HEAT_PROFILES:
    return np.array(_HEAT_PROFILES[preset])
  if preset == 'node-1':
    profile = np.linspace(0.0, 0.56, gpu_count)
    profile[gpu_count // 2] = 1.0
    return profile
  if preset == 'node-0':
    profile = np.linspace(0.0, 0.35, gpu_count)
    contenders = [gpu_count // 2 - 1, gpu_count // 2, gpu_count - 1]
    profile[contenders] = [0.94, 1.0, 0.96]
    return profile
  raise ValueError(f'unknown node preset {preset!r}')


def preset_gpus(
    preset: str = 'node-1',
    gpu_count: int = 8,
    cap_w: float = DEFAULT_CAP_W,
    m_spread: float = 0.0,
    idle_power_w: float = 100.0,
    power_coeff_m: float = 200.0,
) -> tuple[GpuModel, ...]:
  """GPU models whose steady state hits the calibration targets.

  Steady-state rise above ambient is R * cap for a GPU that never waits, so
  the thermal resistances set the temperature ratio. Under a cap the clock is
  (cap - idle - leakage * rise) / M, which fixes the leakage coefficient
  that turns the hottest-to-coolest rise spread into the frequency ratio.
  The clock tops out where the coolest GPU runs at cap_w.
  """
  rise_min = _COOLEST_RISE_C
  rise_max = rise_min * TARGET_TEMPERATURE_RATIO
  headroom = cap_w - idle_power_w
  leakage = headroom * (TARGET_FREQUENCY_RATIO - 1.0) / (
      TARGET_FREQUENCY_RATIO * rise_max - rise_min
  )
  rises = rise_min + _heat_profile(preset, gpu_count) * (rise_max - rise_min)
  # Hotter parts pay more power per GHz when the spread is enabled.
  coefficients = power_coeff_m * (
      1.0 + m_spread * (_heat_profile(preset, gpu_count) - 0.5)
  )
  ceiling = float(np.max((headroom - leakage * rises) / coefficients))
  return tuple(
      GpuModel(
          idle_power_w=idle_power_w,
          power_coeff_m=float(m),
          thermal_resistance_k_per_w=float(rise) / cap_w,
          leakage_w_per_c=leakage,
          f_max_ghz=ceiling,
      )
      for rise, m in zip(rises, coefficients)
  )


def fit_waiting_rise(
    gpus: Sequence[GpuModel], workload: WorkloadSpec, cap_w: float
) -> tuple[tuple[GpuModel, ...], tuple[float, ...]]:
  """Rescales thermal resistances for the time each GPU spends waiting.

  A GPU that finishes its kernels early waits at static power, so its mean
  power sits below the cap and it runs cooler than R * cap. One iteration at
  the target temperatures gives every GPU's busy fraction; R is then set so
  that the mean power heats it to R * cap again.

  Returns:
    (fitted GPU models, busy fraction of every GPU).
  """
  config = NodeConfig(
      gpus=tuple(gpus), workload=workload, warm_start=True, iterations=1,
      initial_cap_w=cap_w,
  )
  trace = next(generate_iteration_stream(config))
  busy = np.zeros(len(gpus))
  for event in trace.events:
    if not event.is_communication:
      busy[event.gpu_id] += event.duration_ns
  busy /= trace.wall_time_ns
  fitted = []
  for model, fraction in zip(gpus, busy):
    rise = model.thermal_resistance_k_per_w * cap_w
    static = model.static_power_w(model.ambient_c + rise)
    average = cap_w - (1.0 - fraction) * (cap_w - static)
    fitted.append(dataclasses.replace(
        model, thermal_resistance_k_per_w=rise / average
    ))
  logger.debug('Busy fractions at %.0f W: %s', cap_w, np.round(busy, 4))
  return tuple(fitted), tuple(float(b) for b in busy)


def calibrate_default_node(
    preset: str = 'node-1',
    gpu_count: int = 8,
    workload: Optional[WorkloadSpec] = None,
    cap_w: float = DEFAULT_CAP_W,
    m_spread: float = 0.0,
    frequency_jitter: Optional[float] = None,
    initial_cap_w: Optional[float] = None,
    idle_power_w: float = 100.0,
    **kwargs: Any,
) -> NodeConfig:
  """The shipped 8-GPU node: one dominant straggler by default.

  The GPUs are calibrated at cap_w; initial_cap_w only changes the caps the
  run starts from.
  """
  if preset not in PRESETS:
    raise ValueError(f'unknown node preset {preset!r}, expected {PRESETS}')
  if frequency_jitter is None:
    frequency_jitter = _PRESET_JITTER[preset]
  if workload is None:
    workload = build_workload()
  gpus, busy = fit_waiting_rise(
      preset_gpus(preset, gpu_count, cap_w, m_spread, idle_power_w),
      workload,
      cap_w,
  )
  return NodeConfig(
      gpus=gpus,
      workload=workload,
      busy_fractions=busy,
      frequency_jitter=frequency_jitter,
      initial_cap_w=cap_w if initial_cap_w is None else initial_cap_w,
      preset=preset,
      **kwargs,
  )


def calibration_report(
    config: NodeConfig, iterations: int = 120, warm_up: int = 40
) -> dict[str, Any]:
  """Runs a node and compares its steady state to the calibration targets."""
  traces = list(generate_iteration_stream(config, iterations=iterations))
  sampled = traces[warm_up:] or traces
  ambient = config.gpus[0].ambient_c
  summaries = [analysis.overlap_summary(t) for t in sampled]
  turns = analysis.straggler_turns(sampled)
  stragglers = [s['straggler'] for s in summaries]
  dominant = int(np.argmax(turns))
  leaders = [g for g in range(config.gpu_count) if g != dominant]
  cvs = [
      analysis.equilibrium_cv(t, g) for t in sampled[-5:] for g in leaders
  ]
  report = {
      'frequency_ratio': analysis.median_ratio(sampled, 'frequency_ghz'),
      'temperature_ratio': analysis.median_ratio(
          sampled, 'temperature_c', ambient_c=ambient
      ),
      'straggler_overlap': float(
          np.mean([s['straggler_overlap'] for s in summaries])
      ),
      'max_leader_overlap': float(
          np.mean([s['max_leader_overlap'] for s in summaries])
      ),
      'dominant_straggler': dominant,
      'straggler_share': float(turns[dominant] / len(sampled)),
      'distinct_stragglers': len(set(stragglers)),
      'leader_equilibrium_cv': float(np.median(cvs)),
      'mean_frequency_ghz': analysis.mean_frequency(sampled).tolist(),
      'targets': {
          'frequency_ratio': TARGET_FREQUENCY_RATIO,
          'temperature_ratio': TARGET_TEMPERATURE_RATIO,
          'straggler_overlap': TARGET_STRAGGLER_OVERLAP,
          'max_leader_overlap': TARGET_MAX_LEADER_OVERLAP,
      },
  }
  logger.info(
      'Calibration: frequency ratio %.3f, temperature ratio %.3f, straggler'
      ' overlap %.3f, max leader overlap %.3f',
      report['frequency_ratio'], report['temperature_ratio'],
      report['straggler_overlap'], report['max_leader_overlap'],
  )
  return report
