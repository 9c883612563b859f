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

"""Overlap, lead value and correlation analysis of iteration traces."""

import collections
import dataclasses
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from traces import IterationTrace
from traces import KernelEvent

logger = logging.getLogger(__name__)

AGGREGATIONS = ('sum', 'max', 'last')
DEFAULT_TAU_V = 0.10

# Marker for a correlation that has no defined value.
UNDEFINED = None


@dataclasses.dataclass(frozen=True)
class LeadVector:
  """Per-GPU aggregated lead values in nanoseconds."""

  values: np.ndarray
  aggregation: str

  def __len__(self):
    return len(self.values)

  @property
  def straggler(self) -> int:
    return identify_straggler(self)


@dataclasses.dataclass(frozen=True)
class OverlapProfile:
  """Overlap ratios of one iteration.

  Attributes:
    kernel_indices: Compute and vector kernel indices, in order.
    ratios: [G, K] overlap ratio per (gpu, kernel).
    layers: Layer numbers, in order.
    weighted: [G, L] duration-weighted overlap per (gpu, layer).
    classification: kernel_index -> 'constant' | 'varying'.
  """

  kernel_indices: list[int]
  ratios: np.ndarray
  layers: list[int]
  weighted: np.ndarray
  classification: dict[int, str]


@dataclasses.dataclass(frozen=True)
class CorrelationRow:
  gpu: int
  name: str
  pearson: Optional[float]
  cosine: Optional[float]
  samples: int


def overlap_ratio(event: KernelEvent) -> float:
  if event.is_communication:
    raise ValueError(
        f'overlap ratio is undefined for communication kernel {event.name}'
    )
  return event.overlap_ns / event.duration_ns


def _compute_events(trace, gpu=None, layer=None):
  return [
      e
      for e in trace.events
      if not e.is_communication
      and (gpu is None or e.gpu_id == gpu)
      and (layer is None or e.layer == layer)
  ]


def layer_weighted_overlap(trace: IterationTrace, gpu: int, layer: int):
  """Overlap of one layer on one GPU, weighted by kernel duration."""
  events = _compute_events(trace, gpu=gpu, layer=layer)
  if not events:
    raise ValueError(f'layer {layer} has no compute kernels on GPU {gpu}')
  overlapped = sum(e.overlap_ns for e in events)
  total = sum(e.duration_ns for e in events)
  return overlapped / total


def layer_overlap_table(trace: IterationTrace) -> tuple[list[int], np.ndarray]:
  """Weighted overlap of every (gpu, layer) as a [G, L] matrix."""
  overlapped = collections.defaultdict(int)
  total = collections.defaultdict(int)
  for e in _compute_events(trace):
    overlapped[(e.gpu_id, e.layer)] += e.overlap_ns
    total[(e.gpu_id, e.layer)] += e.duration_ns
  layers = sorted({layer for _, layer in total})
  table = np.zeros((trace.gpu_count, len(layers)))
  for j, layer in enumerate(layers):
    for g in range(trace.gpu_count):
      if total[(g, layer)]:
        table[g, j] = overlapped[(g, layer)] / total[(g, layer)]
  return layers, table


def _kernel_matrix(trace, attribute):
  indices = trace.kernel_indices()
  matrix = np.array(
      [[getattr(e, attribute) for e in trace.by_kernel[k]] for k in indices],
      dtype=np.int64,
  ).reshape(len(indices), trace.gpu_count)
  return indices, matrix.T


def lead_matrix(trace: IterationTrace) -> tuple[list[int], np.ndarray]:
  """Per-kernel lead values.

  Args:
    trace: A complete iteration trace.

  Returns:
    The compute and vector kernel indices and a [G, K] integer matrix with
    lead[g, k] = max over GPUs of the start of k minus the start on g.
  """
  indices, starts = _kernel_matrix(trace, 'start_ns')
  if not indices:
    return indices, starts
  return indices, starts.max(axis=0, keepdims=True) - starts


def lead_values(trace: IterationTrace, aggregation: str = 'sum') -> LeadVector:
  if aggregation not in AGGREGATIONS:
    raise ValueError(f'unknown aggregation {aggregation!r}')
  _, lead = lead_matrix(trace)
  if lead.shape[1] == 0:
    values = np.zeros(trace.gpu_count, dtype=np.int64)
  elif aggregation == 'sum':
    values = lead.sum(axis=1)
  elif aggregation == 'max':
    values = lead.max(axis=1)
  else:
    values = lead[:, -1]
  return LeadVector(values=values, aggregation=aggregation)


def straggler_wave(trace: IterationTrace) -> np.ndarray:
  """Per-GPU lead series ordered by kernel position, as a [G, K] matrix."""
  return lead_matrix(trace)[1]


def identify_straggler(leads: LeadVector) -> int:
  return int(np.argmin(leads.values))


def straggler_turns(
    traces: Sequence[IterationTrace], aggregation: str = 'sum'
) -> np.ndarray:
  """How many iterations each GPU spent as the straggler."""
  if not traces:
    return np.zeros(0, dtype=np.int64)
  stragglers = [identify_straggler(lead_values(t, aggregation)) for t in traces]
  return np.bincount(stragglers, minlength=traces[0].gpu_count)


def equilibrium_cv(trace: IterationTrace, gpu: int) -> float:
  """Coefficient of variation of a GPU's lead over the last kernel quartile."""
  wave = straggler_wave(trace)[gpu]
  tail = wave[len(wave) - max(1, len(wave) // 4):].astype(float)
  mean = tail.mean()
  if mean == 0:
    return 0.0
  return float(tail.std() / mean)


def classify_overlap(
    traces: Sequence[IterationTrace], tau_v: float = DEFAULT_TAU_V
) -> dict[int, str]:
  """Splits compute kernels into constant and varying overlap.

  A kernel is varying when its overlap ratio, taken over all GPUs and all
  given iterations, spans more than tau_v.
  """
  low = {}
  high = {}
  for trace in traces:
    for k in trace.kernel_indices():
      ratios = [overlap_ratio(e) for e in trace.by_kernel[k]]
      low[k] = min(low.get(k, 1.0), min(ratios))
      high[k] = max(high.get(k, 0.0), max(ratios))
  return {
      k: 'varying' if high[k] - low[k] > tau_v else 'constant'
      for k in sorted(low)
  }


def overlap_profile(
    trace: IterationTrace, classification: Optional[dict[int, str]] = None
) -> OverlapProfile:
  indices, overlap = _kernel_matrix(trace, 'overlap_ns')
  _, duration = _kernel_matrix(trace, 'duration_ns')
  layers, weighted = layer_overlap_table(trace)
  if classification is None:
    classification = classify_overlap([trace])
  return OverlapProfile(
      kernel_indices=indices,
      ratios=overlap / duration,
      layers=layers,
      weighted=weighted,
      classification=classification,
  )


def overlap_summary(trace: IterationTrace) -> dict[str, float]:
  """Straggler and leader overlap of one iteration.

  Returns:
    straggler (gpu id), straggler_overlap (mean weighted layer overlap of the
    straggler) and max_leader_overlap (largest mean weighted layer overlap
    among the other GPUs).
  """
  straggler = identify_straggler(lead_values(trace, 'sum'))
  _, table = layer_overlap_table(trace)
  per_gpu = table.mean(axis=1)
  leaders = np.delete(per_gpu, straggler)
  return {
      'straggler': straggler,
      'straggler_overlap': float(per_gpu[straggler]),
      'max_leader_overlap': float(leaders.max()) if leaders.size else 0.0,
      'min_overlap_gpu': int(np.argmin(per_gpu)),
  }


def _zero_spread(values):
  return values.size == 0 or np.ptp(values) == 0


def pearson(x, y) -> Optional[float]:
  x = np.asarray(x, dtype=float)
  y = np.asarray(y, dtype=float)
  if _zero_spread(x) or _zero_spread(y):
    return UNDEFINED
  dx = x - x.mean()
  dy = y - y.mean()
  return float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))


def cosine(x, y) -> Optional[float]:
  x = np.asarray(x, dtype=float)
  y = np.asarray(y, dtype=float)
  norm = np.linalg.norm(x) * np.linalg.norm(y)
  if norm == 0:
    return UNDEFINED
  return float(np.dot(x, y) / norm)


def kernel_samples(
    traces: Sequence[IterationTrace], name: str, gpu: int
) -> tuple[np.ndarray, np.ndarray]:
  """Overlap ratios and durations of a named kernel, pooled over traces."""
  ratios = []
  durations = []
  for trace in traces:
    for e in trace.events:
      if e.gpu_id == gpu and e.name == name and not e.is_communication:
        ratios.append(overlap_ratio(e))
        durations.append(e.duration_ns)
  return np.array(ratios), np.array(durations, dtype=float)


def correlate(
    traces: Sequence[IterationTrace], name: str, gpu: int
) -> tuple[Optional[float], Optional[float]]:
  """Pearson correlation and cosine similarity of overlap vs duration."""
  ratios, durations = kernel_samples(traces, name, gpu)
  if len(ratios) < 2:
    raise ValueError(
        f'need at least 2 samples of {name} on GPU {gpu}, got {len(ratios)}'
    )
  return pearson(ratios, durations), cosine(ratios, durations)


def correlation_report(traces: Sequence[IterationTrace]) -> list[CorrelationRow]:
  names = sorted({e.name for e in _compute_events(traces[0])})
  rows = []
  for gpu in range(traces[0].gpu_count):
    for name in names:
      ratios, durations = kernel_samples(traces, name, gpu)
      if len(ratios) < 2:
        continue
      rows.append(
          CorrelationRow(
              gpu=gpu,
              name=name,
              pearson=pearson(ratios, durations),
              cosine=cosine(ratios, durations),
              samples=len(ratios),
          )
      )
  return rows


def kernel_duration_medians(
    traces: Sequence[IterationTrace],
) -> tuple[list[int], np.ndarray]:
  """Median duration of every compute kernel on every GPU, [G, K] in ns."""
  indices = traces[0].kernel_indices()
  stacked = np.stack([_kernel_matrix(t, 'duration_ns')[1] for t in traces])
  return indices, np.median(stacked, axis=0)


def telemetry_frame(traces: Sequence[IterationTrace]) -> pd.DataFrame:
  rows = []
  for trace in traces:
    for gpu, samples in enumerate(trace.telemetry):
      for s in samples:
        rows.append((
            trace.iteration, gpu, s.ts_ns, s.temp_mC / 1e3, s.freq_kHz / 1e6,
            s.power_mW / 1e3, s.cap_mW / 1e3,
        ))
  return pd.DataFrame(
      rows,
      columns=['iteration', 'gpu', 'ts_ns', 'temperature_c', 'frequency_ghz',
               'power_w', 'cap_w'],
  )


def rolling_quantile(series, window: int, quantile: float) -> pd.Series:
  """Rolling quantile envelope, e.g. 5th percentile of frequency."""
  return pd.Series(series).rolling(window, min_periods=1).quantile(quantile)


def median_ratio(
    traces: Sequence[IterationTrace],
    field: str,
    ambient_c: Optional[float] = None,
) -> float:
  """Max/min ratio of per-GPU medians of a telemetry field.

  Args:
    traces: Iterations to pool.
    field: 'temperature_c', 'frequency_ghz' or 'power_w'.
    ambient_c: When given, the field is measured above this reference.

  Returns:
    The ratio of the largest to the smallest per-GPU median.
  """
  frame = telemetry_frame(traces)
  medians = frame.groupby('gpu')[field].median()
  if ambient_c is not None:
    medians = medians - ambient_c
  return float(medians.max() / medians.min())


def mean_frequency(traces: Sequence[IterationTrace]) -> np.ndarray:
  frame = telemetry_frame(traces)
  return frame.groupby('gpu')['frequency_ghz'].mean().to_numpy()


def lead_band_frame(
    traces: Sequence[IterationTrace], aggregation: str = 'sum'
) -> pd.DataFrame:
  rows = []
  for trace in traces:
    leads = lead_values(trace, aggregation).values
    for gpu, value in enumerate(leads):
      rows.append((trace.iteration, gpu, int(value)))
  return pd.DataFrame(rows, columns=['iteration', 'gpu', 'lead_ns'])
