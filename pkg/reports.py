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

"""CSV tables and static plots of traces, runs and sweeps.

The CSV files are the results; every image is drawn from the frame written
next to it.
"""

import logging
import pathlib
from typing import Optional, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # pylint: disable=g-import-not-at-top
import numpy as np
import pandas as pd

import analysis
from traces import IterationTrace

logger = logging.getLogger(__name__)


def savefig(path: pathlib.Path):
  plt.tight_layout()
  plt.savefig(path, dpi=120, bbox_inches='tight')
  plt.close()


def _write_csv(frame: pd.DataFrame, path: pathlib.Path) -> pathlib.Path:
  frame.to_csv(path, index=False)
  logger.info('Wrote %s', path)
  return path


def overlap_frame(traces: Sequence[IterationTrace]) -> pd.DataFrame:
  rows = []
  for trace in traces:
    layers, table = analysis.layer_overlap_table(trace)
    for gpu in range(trace.gpu_count):
      for j, layer in enumerate(layers):
        rows.append((trace.iteration, gpu, layer, float(table[gpu, j])))
  return pd.DataFrame(
      rows, columns=['iteration', 'gpu', 'layer', 'weighted_overlap']
  )


def write_overlap_report(traces, out_dir: pathlib.Path) -> list[pathlib.Path]:
  """Weighted overlap per GPU over iterations."""
  frame = overlap_frame(traces)
  csv_path = _write_csv(frame, out_dir / 'overlap.csv')
  per_iteration = frame.groupby(['iteration', 'gpu'])['weighted_overlap'].mean()
  plt.figure(figsize=(10, 4))
  for gpu, series in per_iteration.groupby(level='gpu'):
    plt.plot(series.index.get_level_values('iteration'), series.to_numpy(),
             label=f'GPU{gpu}')
  plt.xlabel('Iteration')
  plt.ylabel('Weighted overlap ratio')
  plt.title('Computation/communication overlap')
  plt.legend(ncol=4, fontsize='small')
  plt.grid(True)
  image = out_dir / 'overlap.png'
  savefig(image)
  return [csv_path, image, write_kernel_classes(traces, out_dir)]


def write_kernel_classes(traces, out_dir: pathlib.Path) -> pathlib.Path:
  """Overlap class of every kernel, with its ratios in the last iteration."""
  profile = analysis.overlap_profile(
      traces[-1], analysis.classify_overlap(traces)
  )
  rows = []
  for position, k in enumerate(profile.kernel_indices):
    ratios = profile.ratios[:, position]
    rows.append((k, profile.classification[k], float(ratios.min()),
                 float(ratios.max())))
  frame = pd.DataFrame(
      rows, columns=['kernel_index', 'class', 'min_ratio', 'max_ratio']
  )
  return _write_csv(frame, out_dir / 'kernel_classes.csv')


def write_straggler_wave(trace: IterationTrace, out_dir: pathlib.Path):
  """Lead of every GPU along the kernel sequence of one iteration."""
  indices, lead = analysis.lead_matrix(trace)
  rows = [
      (gpu, position, k, int(lead[gpu, position]))
      for gpu in range(trace.gpu_count)
      for position, k in enumerate(indices)
  ]
  frame = pd.DataFrame(
      rows, columns=['gpu', 'position', 'kernel_index', 'lead_ns']
  )
  csv_path = _write_csv(frame, out_dir / 'straggler_wave.csv')
  plt.figure(figsize=(10, 4))
  for gpu in range(trace.gpu_count):
    plt.plot(lead[gpu] / 1e6, label=f'GPU{gpu}')
  plt.xlabel('Kernel position')
  plt.ylabel('Lead (ms)')
  plt.title(f'Straggler wave, iteration {trace.iteration}')
  plt.legend(ncol=4, fontsize='small')
  plt.grid(True)
  image = out_dir / 'straggler_wave.png'
  savefig(image)
  return [csv_path, image]


def write_lead_bands(traces, out_dir: pathlib.Path, aggregation='sum'):
  """Aggregated lead values, one shaded band per iteration."""
  frame = analysis.lead_band_frame(traces, aggregation)
  csv_path = _write_csv(frame, out_dir / 'lead_values.csv')
  plt.figure(figsize=(10, 4))
  iterations = sorted(frame['iteration'].unique())
  for i, iteration in enumerate(iterations):
    if i % 2:
      plt.axvspan(iteration - 0.5, iteration + 0.5, color='0.9')
  for gpu, group in frame.groupby('gpu'):
    plt.scatter(group['iteration'], group['lead_ns'] / 1e6, s=8,
                label=f'GPU{gpu}')
  plt.xlabel('Iteration')
  plt.ylabel(f'Lead value, {aggregation} (ms)')
  plt.legend(ncol=4, fontsize='small')
  image = out_dir / 'lead_values.png'
  savefig(image)
  return [csv_path, image]


def write_telemetry(traces, out_dir: pathlib.Path, window: int = 50):
  """Temperature and frequency with rolling envelopes."""
  frame = analysis.telemetry_frame(traces)
  csv_path = _write_csv(frame, out_dir / 'telemetry.csv')
  _, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
  for gpu, group in frame.groupby('gpu'):
    seconds = group['ts_ns'].to_numpy() / 1e9
    axes[0].plot(seconds, group['temperature_c'].to_numpy(), label=f'GPU{gpu}')
    envelope = analysis.rolling_quantile(
        group['frequency_ghz'].to_numpy(), window, 0.05
    )
    axes[1].plot(seconds, envelope.to_numpy(), label=f'GPU{gpu}')
  axes[0].set_ylabel('Temperature (C)')
  axes[1].set_ylabel('Frequency, 5th pct (GHz)')
  axes[1].set_xlabel('Time (s)')
  axes[0].legend(ncol=4, fontsize='small')
  for ax in axes:
    ax.grid(True)
  image = out_dir / 'telemetry.png'
  savefig(image)
  return [csv_path, image]


def correlation_frame(traces) -> pd.DataFrame:
  rows = [
      (r.gpu, r.name, r.pearson, r.cosine, r.samples)
      for r in analysis.correlation_report(traces)
  ]
  return pd.DataFrame(
      rows, columns=['gpu', 'kernel', 'pearson', 'cosine', 'samples']
  )


def write_correlation(traces, out_dir: pathlib.Path):
  """Overlap vs duration correlation as a GPU by kernel heat table."""
  if len(traces) < 2:
    raise ValueError('correlation needs at least 2 iterations')
  frame = correlation_frame(traces)
  csv_path = _write_csv(frame, out_dir / 'correlation.csv')
  table = frame.pivot(index='gpu', columns='kernel', values='pearson')
  values = table.to_numpy(dtype=float)
  plt.figure(figsize=(10, 4))
  plt.imshow(values, cmap='coolwarm', vmin=-1, vmax=1, aspect='auto')
  plt.colorbar(label='Pearson')
  plt.xticks(range(len(table.columns)), table.columns, rotation=45,
             ha='right')
  plt.yticks(range(len(table.index)), [f'GPU{g}' for g in table.index])
  for (i, j), value in np.ndenumerate(values):
    if not np.isnan(value):
      plt.text(j, i, f'{value:.2f}', ha='center', va='center', fontsize=7)
  image = out_dir / 'correlation.png'
  savefig(image)
  return [csv_path, image]


def write_predictions(predictions, out_dir: pathlib.Path) -> pathlib.Path:
  frame = pd.DataFrame([p.as_row() for p in predictions])
  return _write_csv(frame, out_dir / 'prediction.csv')


def write_run_log(log, out_dir: pathlib.Path) -> list[pathlib.Path]:
  """Run log CSV plus node power and throughput over samples."""
  frame = log.to_frame()
  csv_path = _write_csv(frame, out_dir / 'run_log.csv')
  _, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
  axes[0].plot(frame['sample_idx'], frame['node_power_w'])
  axes[0].set_ylabel('Node power (W)')
  axes[1].plot(frame['sample_idx'], frame['throughput'])
  axes[1].set_ylabel('Iterations / s')
  axes[1].set_xlabel('Sample')
  if log.first_adjustment_sample is not None:
    for ax in axes:
      ax.axvline(log.first_adjustment_sample, color='0.5', linestyle='--')
  for ax in axes:
    ax.grid(True)
  image = out_dir / 'run_log.png'
  savefig(image)
  return [csv_path, image]


def cap_columns(frame: pd.DataFrame) -> list[str]:
  return [c for c in frame.columns if c.startswith('cap_')]


def write_cap_distribution(
    final_caps: dict[str, Sequence[float]], out_dir: pathlib.Path
) -> list[pathlib.Path]:
  """Final per-GPU caps of one or more runs, as grouped bars."""
  rows = [
      (label, gpu, float(cap))
      for label, caps in final_caps.items()
      for gpu, cap in enumerate(caps)
  ]
  frame = pd.DataFrame(rows, columns=['run', 'gpu', 'cap_w'])
  csv_path = _write_csv(frame, out_dir / 'cap_distribution.csv')
  table = frame.pivot(index='gpu', columns='run', values='cap_w')
  width = 0.8 / max(1, len(table.columns))
  plt.figure(figsize=(10, 4))
  for i, run in enumerate(table.columns):
    plt.bar(table.index + i * width, table[run], width=width, label=str(run))
  plt.xlabel('GPU')
  plt.ylabel('Final cap (W)')
  plt.legend(fontsize='small')
  plt.grid(True, axis='y')
  image = out_dir / 'cap_distribution.png'
  savefig(image)
  return [csv_path, image]


def write_sweep_summary(
    rows: list[dict], out_dir: pathlib.Path,
    metrics: Optional[Sequence[str]] = None,
) -> list[pathlib.Path]:
  """Summary CSV and one bar chart per metric, grouped by knob."""
  frame = pd.DataFrame(rows)
  paths = [_write_csv(frame, out_dir / 'summary.csv')]
  if frame.empty:
    return paths
  metrics = [m for m in (metrics or []) if m in frame.columns]
  for metric in metrics:
    for knob, group in frame.groupby('knob'):
      values = pd.to_numeric(group[metric], errors='coerce')
      plt.figure(figsize=(10, 4))
      labels = [str(v) for v in group['value']]
      bars = plt.bar(labels, values.fillna(0).to_numpy())
      for bar, value in zip(bars, values):
        if np.isnan(value):
          bar.set_hatch('//')
      plt.xlabel(knob)
      plt.ylabel(metric)
      plt.title(f'{metric} by {knob}')
      plt.grid(True, axis='y')
      image = out_dir / f'{knob}_{metric}.png'
      savefig(image)
      paths.append(image)
  return paths
