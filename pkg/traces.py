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

"""Kernel traces: data model, line-delimited file format and validation.

A trace file is UTF-8 text with one JSON object per line. The first line is
the header. Each iteration opens with an iteration record, followed by its
kernel events and telemetry samples:

  {"type":"header","version":1,"gpu_count":8,"workload":{...},"knobs":{...}}
  {"type":"iteration","iteration":0,"telemetry":true}
  {"type":"kernel","gpu_id":0,"iteration":0,"kernel_index":3,...}
  {"type":"telemetry","gpu":0,"iteration":0,"ts_ns":..,"temp_mC":..,
   "freq_kHz":..,"power_mW":..,"cap_mW":..}

All times are integer nanoseconds. Iteration records are optional on input;
without them, iterations are inferred from the records that name them.
"""

import collections
import dataclasses
import functools
import itertools
import json
import logging
from typing import Any, Iterable, Iterator, Optional, TextIO

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PHASES = ('forward', 'backward')
KINDS = ('compute', 'vector', 'communication')

_KERNEL_FIELDS = (
    'gpu_id',
    'iteration',
    'kernel_index',
    'name',
    'layer',
    'phase',
    'kind',
    'start_ns',
    'end_ns',
    'overlap_ns',
)
_TELEMETRY_FIELDS = ('ts_ns', 'temp_mC', 'freq_kHz', 'power_mW', 'cap_mW')


class TraceFormatError(ValueError):
  """A trace record is malformed or a trace invariant does not hold."""

  def __init__(self, message, line=None, invariant=None):
    prefix = f'line {line}: ' if line is not None else ''
    if invariant:
      prefix += f'[{invariant}] '
    super().__init__(prefix + message)
    self.detail = message
    self.line = line
    self.invariant = invariant


@dataclasses.dataclass(frozen=True)
class KernelEvent:
  """One kernel execution on one GPU."""

  gpu_id: int
  iteration: int
  kernel_index: int
  name: str
  layer: int
  phase: str
  kind: str
  start_ns: int
  end_ns: int
  overlap_ns: int = 0

  @property
  def duration_ns(self) -> int:
    return self.end_ns - self.start_ns

  @property
  def is_communication(self) -> bool:
    return self.kind == 'communication'


@dataclasses.dataclass(frozen=True)
class TelemetrySample:
  ts_ns: int
  temp_mC: int  # pylint: disable=invalid-name
  freq_kHz: int  # pylint: disable=invalid-name
  power_mW: int  # pylint: disable=invalid-name
  cap_mW: int  # pylint: disable=invalid-name


@dataclasses.dataclass(frozen=True)
class IterationTrace:
  """All kernel events and telemetry of one training iteration.

  Attributes:
    iteration: Iteration number.
    gpu_count: Number of GPUs in the node.
    events: Kernel events, in the order they were recorded.
    telemetry: One tuple of samples per GPU, indexed by gpu id.
  """

  iteration: int
  gpu_count: int
  events: tuple[KernelEvent, ...]
  telemetry: tuple[tuple[TelemetrySample, ...], ...] = ()

  @functools.cached_property
  def by_kernel(self) -> dict[int, list[KernelEvent]]:
    """Events grouped by kernel_index, each group sorted by gpu id."""
    groups = collections.defaultdict(list)
    for event in self.events:
      groups[event.kernel_index].append(event)
    return {
        k: sorted(groups[k], key=lambda e: e.gpu_id) for k in sorted(groups)
    }

  def kernel_indices(self, include_communication=False) -> list[int]:
    return [
        k
        for k, group in self.by_kernel.items()
        if include_communication or not group[0].is_communication
    ]

  @property
  def wall_time_ns(self) -> int:
    if not self.events:
      return 0
    start = min(e.start_ns for e in self.events)
    end = max(e.end_ns for e in self.events)
    return end - start


@dataclasses.dataclass(frozen=True)
class TraceFile:
  header: dict[str, Any]
  traces: list[IterationTrace]

  @property
  def gpu_count(self) -> int:
    return self.header['gpu_count']


def validate_trace(trace: IterationTrace) -> None:
  """Raises TraceFormatError naming the first violated invariant."""
  g_count = trace.gpu_count
  if len(trace.telemetry) not in (0, g_count):
    raise TraceFormatError(
        f'{len(trace.telemetry)} telemetry series for {g_count} GPUs',
        invariant='gpu range',
    )
  for event in trace.events:
    if not 0 <= event.gpu_id < g_count:
      raise TraceFormatError(
          f'gpu_id {event.gpu_id} outside [0, {g_count})',
          invariant='gpu range',
      )
    if event.iteration != trace.iteration:
      raise TraceFormatError(
          f'event of iteration {event.iteration} inside iteration'
          f' {trace.iteration}',
          invariant='iteration',
      )
    if event.end_ns <= event.start_ns:
      raise TraceFormatError(
          f'kernel {event.name} on GPU {event.gpu_id} has end_ns'
          f' {event.end_ns} <= start_ns {event.start_ns}',
          invariant='duration',
      )
    if event.is_communication and event.overlap_ns != 0:
      raise TraceFormatError(
          f'communication kernel {event.name} carries overlap_ns',
          invariant='overlap bounds',
      )
    if not 0 <= event.overlap_ns <= event.duration_ns:
      raise TraceFormatError(
          f'kernel {event.name} on GPU {event.gpu_id} has overlap_ns'
          f' {event.overlap_ns} outside [0, {event.duration_ns}]',
          invariant='overlap bounds',
      )

  for k, group in trace.by_kernel.items():
    gpus = [e.gpu_id for e in group]
    if gpus != list(range(g_count)):
      missing = sorted(set(range(g_count)) - set(gpus))
      raise TraceFormatError(
          f'kernel_index {k} has events for GPUs {gpus}'
          f' (missing {missing})',
          invariant='per-GPU completeness',
      )
    first = group[0]
    for event in group[1:]:
      if (event.name, event.layer, event.phase, event.kind) != (
          first.name, first.layer, first.phase, first.kind
      ):
        raise TraceFormatError(
            f'kernel_index {k} is {first.name} on GPU 0 but {event.name}'
            f' on GPU {event.gpu_id}',
            invariant='kernel identity',
        )
    if first.is_communication and len({e.end_ns for e in group}) != 1:
      raise TraceFormatError(
          f'collective {first.name} at kernel_index {k} ends at different'
          ' times across GPUs',
          invariant='collective synchronization',
      )

  lanes = collections.defaultdict(list)
  for event in trace.events:
    if not event.is_communication:
      lanes[event.gpu_id].append((event.start_ns, event.end_ns, event.name))
  for gpu_id, lane in lanes.items():
    lane.sort()
    for (_, end, name), (start, _, other) in zip(lane, lane[1:]):
      if start < end:
        raise TraceFormatError(
            f'{name} and {other} overlap in time on GPU {gpu_id}',
            invariant='compute exclusivity',
        )


def _header_record(gpu_count, workload, knobs):
  return {
      'type': 'header',
      'version': FORMAT_VERSION,
      'gpu_count': gpu_count,
      'workload': workload or {},
      'knobs': knobs or {},
  }


def iter_trace_records(
    traces: Iterable[IterationTrace],
    gpu_count: Optional[int] = None,
    workload: Optional[dict[str, Any]] = None,
    knobs: Optional[dict[str, Any]] = None,
) -> Iterator[dict[str, Any]]:
  """Yields the header record and then every record of every trace."""
  traces = iter(traces)
  first = next(traces, None)
  if gpu_count is None:
    gpu_count = first.gpu_count if first is not None else 0
  yield _header_record(gpu_count, workload, knobs)
  if first is None:
    return

  last_iteration = None
  for trace in itertools.chain([first], traces):
    if last_iteration is not None and trace.iteration <= last_iteration:
      raise ValueError(
          f'traces out of order: iteration {trace.iteration} after'
          f' {last_iteration}'
      )
    last_iteration = trace.iteration
    yield {
        'type': 'iteration',
        'iteration': trace.iteration,
        'telemetry': bool(trace.telemetry),
    }
    for event in trace.events:
      record = {'type': 'kernel'}
      record.update(dataclasses.asdict(event))
      yield record
    for gpu_id, samples in enumerate(trace.telemetry):
      for sample in samples:
        record = {'type': 'telemetry', 'gpu': gpu_id,
                  'iteration': trace.iteration}
        record.update(dataclasses.asdict(sample))
        yield record


def write_trace(
    traces: Iterable[IterationTrace],
    destination: TextIO,
    gpu_count: Optional[int] = None,
    workload: Optional[dict[str, Any]] = None,
    knobs: Optional[dict[str, Any]] = None,
) -> int:
  """Writes traces in the line-delimited format.

  Args:
    traces: Iteration traces ordered by iteration number. Any iterable works,
      so a simulator stream can be written without holding it in memory.
    destination: A text sink.
    gpu_count: Header gpu_count; taken from the first trace when omitted.
    workload: Workload descriptor stored in the header.
    knobs: Knob snapshot stored in the header.

  Returns:
    The number of non-header records written.
  """
  count = -1
  for record in iter_trace_records(traces, gpu_count, workload, knobs):
    destination.write(json.dumps(record, separators=(',', ':')) + '\n')
    count += 1
  return count


def _require_int(record, field, line):
  value = record.get(field)
  if not isinstance(value, int) or isinstance(value, bool):
    raise TraceFormatError(
        f'field {field!r} must be an integer, got {value!r}', line=line
    )
  return value


def _parse_kernel(record, line):
  values = {}
  for field in _KERNEL_FIELDS:
    if field not in record:
      raise TraceFormatError(f'kernel record lacks {field!r}', line=line)
    if field in ('name', 'phase', 'kind'):
      if not isinstance(record[field], str):
        raise TraceFormatError(f'field {field!r} must be a string', line=line)
      values[field] = record[field]
    else:
      values[field] = _require_int(record, field, line)
  if values['phase'] not in PHASES:
    raise TraceFormatError(f'unknown phase {values["phase"]!r}', line=line)
  if values['kind'] not in KINDS:
    raise TraceFormatError(f'unknown kind {values["kind"]!r}', line=line)
  return KernelEvent(**values)


def _parse_telemetry(record, line):
  for field in ('gpu', 'iteration') + _TELEMETRY_FIELDS:
    _require_int(record, field, line)
  return TelemetrySample(**{f: record[f] for f in _TELEMETRY_FIELDS})


def _check_declared(declared, current, iteration, line):
  if declared is not None and iteration != current:
    raise TraceFormatError(
        f'record of iteration {iteration} under iteration record {current}',
        line=line, invariant='iteration',
    )


def read_trace_file(source: Iterable[str]) -> TraceFile:
  """Reads and validates a trace file.

  Args:
    source: Any iterable of text lines, e.g. an open file.

  Returns:
    The header and the validated iteration traces.

  Raises:
    TraceFormatError: on a malformed record, a version mismatch or a violated
      trace invariant. The message names the line and the invariant.
  """
  header = None
  events = collections.defaultdict(list)
  telemetry = collections.defaultdict(lambda: collections.defaultdict(list))
  first_line = {}
  declared = None
  current = None

  for line_number, raw in enumerate(source, start=1):
    if not raw.strip():
      continue
    try:
      record = json.loads(raw)
    except json.JSONDecodeError as e:
      raise TraceFormatError(f'malformed record: {e}', line=line_number) from e
    if not isinstance(record, dict) or 'type' not in record:
      raise TraceFormatError('record has no "type" tag', line=line_number)

    record_type = record['type']
    if header is None:
      if record_type != 'header':
        raise TraceFormatError(
            f'first record is {record_type!r}', line=line_number,
            invariant='header first',
        )
      if record.get('version') != FORMAT_VERSION:
        raise TraceFormatError(
            f'unsupported version {record.get("version")!r}, expected'
            f' {FORMAT_VERSION}', line=line_number, invariant='version',
        )
      _require_int(record, 'gpu_count', line_number)
      header = record
      continue

    if record_type == 'iteration':
      iteration = _require_int(record, 'iteration', line_number)
      if not isinstance(record.get('telemetry'), bool):
        raise TraceFormatError(
            "field 'telemetry' must be a boolean", line=line_number
        )
      if declared is None:
        if events or telemetry:
          raise TraceFormatError(
              'iteration record after untagged records', line=line_number,
              invariant='iteration',
          )
        declared = {}
      elif iteration <= current:
        raise TraceFormatError(
            f'iteration {iteration} after {current}', line=line_number,
            invariant='iteration',
        )
      declared[iteration] = record['telemetry']
      current = iteration
      first_line[iteration] = line_number
    elif record_type == 'kernel':
      event = _parse_kernel(record, line_number)
      _check_declared(declared, current, event.iteration, line_number)
      events[event.iteration].append(event)
      first_line.setdefault(event.iteration, line_number)
    elif record_type == 'telemetry':
      sample = _parse_telemetry(record, line_number)
      gpu_id = record['gpu']
      if not 0 <= gpu_id < header['gpu_count']:
        raise TraceFormatError(
            f'telemetry for GPU {gpu_id}', line=line_number,
            invariant='gpu range',
        )
      _check_declared(declared, current, record['iteration'], line_number)
      if declared is not None and not declared[current]:
        raise TraceFormatError(
            f'telemetry in iteration {current} declared without telemetry',
            line=line_number, invariant='iteration',
        )
      telemetry[record['iteration']][gpu_id].append(sample)
      first_line.setdefault(record['iteration'], line_number)
    elif record_type == 'header':
      raise TraceFormatError(
          'second header record', line=line_number, invariant='header first'
      )
    else:
      raise TraceFormatError(
          f'unknown record type {record_type!r}', line=line_number
      )

  if header is None:
    raise TraceFormatError('empty trace file', line=1, invariant='header first')

  g_count = header['gpu_count']
  if declared is None:
    declared = {i: i in telemetry for i in sorted(set(events) | set(telemetry))}
  traces = []
  for iteration, has_telemetry in declared.items():
    series = ()
    if has_telemetry:
      series = tuple(
          tuple(telemetry[iteration].get(g, ())) for g in range(g_count)
      )
    trace = IterationTrace(
        iteration=iteration,
        gpu_count=g_count,
        events=tuple(events.get(iteration, ())),
        telemetry=series,
    )
    try:
      validate_trace(trace)
    except TraceFormatError as e:
      raise TraceFormatError(
          f'iteration {iteration}: {e.detail}',
          line=first_line.get(iteration),
          invariant=e.invariant,
      ) from e
    traces.append(trace)
  logger.debug('Read %d iterations for %d GPUs', len(traces), g_count)
  return TraceFile(header=header, traces=traces)


def read_trace(source: Iterable[str]) -> list[IterationTrace]:
  return read_trace_file(source).traces


def save_trace(path, traces, **header_fields) -> int:
  with open(path, 'w', encoding='utf-8') as f:
    count = write_trace(traces, f, **header_fields)
  logger.info('Trace saved to %s (%d records)', path, count)
  return count


def load_trace(path) -> TraceFile:
  with open(path, 'r', encoding='utf-8') as f:
    return read_trace_file(f)
