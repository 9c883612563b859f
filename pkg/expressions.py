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

"""Functions to evaluate knob and sweep expressions."""

import builtins
import math
import statistics

from simpleeval import EvalWithCompoundTypes


def evaluator(names=None):
  """A function to create a safe evaluator for simple single expression."""
  s = EvalWithCompoundTypes()
  if names:
    s.names.update(names)

  # Math functions
  math_functions = [
      'ceil',
      'floor',
      'sqrt',
      'exp',
      'log',
      'log10',
      'pi',
      'e',
  ]
  for func in math_functions:
    s.functions[func] = getattr(math, func)

  # Built-in functions
  builtin_functions = [
      'abs',
      'round',
      'min',
      'max',
      'sum',
      'len',
      'sorted',
      'range',
      'list',
      'int',
      'float',
      'bool',
      'str',
  ]
  for func in builtin_functions:
    s.functions[func] = getattr(builtins, func)

  # Statistics functions
  statistics_functions = ['mean', 'median', 'stdev']
  for func in statistics_functions:
    s.functions[func] = getattr(statistics, func)

  s.names.update({'true': True, 'false': False, 'none': None})
  return s


def evaluate_value(text, names=None):
  """Evaluates text, or returns it unchanged when it is not an expression."""
  if not isinstance(text, str):
    return text
  try:
    value = evaluator(names).eval(text)
  except Exception:  # pylint: disable=broad-exception-caught
    return text
  # Bare function names such as 'sum' or 'max' are knob values, not calls.
  return text if callable(value) else value


def parse_assignment(assignment: str):
  """Splits 'key=value' and evaluates the value."""
  if '=' not in assignment:
    raise ValueError(f'expected key=value, got {assignment!r}')
  key, value = assignment.split('=', 1)
  key = key.strip()
  if not key:
    raise ValueError(f'missing key in {assignment!r}')
  return key, evaluate_value(value.strip())


def expand_values(values):
  """Sweep values: a list as is, or an expression producing one."""
  if isinstance(values, str):
    values = evaluate_value(values)
  if isinstance(values, (range, tuple)):
    values = list(values)
  if not isinstance(values, list):
    values = [values]
  return values
