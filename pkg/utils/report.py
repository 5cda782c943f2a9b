"""
Deterministic report documents: JSON layout, keys sorted, reals as %.17g.
"""

import json
import math

import numpy as np


def _number(value):
    value = float(value)
    if math.isnan(value):
        return '"nan"'
    if math.isinf(value):
        return '"inf"' if value > 0 else '"-inf"'
    return '%.17g' % value


def _render(value, indent, level):
    pad = ' ' * (indent * (level + 1))
    close = ' ' * (indent * level)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if value is None:
        return 'null'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _number(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{pad}{json.dumps(str(key))}: {_render(value[key], indent, level + 1)}"
                 for key in sorted(value, key=str)]
        return '{\n' + ',\n'.join(items) + '\n' + close + '}'
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return '[' + ', '.join(_render(v, indent, level + 1) for v in value) + ']'
        items = [pad + _render(v, indent, level + 1) for v in value]
        return '[\n' + ',\n'.join(items) + '\n' + close + ']'
    raise TypeError(f"cannot render {type(value).__name__} in a report")


def dumps(document, indent=2):
    return _render(document, indent, 0) + '\n'


def write(document, path=None, stream=None):
    """Write to `path` (LF line endings) or to `stream`."""
    text = dumps(document)
    if path is not None:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    elif stream is not None:
        stream.write(text)
    return text
