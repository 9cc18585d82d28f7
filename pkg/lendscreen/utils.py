from dataclasses import asdict, is_dataclass
from datetime import date, datetime
from enum import Enum
import hashlib
import json
import os
import tempfile
import zlib
from typing import Any, Union

import numpy as np


class JSONSerial(json.JSONEncoder):
    """Adds serialization for numpy values, enums, dataclasses and dates."""

    def default(self, obj):
        if isinstance(obj, (datetime, date)):
            return obj.isoformat()
        elif isinstance(obj, Enum):
            return obj.value
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif is_dataclass(obj):
            return asdict(obj)
        else:
            return json.JSONEncoder.default(self, obj)


def dumps(obj: Any, **kwargs) -> str:
    return json.dumps(obj, cls=JSONSerial, **kwargs)


def config_hash(snapshot: Any, length: int = 12) -> str:
    canonical = json.dumps(snapshot, cls=JSONSerial, sort_keys=True,
                           separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:length]


def stream_key(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    return int(key)


def derive_seed(root: int, *keys: Union[int, str]) -> int:
    """64-bit seed for the stream named by `keys` under `root`."""
    sequence = np.random.SeedSequence(
        entropy=int(root), spawn_key=tuple(stream_key(key) for key in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(root: int, *keys: Union[int, str]) -> np.random.Generator:
    """Counter-based (Philox) generator; no global random state is touched."""
    return np.random.Generator(np.random.Philox(derive_seed(root, *keys)))


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(handle, 'w', encoding='utf-8') as tmp:
            tmp.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
