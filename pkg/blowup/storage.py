import hashlib
import json
import logging
import math
import os
from typing import Any, Dict, List

import numpy as np
import pandas as pd

logger = logging.getLogger("DataStorage")
logger.setLevel(logging.DEBUG)
if not logger.handlers:
    handler = logging.FileHandler("data_storage.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

FLOAT_FORMAT = "%.17g"


def jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if value is None or isinstance(value, str):
        return value
    return str(value)


def file_digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


class OutputStore:
    """Writes run artifacts into one directory and remembers each file's hash."""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.files: List[Dict[str, Any]] = []
        os.makedirs(output_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _record(self, name: str, kind: str):
        path = self._path(name)
        entry = {"path": name, "kind": kind, "bytes": os.path.getsize(path), "sha256": file_digest(path)}
        self.files = [f for f in self.files if f["path"] != name] + [entry]
        logger.info(f"Wrote {name} ({entry['bytes']} bytes)")

    def write_csv(self, name: str, df: pd.DataFrame) -> str:
        try:
            df.to_csv(self._path(name), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except Exception as e:
            logger.error(f"Error writing {name}: {e}")
            raise
        self._record(name, "csv")
        return name

    def write_dat(self, name: str, df: pd.DataFrame) -> str:
        """Whitespace-separated columns with a commented header, ready for gnuplot."""
        try:
            with open(self._path(name), "w", encoding="utf-8", newline="\n") as f:
                f.write("# " + " ".join(df.columns) + "\n")
                df.to_csv(f, sep=" ", index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n",
                          na_rep="nan")
        except Exception as e:
            logger.error(f"Error writing {name}: {e}")
            raise
        self._record(name, "dat")
        return name

    def write_json(self, name: str, payload: Any, record: bool = True) -> str:
        try:
            with open(self._path(name), "w", encoding="utf-8", newline="\n") as f:
                json.dump(jsonable(payload), f, indent=2, sort_keys=True, ensure_ascii=False)
                f.write("\n")
        except Exception as e:
            logger.error(f"Error writing {name}: {e}")
            raise
        if record:
            self._record(name, "json")
        return name

    def manifest(self) -> List[Dict[str, Any]]:
        return sorted(self.files, key=lambda f: f["path"])
