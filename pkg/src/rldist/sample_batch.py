"""Columnar experience container: the unit of all data movement.

Columns are flat numpy arrays sharing one row count; rows belonging to one
episode are contiguous and ordered by time index. Cross-actor transfer
moves whole columns (via the object store); dumps use the binary framing
with one record per column.
"""

from __future__ import annotations

import numpy as np

from .taskrt import framing


class SchemaMismatch(Exception):
    pass


class MissingColumn(Exception):
    pass


class SampleBatch:
    OBS = "obs"
    ACTIONS = "actions"
    REWARDS = "rewards"
    DONES = "dones"
    NEW_OBS = "new_obs"
    H = "h"
    H_NEXT = "h_next"
    EPS_ID = "eps_id"
    AGENT_ID = "agent_id"
    T = "t_index"
    LOGP = "logp"
    VF_PREDS = "vf_preds"
    ADVANTAGES = "advantages"
    VALUE_TARGETS = "value_targets"

    def __init__(self, columns: dict[str, np.ndarray]):
        if not columns:
            raise SchemaMismatch("a batch needs at least one column")
        counts = {k: len(v) for k, v in columns.items()}
        if len(set(counts.values())) != 1:
            raise SchemaMismatch(f"ragged columns: {counts}")
        self._columns = {k: np.asarray(v) for k, v in columns.items()}

    # -- container protocol ---------------------------------------------------

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self._columns[key]
        except KeyError:
            raise MissingColumn(f"batch has no column {key!r}") from None

    def __setitem__(self, key: str, value) -> None:
        value = np.asarray(value)
        if len(value) != self.row_count:
            raise SchemaMismatch(
                f"column {key!r} has {len(value)} rows, batch has {self.row_count}")
        self._columns[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self._columns

    def keys(self):
        return self._columns.keys()

    @property
    def row_count(self) -> int:
        return len(next(iter(self._columns.values())))

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in self._columns.values())

    def copy(self) -> "SampleBatch":
        return SampleBatch({k: v.copy() for k, v in self._columns.items()})

    def slice_rows(self, index) -> "SampleBatch":
        """Select rows by slice or integer index array."""
        return SampleBatch({k: v[index] for k, v in self._columns.items()})

    def episode_slices(self) -> list[slice]:
        """Contiguous runs of one eps_id, in order."""
        eps = self[self.EPS_ID]
        if len(eps) == 0:
            return []
        boundaries = [0] + [i for i in range(1, len(eps))
                            if eps[i] != eps[i - 1]] + [len(eps)]
        return [slice(a, b) for a, b in zip(boundaries[:-1], boundaries[1:])]

    def equals(self, other: "SampleBatch") -> bool:
        if set(self.keys()) != set(other.keys()):
            return False
        for k in self.keys():
            a, b = self._columns[k], other._columns[k]
            if a.dtype != b.dtype or a.shape != b.shape:
                return False
            if a.tobytes() != b.tobytes():
                return False
        return True

    def __repr__(self) -> str:
        return f"SampleBatch({self.row_count} rows, {sorted(self.keys())})"

    # -- construction ---------------------------------------------------------

    @staticmethod
    def concat(batches: list["SampleBatch"]) -> "SampleBatch":
        """Concatenate rows in argument order; schemas must agree."""
        batches = [b for b in batches]
        if not batches:
            raise SchemaMismatch("nothing to concatenate")
        schema = set(batches[0].keys())
        for b in batches[1:]:
            if set(b.keys()) != schema:
                raise SchemaMismatch(
                    f"schemas differ: {sorted(schema)} vs {sorted(b.keys())}")
        return SampleBatch({
            k: np.concatenate([b[k] for b in batches]) for k in schema})

    @staticmethod
    def from_rows(rows: list[dict]) -> "SampleBatch":
        if not rows:
            raise SchemaMismatch("no rows")
        return SampleBatch({
            k: np.stack([np.asarray(r[k]) for r in rows]) for k in rows[0]})

    def row(self, i: int) -> dict:
        return {k: v[i] for k, v in self._columns.items()}

    # -- dumps ----------------------------------------------------------------

    def to_bytes(self) -> bytes:
        return framing.encode_columns(self._columns)

    @staticmethod
    def from_bytes(data: bytes) -> "SampleBatch":
        return SampleBatch(framing.decode_columns(data))
