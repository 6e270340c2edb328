"""
CSV Processor Module for commscape

This module handles tabular file operations with memory efficiency:
chunked reading with encoding fallback, point-set import, and export of
labels, similarity matrices, report tables and plot data.
"""

from io import BytesIO
from pathlib import Path
from typing import BinaryIO, Callable, Dict, List, Optional, Sequence, Union
import logging
import sys

import numpy as np
import pandas as pd

from utils import ParseError, ValidationResult


ENCODINGS = ("utf-8", "latin-1", "cp1252")

PathOrBuffer = Union[str, Path, BinaryIO]


class CSVProcessor:
    """
    Processor for reading and writing the CSV files of every subcommand.

    Large inputs are read in chunks of chunk_size rows and merged; every cell
    is read as text so that numeric conversion can report the exact cell
    that failed.
    """

    def __init__(self, chunk_size: int = 10000):
        """
        Initialize CSV processor.

        Args:
            chunk_size: Number of rows to read per chunk
        """
        self.chunk_size = max(1, int(chunk_size))
        self.logger = logging.getLogger(__name__)

    def _buffer(self, source: PathOrBuffer) -> BytesIO:
        if isinstance(source, (str, Path)):
            return BytesIO(Path(source).read_bytes())
        data = source.read()
        return BytesIO(data if isinstance(data, bytes) else data.encode("utf-8"))

    def read_frame(
        self,
        source: PathOrBuffer,
        progress_callback: Optional[Callable[[int], None]] = None
    ) -> pd.DataFrame:
        """
        Read a CSV file in chunks, every cell as a string.

        Args:
            source: Path or binary stream with a header row
            progress_callback: Optional callback receiving the rows read so far

        Returns:
            DataFrame with the header's columns; empty body gives zero rows

        Raises:
            ParseError: If the file has no header or cannot be tokenized
        """
        file_buffer = self._buffer(source)
        last_error: Optional[Exception] = None

        for encoding in ENCODINGS:
            file_buffer.seek(0)
            try:
                chunks = []
                rows_read = 0
                reader = pd.read_csv(
                    file_buffer,
                    chunksize=self.chunk_size,
                    encoding=encoding,
                    dtype=str,
                    keep_default_na=False,
                    skipinitialspace=True,
                )
                for chunk_index, chunk in enumerate(reader):
                    rows_read += len(chunk)
                    self.logger.debug(f"Read chunk {chunk_index + 1} with {len(chunk)} rows")
                    if progress_callback:
                        progress_callback(rows_read)
                    chunks.append(chunk)

                if not chunks:
                    file_buffer.seek(0)
                    return pd.read_csv(file_buffer, nrows=0, encoding=encoding, dtype=str)

                return self._merge_results(chunks)
            except UnicodeDecodeError as e:
                last_error = e
                self.logger.debug(f"Encoding {encoding} failed, trying next")
                continue
            except pd.errors.EmptyDataError:
                raise ParseError("CSV input is empty (no header row)", location="line 1") from None
            except pd.errors.ParserError as e:
                raise ParseError(f"malformed CSV: {e}") from None

        raise ParseError(f"could not decode CSV input: {last_error}")

    def _merge_results(self, chunks: List[pd.DataFrame]) -> pd.DataFrame:
        """Concatenate chunks preserving row order."""
        if len(chunks) == 1:
            return chunks[0].reset_index(drop=True)
        return pd.concat(chunks, ignore_index=True)

    def validate_csv_format(self, df: pd.DataFrame, required_columns: Sequence[str] = ()) -> ValidationResult:
        """
        Validate that a frame has the required columns and unique headers.

        Args:
            df: Frame to validate
            required_columns: Columns that must be present

        Returns:
            ValidationResult with missing or duplicate columns as errors
        """
        errors = []
        warnings = []

        missing = [column for column in required_columns if column not in df.columns]
        if missing:
            errors.append(f"Missing required columns: {', '.join(missing)}")

        duplicated = [str(column) for column in df.columns if "." in str(column) and str(column).split(".")[0] in df.columns]
        if duplicated:
            errors.append(f"Duplicate columns: {', '.join(duplicated)}")

        if len(df) == 0:
            warnings.append("CSV file has no data rows")

        return ValidationResult(is_valid=len(errors) == 0, errors=errors, warnings=warnings)

    def to_numeric(self, df: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
        """
        Convert text columns to a float matrix.

        Raises:
            ParseError: At the first missing or non-numeric cell, with its location
        """
        if len(df) == 0:
            return np.zeros((0, len(columns)), dtype=np.float64)
        matrix = np.empty((len(df), len(columns)), dtype=np.float64)
        for position, column in enumerate(columns):
            text = df[column].astype(str).str.strip()
            values = pd.to_numeric(text, errors="coerce")
            bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                cell = text.iloc[row]
                problem = "missing value" if cell == "" else f"non-numeric value {cell!r}"
                # header is line 1
                raise ParseError(problem, location=f"line {row + 2}, column {column!r}")
            matrix[:, position] = values.to_numpy(dtype=np.float64)
        return matrix

    def read_point_set(self, source: PathOrBuffer, id_column: Optional[str] = None):
        """
        Read a point set: one row per point, every non-id column a coordinate.

        Returns:
            PointSet with ids from id_column, or row numbers
        """
        from clustering import PointSet

        df = self.read_frame(source)
        validation = self.validate_csv_format(df, [id_column] if id_column else [])
        if not validation.is_valid:
            raise ParseError("; ".join(validation.errors), location="header")
        if len(df) == 0:
            raise ParseError("point set has no rows", location="line 2")

        columns = [column for column in df.columns if column != id_column]
        if not columns:
            raise ParseError("point set has no coordinate columns", location="header")
        points = self.to_numeric(df, columns)
        ids = df[id_column].tolist() if id_column else list(range(len(df)))
        self.logger.info(f"Read {len(df)} points with {len(columns)} dimensions")
        return PointSet(points, ids)

    def write_frame(self, df: pd.DataFrame, destination: Union[str, Path]) -> None:
        """Write without the index; '-' writes to standard output."""
        if str(destination) == "-":
            sys.stdout.write(df.to_csv(index=False, lineterminator="\n"))
            sys.stdout.flush()
            return
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n")
        self.logger.debug(f"Wrote {len(df)} rows to {path}")

    def write_labels(self, ids: Sequence, labels: Sequence[int], destination: Union[str, Path]) -> None:
        self.write_frame(pd.DataFrame({"id": list(ids), "label": [int(v) for v in labels]}), destination)

    def write_feature_spacing(self, matrix, destination: Union[str, Path]) -> None:
        """Long-format matrix export: source,target,feature_spacing for every pair of distinct ids."""
        sources = np.repeat(matrix.node_ids, matrix.target_ids.size)
        targets = np.tile(matrix.target_ids, matrix.node_ids.size)
        values = matrix.values.ravel()
        keep = sources != targets
        frame = pd.DataFrame({
            "source": sources[keep],
            "target": targets[keep],
            "feature_spacing": values[keep],
        })
        self.write_frame(frame, destination)

    def write_table(self, rows: Sequence[Dict[str, object]], columns: Sequence[str], destination: Union[str, Path]) -> None:
        """Write report rows restricted to the given columns, in that order."""
        frame = pd.DataFrame(list(rows), columns=list(columns))
        self.write_frame(frame, destination)

    def write_partition(self, communities: Sequence[Sequence[int]], destination: Union[str, Path]) -> None:
        """One "node community" row per node, communities numbered in order."""
        nodes: List[int] = []
        labels: List[int] = []
        for index, community in enumerate(communities):
            for node in sorted(community):
                nodes.append(int(node))
                labels.append(index)
        self.write_frame(pd.DataFrame({"node": nodes, "community": labels}), destination)
