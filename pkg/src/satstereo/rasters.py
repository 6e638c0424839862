"""Raster input/output: single-channel images and georeferenced DSM grids.

Images are 8- or 16-bit single-channel PNG or PGM; pixel intensities are
returned as float32 in their native units.  Elevation grids use the ESRI
ASCII format (.asc) with NaN as the in-memory nodata marker.  Grid row 0
is the northern edge; cell centers sit at half-cell offsets from the
lower-left corner recorded in the header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Read an 8/16-bit single-channel PNG or PGM as a float32 array."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float32)
        else:
            raise ValueError(
                f"{path}: mode {im.mode} is not single-channel; "
                "reduce multi-band imagery to panchromatic first"
            )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite intensities")
    return arr


def save_image(path, array: np.ndarray) -> None:
    """Write a 2D array as 8-bit (values <= 255) or 16-bit grayscale."""
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError("expected a 2D array")
    clipped = np.clip(np.round(arr), 0, 65535).astype(np.uint32)
    if clipped.max(initial=0) <= 255:
        Image.fromarray(clipped.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(clipped.astype(np.uint16)).save(path)


@dataclass(frozen=True)
class DsmGrid:
    """Gridded elevation raster; data[0, :] is the northernmost row."""

    xll: float
    yll: float
    cell_size: float
    data: np.ndarray  # float array, NaN = nodata

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("elevation data must be a non-empty 2D array")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.data)

    def cell_centers(self):
        """(x, y) center coordinate vectors; y is returned per grid row."""
        x = self.xll + (np.arange(self.width) + 0.5) * self.cell_size
        y = self.yll + (self.height - np.arange(self.height) - 0.5) * self.cell_size
        return x, y

    def same_geometry(self, other: "DsmGrid", tol: float = 1e-9) -> bool:
        return (
            self.data.shape == other.data.shape
            and abs(self.xll - other.xll) <= tol
            and abs(self.yll - other.yll) <= tol
            and abs(self.cell_size - other.cell_size) <= tol
        )

    def with_data(self, data: np.ndarray) -> "DsmGrid":
        return DsmGrid(self.xll, self.yll, self.cell_size, data)


def write_asc(grid: DsmGrid, path, nodata: float = -9999.0) -> None:
    data = np.where(np.isfinite(grid.data), grid.data, nodata)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"ncols {grid.width}\n")
        f.write(f"nrows {grid.height}\n")
        f.write(f"xllcorner {grid.xll:.6f}\n")
        f.write(f"yllcorner {grid.yll:.6f}\n")
        f.write(f"cellsize {grid.cell_size:.6f}\n")
        f.write(f"NODATA_value {nodata:.6f}\n")
        for row in data:
            f.write(" ".join(f"{v:.6f}" for v in row))
            f.write("\n")


def read_asc(path) -> DsmGrid:
    with open(path, "r", encoding="utf-8") as f:
        header = {}
        for _ in range(6):
            key, value = f.readline().split()
            header[key.lower()] = float(value)
        data = np.loadtxt(f, dtype=float)
    data = np.atleast_2d(data)
    expected = (int(header["nrows"]), int(header["ncols"]))
    if data.shape != expected:
        raise ValueError(f"{path}: grid shape {data.shape} != header {expected}")
    nodata = header.get("nodata_value")
    if nodata is not None:
        data = np.where(np.isclose(data, nodata), np.nan, data)
    return DsmGrid(header["xllcorner"], header["yllcorner"], header["cellsize"], data)


def write_sidecar(raster_path, provenance: dict) -> None:
    """Write the provenance JSON next to a raster (``<raster>.json``)."""
    with open(str(raster_path) + ".json", "w", encoding="utf-8") as f:
        json.dump(provenance, f, indent=2, sort_keys=True)
        f.write("\n")
