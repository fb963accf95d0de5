"""
Dataset loading and validation.

Supported sources:
- IDX byte files (grayscale digit benchmarks, optionally gzipped)
- a directory of arrays: <split>.npz with "inputs"/"labels" plus metadata.yaml
- synthetic Gaussian blobs (generated, no files)
"""

import gzip
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import yaml

from src.ingest.task_stream import make_synthetic_blobs
from src.models import DatasetHandle
from src.utils.errors import ConfigInvalid, ShapeMismatch

logger = logging.getLogger(__name__)


# IDX element type codes
_IDX_DTYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}

# Standard file stems of the digit benchmark
_IDX_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


def read_idx(path: Path) -> np.ndarray:
    """
    Read an IDX file (raw or .gz) into a numpy array.

    Raises:
        ValueError: If the magic number is malformed or the payload is short
    """
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'rb') as f:
        raw = f.read()

    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"Not an IDX file: {path}")

    type_code, ndim = raw[2], raw[3]
    if type_code not in _IDX_DTYPES:
        raise ValueError(f"Unknown IDX element type 0x{type_code:02x} in {path}")

    dims = tuple(int(d) for d in np.frombuffer(raw, dtype='>u4', count=ndim, offset=4))
    dtype = np.dtype(_IDX_DTYPES[type_code])
    offset = 4 + 4 * ndim
    count = int(np.prod(dims)) if dims else 0

    if len(raw) - offset < count * dtype.itemsize:
        raise ValueError(f"Truncated IDX payload in {path}")

    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder('='))


def normalize_per_channel(
    train: np.ndarray,
    test: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Standardize to zero mean / unit variance per channel using train statistics.

    Channel axis is 1 for image arrays (n, C, H, W) and the feature axis for
    flat arrays (n, d).
    """
    axes = (0,) + tuple(range(2, train.ndim))
    mean = train.mean(axis=axes, keepdims=True, dtype=np.float64)
    std = train.std(axis=axes, keepdims=True, dtype=np.float64)
    std[std < 1e-8] = 1.0
    return (
        ((train - mean) / std).astype(np.float32),
        ((test - mean) / std).astype(np.float32),
    )


class DatasetLoader:
    """
    Loads train/test DatasetHandles for an experiment.

    Responsibilities:
    - Detect the dataset format from the 'dataset' config section
    - Validate files exist and shapes/labels are consistent
    - Normalize inputs per channel
    """

    SUPPORTED_FORMATS = {
        'blobs': 'blobs',
        'idx': 'idx',
        'digits': 'idx',
        'mnist': 'idx',
        'arrays': 'arrays',
        'directory': 'arrays',
    }

    def __init__(self, config: Optional[dict] = None):
        """
        Initialize dataset loader.

        Args:
            config: Configuration dict; reads the 'dataset' section
        """
        self.config = config or {}
        self.dataset_config = self.config.get('dataset', {}) or {}

    def load(self) -> Dict[str, DatasetHandle]:
        """
        Load both splits.

        Returns:
            {"train": DatasetHandle, "test": DatasetHandle}

        Raises:
            FileNotFoundError: If dataset files are missing
            ConfigInvalid: If the dataset kind is unsupported
        """
        dataset_format = self.detect_format()
        logger.info(f"Loading dataset '{self.dataset_config.get('name', dataset_format)}' ({dataset_format})")

        if dataset_format == 'blobs':
            return self._load_blobs()
        if dataset_format == 'idx':
            return self._load_idx(self._require_path())
        return self._load_arrays(self._require_path())

    def detect_format(self) -> str:
        """
        Resolve the dataset format from 'kind' (or 'name' as fallback).

        Raises:
            ConfigInvalid: If the format is not recognized
        """
        kind = str(self.dataset_config.get('kind', self.dataset_config.get('name', 'blobs'))).lower()
        if kind in self.SUPPORTED_FORMATS:
            return self.SUPPORTED_FORMATS[kind]

        path = self.dataset_config.get('path')
        if path and (Path(path) / 'metadata.yaml').exists():
            return 'arrays'

        raise ConfigInvalid(
            f"Unknown dataset kind: {kind}. "
            f"Supported: {', '.join(self.SUPPORTED_FORMATS.keys())}"
        )

    def _require_path(self) -> Path:
        path = self.dataset_config.get('path')
        if not path:
            raise ConfigInvalid("dataset.path is required for file-based datasets")
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Dataset directory not found: {path}")
        if not path.is_dir():
            raise ConfigInvalid(f"Dataset path is not a directory: {path}")
        return path

    def _load_blobs(self) -> Dict[str, DatasetHandle]:
        blobs = self.dataset_config.get('blobs', {}) or {}
        num_classes = int(blobs.get('num_classes', 6))
        dim = int(blobs.get('dim', 2))
        separation = float(blobs.get('separation', 10.0))
        seed = int(blobs.get('seed', 0))

        return {
            'train': make_synthetic_blobs(num_classes, int(blobs.get('per_class', 50)),
                                          dim, separation, seed, split='train'),
            'test': make_synthetic_blobs(num_classes, int(blobs.get('test_per_class', 20)),
                                         dim, separation, seed, split='test'),
        }

    def _load_idx(self, directory: Path) -> Dict[str, DatasetHandle]:
        arrays = {}
        for split, (image_stem, label_stem) in _IDX_FILES.items():
            images = read_idx(self._find_file(directory, image_stem))
            labels = read_idx(self._find_file(directory, label_stem)).astype(np.int64)
            if images.shape[0] != labels.shape[0]:
                raise ShapeMismatch(
                    f"{split}: {images.shape[0]} images but {labels.shape[0]} labels"
                )
            # (n, H, W) -> (n, 1, H, W), scaled to [0, 1] before standardization
            arrays[split] = (images[:, None].astype(np.float32) / 255.0, labels)

        num_classes = int(self.dataset_config.get('num_classes', 10))
        return self._build_splits(self.dataset_config.get('name', 'digits'), arrays, num_classes)

    def _load_arrays(self, directory: Path) -> Dict[str, DatasetHandle]:
        metadata_path = directory / 'metadata.yaml'
        if not metadata_path.exists():
            raise FileNotFoundError(f"Missing metadata file: {metadata_path}")
        with open(metadata_path, 'r') as f:
            metadata = yaml.safe_load(f) or {}

        num_classes = int(metadata['num_classes'])
        shape = tuple(int(s) for s in metadata.get('shape', ()))
        dtype = np.dtype(metadata.get('dtype', 'float32'))

        arrays = {}
        for split in ('train', 'test'):
            split_path = directory / f"{split}.npz"
            if not split_path.exists():
                raise FileNotFoundError(f"Missing split file: {split_path}")
            with np.load(split_path) as archive:
                inputs = archive['inputs'].astype(dtype)
                labels = archive['labels'].astype(np.int64)
            if shape and tuple(inputs.shape[1:]) != shape:
                raise ShapeMismatch(
                    f"{split_path.name}: sample shape {inputs.shape[1:]} != metadata shape {shape}"
                )
            arrays[split] = (inputs.astype(np.float32), labels)

        return self._build_splits(metadata.get('name', directory.name), arrays, num_classes)

    def _build_splits(self, name: str, arrays: dict, num_classes: int) -> Dict[str, DatasetHandle]:
        train_x, train_y = arrays['train']
        test_x, test_y = arrays['test']

        if self.dataset_config.get('normalize', True):
            train_x, test_x = normalize_per_channel(train_x, test_x)

        limit = self.dataset_config.get('max_per_class')
        if limit:
            train_x, train_y = _limit_per_class(train_x, train_y, int(limit))

        return {
            'train': DatasetHandle(name, train_x, train_y, 'train', num_classes),
            'test': DatasetHandle(name, test_x, test_y, 'test', num_classes),
        }

    @staticmethod
    def _find_file(directory: Path, stem: str) -> Path:
        for candidate in (directory / stem, directory / f"{stem}.gz"):
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"IDX file not found: {directory / stem}[.gz]")


def _limit_per_class(inputs: np.ndarray, labels: np.ndarray, limit: int):
    """Keep the first `limit` samples of each class (order preserved)."""
    keep = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        keep[np.flatnonzero(labels == c)[:limit]] = True
    return inputs[keep], labels[keep]
