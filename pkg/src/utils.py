import gzip
import json
import os
import pickle
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger


def save_to_csv(data, filepath, message):
    """Write a table (anything pandas accepts) as CSV without the index; failures are logged, not raised."""
    try:
        pd.DataFrame(data).to_csv(filepath, index=False)
        logger.success(message)
    except (OSError, ValueError) as e:
        logger.error(f"Failed to save {filepath}: {e}")


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def save_to_json(data, filepath, message):
    """Write a JSON document (numpy values converted) with the same error handling as save_to_csv."""
    try:
        with open(filepath, "w", encoding="utf-8") as file:
            json.dump(data, file, indent=2, default=_json_default)
        logger.success(message)
    except (OSError, TypeError, ValueError) as e:
        logger.error(f"Failed to save {filepath}: {e}")


def save_object(object_to_save: object, output_dir: str, output_file_name: str,
                output_description: Optional[str] = None) -> Optional[str]:
    """Pickle an object into ``<output_dir>/<output_file_name>.object.gz``; returns the path, or None on failure."""
    output_file_path = os.path.join(output_dir, f"{output_file_name}.object.gz")
    try:
        os.makedirs(output_dir, exist_ok=True)
        with gzip.open(output_file_path, "wb") as file:
            pickle.dump(object_to_save, file)
    except (OSError, pickle.PickleError) as e:
        logger.error(f"Failed to save {output_file_path}: {e}")
        return None

    logger.success(f"{output_description or 'Object'} saved as {output_file_path}.")
    return output_file_path


def load_object(filepath: str, description: Optional[str] = None) -> object:
    """Unpickle an object written by save_object. Errors are logged and re-raised."""
    description = description or "object"
    logger.debug(f"Loading {description} from {filepath}.")
    try:
        with gzip.open(filepath, "rb") as file:
            return pickle.load(file)
    except (OSError, pickle.PickleError, EOFError) as e:
        logger.error(f"Failed to load {description} from {filepath}: {e}")
        raise
