import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import pandas as pd
from iopath.common.file_io import g_pathmgr
from tqdm import tqdm

FLOAT_FORMAT = "%.9g"


def read_text(path):
    with g_pathmgr.open(path, "r") as f:
        return f.read()


def write_text(path, text):
    parent = os.path.dirname(path)
    if parent:
        g_pathmgr.mkdirs(parent)
    with g_pathmgr.open(path, "w") as f:
        f.write(text)


def write_json(path, payload):
    # sorted keys and repr floats keep files byte-identical across runs
    write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def read_json(path):
    return json.loads(read_text(path))


def write_csv(path, frame: pd.DataFrame):
    write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def read_csv(path) -> pd.DataFrame:
    with g_pathmgr.open(path, "r") as f:
        return pd.read_csv(f)


def text_digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def ordered_map(fn, items, jobs=1, desc=None):
    """
    Apply ``fn`` to every item and return the results in input order.

    With ``jobs > 1`` the calls run on a thread pool; completion order never
    leaks into the output. A progress bar is shown when ``desc`` is given.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        iterator = tqdm(items, desc=desc) if desc else items
        return [fn(item) for item in iterator]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, item) for item in items]
        iterator = tqdm(futures, desc=desc) if desc else futures
        return [fut.result() for fut in iterator]


def configure_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
