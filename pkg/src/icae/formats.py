"""On-disk formats: frame datasets, network weights, unit models, trained models.

All multi-byte values are little-endian. Bulk arrays are stored as float32
(prior histograms as float64); everything is float64 again once loaded.
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .genproc import FrameDataset
from .model import IcaeModel, LabelScale
from .numkit import DenseNet
from .units import UnitModel

DATASET_MAGIC = b"ICAE"
NET_MAGIC = b"ICAM"
UNITS_MAGIC = b"ICAU"
MODEL_MAGIC = b"ICAP"
VERSION = 1

FLAG_TRUE_S = 1
FLAG_PROXY_S = 2
FLAG_COND_ID = 4
# optional label columns in flag-bit order
_LABEL_FIELDS = (("true_s", FLAG_TRUE_S), ("proxy_s", FLAG_PROXY_S), ("cond_id", FLAG_COND_ID))

ACTIVATION_CODES = {"tanh": 0, "relu": 1, "identity": 2}
_ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_CODES.items()}


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def fail(self, msg, at=None):
        raise IngestionError(f"{self.what}: {msg} at byte offset {self.pos if at is None else at}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"truncated (need {n} bytes, {len(self.data) - self.pos} left)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        start = self.pos
        arr = np.frombuffer(self.take(itemsize * count), dtype=dtype).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            self.fail("non-finite value", at=start + bad * itemsize)
        return arr

    def magic(self, expected: bytes):
        got = self.take(4)
        if got != expected:
            self.fail(f"bad magic {got!r}, expected {expected!r}", at=self.pos - 4)
        version = self.unpack("H")
        if version != VERSION:
            self.fail(f"unsupported version {version}", at=self.pos - 2)

    def done(self):
        if self.pos != len(self.data):
            self.fail(f"{len(self.data) - self.pos} trailing bytes")


# -- frame datasets ---------------------------------------------------------


def _flags(ds: FrameDataset) -> int:
    return sum(bit for name, bit in _LABEL_FIELDS if getattr(ds, name) is not None)


def _record_dtype(d_x: int, d_c: int, flags: int) -> np.dtype:
    fields = [("x", "<f4", (d_x,)), ("c", "<f4", (d_c,))]
    fields += [(name, "<u4") for name, bit in _LABEL_FIELDS if flags & bit]
    return np.dtype(fields)


def dataset_to_bytes(ds: FrameDataset) -> bytes:
    flags = _flags(ds)
    head = DATASET_MAGIC + struct.pack("<HHIIQ", VERSION, flags, ds.d_x, ds.d_c, ds.n)
    rec = np.zeros(ds.n, dtype=_record_dtype(ds.d_x, ds.d_c, flags))
    rec["x"] = ds.x
    rec["c"] = ds.c
    for name, bit in _LABEL_FIELDS:
        if flags & bit:
            rec[name] = getattr(ds, name)
    return head + rec.tobytes()


def dataset_from_bytes(data: bytes) -> FrameDataset:
    r = _Reader(data, "dataset")
    r.magic(DATASET_MAGIC)
    flags, d_x, d_c, n = r.unpack("HIIQ")
    if flags & ~7:
        r.fail(f"unknown flag bits {flags:#x}", at=6)
    dt = _record_dtype(d_x, d_c, flags)
    start = r.pos
    need = dt.itemsize * n
    if len(data) - start < need:
        full = (len(data) - start) // dt.itemsize
        r.fail(f"truncated after {full} of {n} records", at=start + full * dt.itemsize)
    rec = np.frombuffer(r.take(need), dtype=dt)
    for col in ("x", "c"):
        vals = rec[col]
        bad = ~np.isfinite(vals)
        if bad.any():
            row = int(np.flatnonzero(bad.any(1))[0])
            r.fail(f"non-finite {col} in record {row}", at=start + row * dt.itemsize)
    r.done()
    labels = {name: rec[name].astype(np.int64) for name, bit in _LABEL_FIELDS if flags & bit}
    return FrameDataset(rec["x"].astype(np.float64), rec["c"].astype(np.float64), **labels)


def csv_header(ds: FrameDataset) -> list[str]:
    cols = [f"x{i}" for i in range(ds.d_x)] + [f"c{i}" for i in range(ds.d_c)]
    return cols + [n for n in ("cond_id", "true_s", "proxy_s") if getattr(ds, n) is not None]


def dataset_to_csv(ds: FrameDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(ds))
    x = ds.x.astype(np.float32)
    c = ds.c.astype(np.float32)
    labels = [getattr(ds, n) for n in ("cond_id", "true_s", "proxy_s") if getattr(ds, n) is not None]
    for i in range(ds.n):
        row = [f"{v:.9g}" for v in x[i]] + [f"{v:.9g}" for v in c[i]]
        row += [str(int(lab[i])) for lab in labels]
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, d_x: int | None = None, d_c: int | None = None) -> FrameDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise IngestionError("csv: empty file (row 0)")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    ccols = [i for i, h in enumerate(header) if h.startswith("c") and h[1:].isdigit()]
    if d_x is not None and len(xcols) != d_x:
        raise IngestionError(f"csv: header has {len(xcols)} x columns, expected {d_x} (row 0)")
    if d_c is not None and len(ccols) != d_c:
        raise IngestionError(f"csv: header has {len(ccols)} c columns, expected {d_c} (row 0)")
    lab_cols = {n: header.index(n) for n in ("cond_id", "true_s", "proxy_s") if n in header}
    known = set(xcols) | set(ccols) | set(lab_cols.values())
    if len(known) != len(header):
        extra = [h for i, h in enumerate(header) if i not in known]
        raise IngestionError(f"csv: unknown columns {extra} (row 0)")
    body = rows[1:]
    x = np.empty((len(body), len(xcols)))
    c = np.empty((len(body), len(ccols)))
    labels = {n: np.empty(len(body), dtype=np.int64) for n in lab_cols}
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise IngestionError(f"csv: row {r} has {len(row)} cells, expected {len(header)}")
        try:
            x[r - 1] = [float(row[i]) for i in xcols]
            c[r - 1] = [float(row[i]) for i in ccols]
            for n, i in lab_cols.items():
                labels[n][r - 1] = int(row[i])
        except ValueError as exc:
            raise IngestionError(f"csv: unparseable value in row {r}: {exc}") from None
        if not (np.all(np.isfinite(x[r - 1])) and np.all(np.isfinite(c[r - 1]))):
            raise IngestionError(f"csv: non-finite value in row {r}")
        if any(labels[n][r - 1] < 0 for n in lab_cols):
            raise IngestionError(f"csv: negative label in row {r}")
    # same precision as the binary records
    return FrameDataset(x.astype(np.float32).astype(np.float64), c.astype(np.float32).astype(np.float64), **labels)


# -- networks and models ----------------------------------------------------


def net_to_bytes(net: DenseNet) -> bytes:
    dims = net.layer_dims
    out = [NET_MAGIC, struct.pack("<HHI", VERSION, ACTIVATION_CODES[net.activation], len(dims))]
    out.append(np.asarray(dims, dtype="<u4").tobytes())
    for w, b in zip(net.weights, net.biases):
        out.append(w.astype("<f4").tobytes())
        out.append(b.astype("<f4").tobytes())
    return b"".join(out)


def _read_net(r: _Reader) -> DenseNet:
    r.magic(NET_MAGIC)
    code, count = r.unpack("HI")
    if code not in _ACTIVATION_NAMES:
        r.fail(f"unknown activation code {code}", at=r.pos - 6)
    if count < 2:
        r.fail(f"layer_count {count} < 2", at=r.pos - 4)
    dims = [int(d) for d in np.frombuffer(r.take(4 * count), dtype="<u4")]
    ws, bs = [], []
    for i in range(count - 1):
        ws.append(r.array("<f4", dims[i + 1] * dims[i]).reshape(dims[i + 1], dims[i]))
        bs.append(r.array("<f4", dims[i + 1]))
    return DenseNet(dims, ws, bs, _ACTIVATION_NAMES[code])


def net_from_bytes(data: bytes) -> DenseNet:
    r = _Reader(data, "network")
    net = _read_net(r)
    r.done()
    return net


def model_to_bytes(model: IcaeModel) -> bytes:
    head = MODEL_MAGIC + struct.pack(
        "<HIIdd", VERSION, model.d_latent, model.k, model.label_scale.offset, model.label_scale.scale
    )
    return head + net_to_bytes(model.encoder) + net_to_bytes(model.decoder)


def model_from_bytes(data: bytes) -> IcaeModel:
    r = _Reader(data, "model")
    r.magic(MODEL_MAGIC)
    d_latent, k, offset, scale = r.unpack("IIdd")
    enc = _read_net(r)
    dec = _read_net(r)
    r.done()
    if enc.d_out != d_latent:
        raise IngestionError(f"model: header d_latent {d_latent} != encoder width {enc.d_out}")
    return IcaeModel(enc, dec, LabelScale(offset, scale), k)


def units_to_bytes(model: UnitModel) -> bytes:
    head = UNITS_MAGIC + struct.pack("<HIII", VERSION, model.k, model.d_x, model.ref_cond)
    return head + model.centroids.astype("<f4").tobytes() + model.prior_hist.astype("<f8").tobytes()


def units_from_bytes(data: bytes) -> UnitModel:
    r = _Reader(data, "units")
    r.magic(UNITS_MAGIC)
    k, d_x, ref = r.unpack("III")
    cent = r.array("<f4", k * d_x).reshape(k, d_x)
    prior = r.array("<f8", k)
    r.done()
    return UnitModel(cent, ref, prior)


# -- file helpers -----------------------------------------------------------

_WRITERS = {
    FrameDataset: dataset_to_bytes,
    DenseNet: net_to_bytes,
    IcaeModel: model_to_bytes,
    UnitModel: units_to_bytes,
}


def save(path, obj) -> Path:
    path = Path(path)
    path.write_bytes(_WRITERS[type(obj)](obj))
    return path


def load_dataset(path) -> FrameDataset:
    return dataset_from_bytes(Path(path).read_bytes())


def load_model(path) -> IcaeModel:
    return model_from_bytes(Path(path).read_bytes())


def load_units(path) -> UnitModel:
    return units_from_bytes(Path(path).read_bytes())


def ingest_external(path, d_x: int | None = None, d_c: int | None = None, fmt: str = "auto") -> FrameDataset:
    """Load frames produced elsewhere, from the binary format or CSV."""
    path = Path(path)
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "binary"
    if fmt == "csv":
        return dataset_from_csv(path.read_text(encoding="utf-8"), d_x, d_c)
    if fmt != "binary":
        raise IngestionError(f"unknown format {fmt!r}")
    ds = dataset_from_bytes(path.read_bytes())
    if d_x is not None and ds.d_x != d_x:
        raise IngestionError(f"dataset: d_x is {ds.d_x}, expected {d_x} at byte offset 8")
    if d_c is not None and ds.d_c != d_c:
        raise IngestionError(f"dataset: d_c is {ds.d_c}, expected {d_c} at byte offset 12")
    return ds
