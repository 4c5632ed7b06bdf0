"""Campaign execution: sweep expansion, trace persistence, analysis and records."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import scipy

from .. import __version__
from .. import analyze as an
from ..evolve import TimeTrace, run_realization
from ..model import ModelTemplate, Protocol
from ..seeding import derive_seed
from .manifest import TWO_PI, Manifest

log = logging.getLogger("dtcsim")

OUT_ENV = "DTCSIM_OUT"


class ResourceCapError(RuntimeError):
    pass


class MissingTracesError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# sweep expansion

@dataclass(frozen=True)
class Task:
    index: tuple  # (ie, iT, iN, ia, r)
    template: ModelTemplate
    seed: int
    cycles: int
    observable: Optional[str]
    initial: str
    method: str

    def describe(self) -> dict:
        t = self.template
        return {
            "index": list(self.index),
            "protocol": t.protocol.value,
            "n": t.n,
            "epsilon": t.epsilon,
            "jt": t.jt,
            "period": t.period,
            "alpha": t.alpha,
            "density": t.density,
            "j0": t.j0,
            "disorder_sigma": t.disorder_sigma,
            "seed": self.seed,
            "cycles": self.cycles,
            "observable": self.observable,
            "initial": self.initial,
            "method": self.method,
        }

    def key(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:20]


def expand_tasks(manifest: Manifest) -> list[Task]:
    m = manifest.model
    scale = TWO_PI if m.units == "MHz" else 1.0
    tasks = []
    for (ie, eps), (it, tval), (i_n, n), (ia, alpha) in product(
            enumerate(m.epsilon), enumerate(m.t_grid), enumerate(m.n), enumerate(m.alpha)):
        if m.protocol is Protocol.TOY:
            tpl = ModelTemplate(m.protocol, n, eps, jt=tval, alpha=alpha)
        else:
            tpl = ModelTemplate(m.protocol, n, eps, period=tval, alpha=alpha, density=m.density,
                                j0=m.j0 * scale, disorder_sigma=m.disorder_sigma * scale)
        for r in range(m.realizations):
            seed = derive_seed(manifest.seed, ie, it, i_n, ia, r)
            tasks.append(Task((ie, it, i_n, ia, r), tpl, seed, m.cycles, m.observable, m.initial, m.method))
    return tasks


def check_resources(manifest: Manifest):
    m = manifest.model
    big = max(m.n)
    if big > manifest.max_sites:
        raise ResourceCapError(f"n={big} exceeds the configured limit of {manifest.max_sites} sites "
                               f"for {m.protocol.value}")


# --------------------------------------------------------------------------
# persistence

def output_dir(manifest: Manifest, override: Optional[str] = None) -> Path:
    if override:
        return Path(override)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if manifest.output:
        return Path(manifest.output)
    return Path("dtcsim_out") / manifest.campaign


def _payload_bytes(values: np.ndarray, fmt: str) -> bytes:
    if fmt == "npy":
        buf = io.BytesIO()
        np.save(buf, np.asarray(values, dtype=np.float64), allow_pickle=False)
        return buf.getvalue()
    lines = ["cycle,value"] + [f"{k},{v!r}" for k, v in enumerate(map(float, values))]
    return ("\n".join(lines) + "\n").encode()


def read_payload(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["value"]) for r in rows])


def _write_atomic(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n").encode()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


class TraceStore:
    """Per-task trace files plus an append-only index, written by one process."""

    def __init__(self, root: Path, fmt: str = "npy"):
        self.root = Path(root)
        self.fmt = fmt
        self.trace_dir = self.root / "traces"
        self.index_path = self.root / "index.jsonl"

    def paths(self, task: Task) -> tuple[Path, Path]:
        key = task.key()
        return self.trace_dir / f"{key}.{self.fmt}", self.trace_dir / f"{key}.json"

    def completed(self, task: Task) -> Optional[dict]:
        """Sidecar of a finished task whose payload hash still matches."""
        payload, sidecar = self.paths(task)
        if not (payload.exists() and sidecar.exists()):
            return None
        try:
            meta = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError):
            return None
        if meta.get("sha256") != hashlib.sha256(payload.read_bytes()).hexdigest():
            return None
        return meta

    def write(self, task: Task, trace: TimeTrace) -> dict:
        self.trace_dir.mkdir(parents=True, exist_ok=True)
        payload, sidecar = self.paths(task)
        data = _payload_bytes(trace.values, self.fmt)
        _write_atomic(payload, data)
        meta = {
            "key": task.key(),
            "file": payload.name,
            "format": self.fmt,
            "sha256": hashlib.sha256(data).hexdigest(),
            "task": task.describe(),
            "trace": {k: v for k, v in trace.to_dict().items() if k != "values"},
        }
        _write_atomic(sidecar, _json_bytes(meta))
        return meta

    def reset_index(self):
        self.root.mkdir(parents=True, exist_ok=True)
        _write_atomic(self.index_path, b"")

    def indexed_keys(self) -> set:
        if not self.index_path.exists():
            return set()
        keys = set()
        for line in self.index_path.read_text().splitlines():
            try:
                keys.add(json.loads(line)["key"])
            except (json.JSONDecodeError, KeyError):
                continue  # torn final line from an interrupted run
        return keys

    def append_index(self, meta: dict):
        entry = {"key": meta["key"], "file": meta["file"], "sha256": meta["sha256"], "index": meta["task"]["index"]}
        with open(self.index_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def load(self, task: Task) -> TimeTrace:
        meta = self.completed(task)
        if meta is None:
            raise MissingTracesError(f"trace for task {task.index} missing or corrupt")
        values = read_payload(self.paths(task)[0])
        t = meta["trace"]
        return TimeTrace(t["protocol"], t["epsilon"], t["period"], t["seed"], t["observable"], values, t["meta"])


def _simulate_one(task: Task) -> TimeTrace:
    return run_realization(task.template, task.seed, task.cycles, task.observable, task.initial, task.method)


def _repair_index(store: TraceStore):
    """Drop a torn trailing line so later appends stay line-aligned."""
    if not store.index_path.exists():
        return
    text = store.index_path.read_text()
    if text and not text.endswith("\n"):
        _write_atomic(store.index_path, text[: text.rfind("\n") + 1].encode())


def simulate(manifest: Manifest, out: Path, workers: int = 1, resume: bool = False,
             stop_after: Optional[int] = None) -> dict:
    """Run every pending task; ``stop_after`` interrupts after that many new traces (testing aid)."""
    check_resources(manifest)
    store = TraceStore(out, manifest.storage_format)
    tasks = expand_tasks(manifest)
    t0 = time.perf_counter()
    if resume:
        _repair_index(store)
        indexed = store.indexed_keys()
    else:
        store.reset_index()
        indexed = set()
    pending, reused = [], 0
    for task in tasks:
        meta = store.completed(task) if resume else None
        if meta is not None:
            reused += 1
            if meta["key"] not in indexed:
                store.append_index(meta)
        else:
            pending.append(task)
    if stop_after is not None:
        pending = pending[:stop_after]

    def results() -> Iterator[TimeTrace]:
        if workers <= 1 or len(pending) <= 1:
            for task in pending:
                yield _simulate_one(task)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                yield from pool.map(_simulate_one, pending, chunksize=max(1, len(pending) // (8 * workers)))

    computed = 0
    for task, trace in zip(pending, results()):
        store.append_index(store.write(task, trace))
        computed += 1
    elapsed = time.perf_counter() - t0
    complete = all(store.completed(t) is not None for t in tasks) if stop_after is not None else True
    _write_atomic(out / "manifest.json", _json_bytes({"hash": manifest.hash(), "manifest": manifest.raw}))
    record = {"tasks": len(tasks), "computed": computed, "reused": reused, "complete": complete}
    _write_atomic(out / "timing.json", _json_bytes({"simulate_seconds": elapsed, **record}))
    return record


# --------------------------------------------------------------------------
# analysis

def _group_traces(manifest: Manifest, store: TraceStore) -> dict:
    """``(ie, iT, iN, ia) -> [TimeTrace, ...]`` in realization order."""
    groups: dict = {}
    missing = []
    for task in expand_tasks(manifest):
        try:
            trace = store.load(task)
        except MissingTracesError:
            missing.append(task.index)
            continue
        groups.setdefault(task.index[:4], []).append(trace)
    if missing:
        raise MissingTracesError(f"{len(missing)} traces missing (first: {missing[0]}); run simulate first")
    return groups


def _mean_trace(traces: list) -> np.ndarray:
    return np.mean([t.values for t in traces], axis=0)


def _point(manifest: Manifest, gkey) -> dict:
    m = manifest.model
    ie, it, i_n, ia = gkey
    tname = "jt" if m.protocol is Protocol.TOY else "period"
    return {"epsilon": m.epsilon[ie], tname: m.t_grid[it], "n": m.n[i_n], "alpha": m.alpha[ia]}


class AnalysisRunner:
    def __init__(self, manifest: Manifest, groups: dict):
        self.m = manifest
        self.groups = groups
        self.order = manifest.model.protocol.order
        self._cache: dict = {}

    def _trace_rates(self, gkey, min_cycle) -> list:
        ck = ("rates", gkey, min_cycle)
        if ck not in self._cache:
            self._cache[ck] = [an.trace_decay_rate(t, self.order, min_cycle) for t in self.groups[gkey]]
        return self._cache[ck]

    def _series(self, gkey, window):
        ck = ("series", gkey, window)
        if ck not in self._cache:
            self._cache[ck] = an.peak_height_series(_mean_trace(self.groups[gkey]), self.order, window)
        return self._cache[ck]

    def _late_rate(self, gkey, window) -> an.DecayRate:
        # peak heights are powers: halve to the amplitude decay rate
        d = an.late_time_decay_rate(self._series(gkey, window))
        return an.DecayRate(d.rate / 2, d.error / 2, [r / 2 for r in d.rates], [e / 2 for e in d.errors],
                            d.floor, d.flags)

    def _stretched(self, gkey, window):
        ck = ("stretched", gkey, window)
        if ck not in self._cache:
            self._cache[ck] = an.fit_stretched_exponential(self._series(gkey, window))
        return self._cache[ck]

    def _lines(self, keys=None):
        """Grid points grouped by everything except epsilon: ``(iT, iN, ia) -> [gkey by ie]``."""
        lines: dict = {}
        for g in sorted(keys or self.groups):
            lines.setdefault(g[1:], []).append(g)
        return lines

    # each method returns table rows
    def trace_rate(self, p):
        rows = []
        for g in sorted(self.groups):
            for r, (t, rate) in enumerate(zip(self.groups[g], self._trace_rates(g, p["min_cycle"]))):
                rows.append({**_point(self.m, g), "realization": r, "seed": t.seed, "rate": rate})
        return rows

    def rate_histogram(self, p):
        rows = []
        for g in sorted(self.groups):
            h = an.rate_histogram(self._trace_rates(g, p["min_cycle"]))
            rows.append({**_point(self.m, g), "mode": h.mode, "spread": h.spread, "sigma_left": h.sigma_left,
                         "sigma_right": h.sigma_right, "fallback": h.fallback,
                         "edges": h.edges.tolist(), "counts": h.counts.tolist()})
        return rows

    def _fractions(self, p) -> dict:
        out = {}
        for g in sorted(self.groups):
            s = an.spectrum(_mean_trace(self.groups[g]), p["start"], p["length"])
            out[g] = an.crystalline_fraction(s, self.order, p["exclude_dc"])
        return out

    def crystalline_fraction(self, p):
        return [{**_point(self.m, g), "f": f} for g, f in self._fractions(p).items()]

    def phase_boundary(self, p):
        fr = self._fractions(p)
        rows = []
        for line, keys in self._lines().items():
            eps = [self.m.model.epsilon[g[0]] for g in keys]
            fit = an.fit_super_gaussian(eps, [fr[g] for g in keys])
            b, ci = an.boundary_from_fit(fit, p["threshold"])
            pt = _point(self.m, keys[0])
            pt.pop("epsilon")
            rows.append({**pt, "epsilon_boundary": b, "ci95": list(ci) if ci else None, "present": b is not None,
                         **{k: v for k, v in fit.params.items()}})
        return rows

    def peak_heights(self, p):
        rows = []
        for g in sorted(self.groups):
            s = self._series(g, p["window"])
            rows.append({**_point(self.m, g), "n_sweep": s.n_sweep.tolist(), "heights": s.heights.tolist()})
        return rows

    def late_time_rate(self, p):
        rows = []
        for g in sorted(self.groups):
            d = self._late_rate(g, p["window"])
            rows.append({**_point(self.m, g), "rate": d.rate, "error": d.error})
        return rows

    def stretched_exponential(self, p):
        rows = []
        for g in sorted(self.groups):
            f = self._stretched(g, p["window"])
            rows.append({**_point(self.m, g), **f.params, **{f"{k}_stderr": v for k, v in f.stderr.items()}})
        return rows

    def saturation(self, p):
        # beta averaged over epsilon for each (T, n, alpha), then fitted across T
        rows = []
        by_na: dict = {}
        for g in sorted(self.groups):
            by_na.setdefault((g[2], g[3]), {}).setdefault(g[1], []).append(g)
        for (i_n, ia), per_t in by_na.items():
            ts, betas, errs = [], [], []
            for it in sorted(per_t):
                bbar, berr = an.mean_beta([self._stretched(g, p["window"]) for g in per_t[it]])
                ts.append(self.m.model.t_grid[it])
                betas.append(bbar)
                errs.append(berr)
            sat = an.fit_saturation(ts, betas, p["level"])
            rows.append({"n": self.m.model.n[i_n], "alpha": self.m.model.alpha[ia], "T": ts, "beta_mean": betas,
                         "beta_error": errs, "t_star": sat.t_star, "t_star_error": sat.error, "present": sat.present,
                         **sat.fit.params})
        return rows

    def quadratic_rate(self, p):
        rows = []
        for line, keys in self._lines().items():
            eps, rates = [], []
            for g in keys:
                eps.append(self.m.model.epsilon[g[0]])
                rates.append(self._rate_for(g, p))
            q = an.fit_quadratic_rate(eps, rates)
            pt = _point(self.m, keys[0])
            pt.pop("epsilon")
            rows.append({**pt, "epsilon": eps, "rate": rates, "gamma0": q.params["gamma0"], "a": q.params["a"],
                         "gamma0_stderr": q.stderr["gamma0"], "a_stderr": q.stderr["a"]})
        return rows

    def _rate_for(self, g, p) -> float:
        src = p["source"]
        if src == "auto":
            src = "histogram" if len(self.groups[g]) >= an.fitting.MIN_HISTOGRAM_RATES else (
                "median" if len(self.groups[g]) > 1 else "late_time")
        if src == "histogram":
            return an.rate_histogram(self._trace_rates(g, p["min_cycle"])).mode
        if src == "median":
            return float(np.median(self._trace_rates(g, p["min_cycle"])))
        return self._late_rate(g, p["window"]).rate


def _write_table(path: Path, rows: list):
    scalar_cols = []
    for r in rows:
        for k, v in r.items():
            if k not in scalar_cols and not isinstance(v, (list, dict)):
                scalar_cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(scalar_cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in scalar_cols])
    _write_atomic(path.with_suffix(".csv"), buf.getvalue().encode())
    _write_atomic(path.with_suffix(".json"), _json_bytes(rows))


def analyze(manifest: Manifest, out: Path) -> dict:
    """Run the analysis plan; returns the deterministic run record.

    A failing item is recorded with its error and the remaining items still run.
    """
    store = TraceStore(out, manifest.storage_format)
    t0 = time.perf_counter()
    groups = _group_traces(manifest, store)
    runner = AnalysisRunner(manifest, groups)
    adir = out / "analysis"
    adir.mkdir(parents=True, exist_ok=True)
    results = []
    for k, item in enumerate(manifest.analysis):
        name = f"{k:02d}_{item.name}"
        try:
            rows = getattr(runner, item.name)(item.params)
        except (an.AnalysisError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("analysis %s failed: %s", item.name, exc)
            results.append({"name": item.name, "ok": False, "error": str(exc), "line": item.line})
            continue
        _write_table(adir / name, rows)
        digest = hashlib.sha256((adir / f"{name}.json").read_bytes()).hexdigest()
        results.append({"name": item.name, "ok": True, "file": f"analysis/{name}.json", "rows": len(rows),
                        "sha256": digest})
    index = [json.loads(line) for line in store.index_path.read_text().splitlines() if line.strip()]
    record = {
        "campaign": manifest.campaign,
        "manifest_hash": manifest.hash(),
        "seed": manifest.seed,
        "traces": [{"file": f"traces/{e['file']}", "sha256": e["sha256"], "index": e["index"]}
                   for e in sorted(index, key=lambda e: e["index"])],
        "analysis": results,
        "versions": {"dtcsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    _write_atomic(out / "record.json", _json_bytes(record))
    timing_path = out / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}
    timing["analyze_seconds"] = time.perf_counter() - t0
    _write_atomic(timing_path, _json_bytes(timing))
    return record
