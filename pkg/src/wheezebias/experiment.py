"""End-to-end experiment: prepare events and features, train, audit.

Everything is driven by one INI-style config file. Outputs under
``output_dir``::

    effective_config.ini
    prepare.json                      counts per mode/split/class
    events_<mode>.csv                 annotated wheezes + generated events
    features_<mode>_<split>.csv       235 features + label + duration
    spectrograms_<mode>_<split>.npy   only when the CNN is requested
    runs/<mode>/<family>/search.json
    runs/<mode>/<family>/runNN.model  (+ runNN.json sidecar)
    runs/<mode>/<family>/runNN.metrics.json
    report/                           report.json, tables, histograms

Rows of the feature files follow the row order of the events file
restricted to that split.
"""

from __future__ import annotations

import configparser
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import WHEEZE, load_corpus, slice_event
from .errors import ArgumentError, RangeError, WheezeBiasError
from .evaluation import (
    FN_SHORT_MARK,
    MetricsReport,
    bias_report,
    confusion_from_predictions,
    fn_duration_histogram,
    fraction_below,
    metrics,
    write_report,
)
from .eventgen import FD, MODES, VD, GenerationConfig, events_to_csv, generate_events, stable_hash
from .features import extract_event_features, read_feature_csv, write_feature_csv
from .fileio import atomic_path, atomic_write_bytes, atomic_write_json, atomic_write_text
from .models import CNN, FAMILIES, LOGISTIC, TrainConfig, hyper_search, save_model, train, train_logistic

log = logging.getLogger(__name__)

SPLITS = ("train", "test")

DEFAULT_CONFIG_TEXT = """\
[data]
# directory holding <id>.wav and <id>.txt files
data_dir = data
# lines of "<id> train|test"
split_manifest = data/split.txt

[experiment]
modes = FD, VD
families = logistic, lda, svmlin, svmrbf, boost, cnn
base_seed = 0
n_runs = 10
search_budget = 30
output_dir = out

[eventgen]
fd_duration = 0.150
vd_min = 0.100
vd_max = 2.0
spacing_window = 5.0

[cnn]
max_epochs = 15
batch_size = 128
learning_rate = 0.001
micro_batch = 32

[report]
baseline = logistic
alpha = 0.01
"""


@dataclass
class ExperimentConfig:
    data_dir: Path
    split_manifest: Path
    output_dir: Path
    modes: tuple = (FD, VD)
    families: tuple = FAMILIES
    base_seed: int = 0
    n_runs: int = 10
    search_budget: int = 30
    eventgen: dict = field(default_factory=dict)
    cnn: dict = field(default_factory=dict)
    baseline: str = LOGISTIC
    alpha: float = 0.01

    def __post_init__(self):
        self.modes = tuple(m.upper() for m in self.modes)
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ArgumentError(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ArgumentError(f"unknown model families {bad}; choose from {FAMILIES}")
        if self.n_runs < 1:
            raise ArgumentError("n_runs must be >= 1")
        if self.search_budget < 1:
            raise ArgumentError("search_budget must be >= 1")
        GenerationConfig(**self.eventgen)
        self.cnn_config(0)

    def generation_config(self, mode: str) -> GenerationConfig:
        return GenerationConfig(mode=mode, base_seed=self.base_seed, **self.eventgen)

    def cnn_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.cnn)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["data"] = {"data_dir": str(self.data_dir), "split_manifest": str(self.split_manifest)}
        cp["experiment"] = {
            "modes": ", ".join(self.modes), "families": ", ".join(self.families),
            "base_seed": str(self.base_seed), "n_runs": str(self.n_runs),
            "search_budget": str(self.search_budget), "output_dir": str(self.output_dir),
        }
        gen = GenerationConfig(**self.eventgen)
        cp["eventgen"] = {k: repr(getattr(gen, k)) for k in _EVENTGEN_KEYS}
        tc = self.cnn_config(0)
        cp["cnn"] = {k: repr(getattr(tc, k)) for k in _CNN_KEYS}
        cp["report"] = {"baseline": self.baseline, "alpha": repr(self.alpha)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_EVENTGEN_KEYS = ("fd_duration", "vd_min", "vd_max", "spacing_window")
_CNN_KEYS = ("max_epochs", "batch_size", "learning_rate", "micro_batch")
_KNOWN = {
    "data": {"data_dir", "split_manifest"},
    "experiment": {"modes", "families", "base_seed", "n_runs", "search_budget", "output_dir"},
    "eventgen": set(_EVENTGEN_KEYS),
    "cnn": set(_CNN_KEYS),
    "report": {"baseline", "alpha"},
}


def _split_list(text):
    return tuple(s.strip() for s in text.replace(";", ",").split(",") if s.strip())


def load_config(path=None, text: str | None = None, **overrides) -> ExperimentConfig:
    """Parse a config file over the documented defaults.

    Relative paths resolve against the config file's directory. Keyword
    overrides (``modes``, ``families``, ``base_seed``, ``output_dir``, ...)
    take precedence over the file.
    """
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG_TEXT)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text()
        base = path.resolve().parent
    if text is not None:
        user = configparser.ConfigParser()
        user.read_string(text)
        for section in user.sections():
            if section not in _KNOWN:
                raise ArgumentError(f"unknown config section [{section}]")
            unknown = set(user[section]) - _KNOWN[section]
            if unknown:
                raise ArgumentError(f"unknown keys in [{section}]: {sorted(unknown)}")
            for key, value in user[section].items():
                cp[section][key] = value

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        ex = cp["experiment"]
        kwargs = dict(
            data_dir=resolve(cp["data"]["data_dir"]),
            split_manifest=resolve(cp["data"]["split_manifest"]),
            output_dir=resolve(ex["output_dir"]),
            modes=_split_list(ex["modes"]),
            families=_split_list(ex["families"]),
            base_seed=ex.getint("base_seed"),
            n_runs=ex.getint("n_runs"),
            search_budget=ex.getint("search_budget"),
            eventgen={k: cp["eventgen"].getfloat(k) for k in _EVENTGEN_KEYS},
            cnn={"max_epochs": cp["cnn"].getint("max_epochs"),
                 "batch_size": cp["cnn"].getint("batch_size"),
                 "learning_rate": cp["cnn"].getfloat("learning_rate"),
                 "micro_batch": (None if cp["cnn"]["micro_batch"].strip().lower() in ("none", "0", "")
                                 else cp["cnn"].getint("micro_batch"))},
            baseline=cp["report"]["baseline"],
            alpha=cp["report"].getfloat("alpha"),
        )
    except ValueError as exc:
        raise ArgumentError(f"bad config value: {exc}") from None
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in kwargs:
            raise ArgumentError(f"unknown override {key!r}")
        kwargs[key] = Path(value) if key in ("output_dir", "data_dir", "split_manifest") else value
    return ExperimentConfig(**kwargs)


def write_effective_config(cfg: ExperimentConfig):
    atomic_write_text(cfg.output_dir / "effective_config.ini", cfg.to_ini())


def run_seed(base_seed: int, family: str, run_index: int, mode: str) -> int:
    """Seed ladder: one independent 32-bit seed per (family, run, mode)."""
    ss = np.random.SeedSequence([base_seed, stable_hash(family), run_index, stable_hash(mode)])
    return int(ss.generate_state(1)[0])


# -- prepare ----------------------------------------------------------------

def _label(ev):
    return 1 if ev.label == WHEEZE else 0


def cmd_prepare(cfg: ExperimentConfig) -> dict:
    """Generate events and extract features for every configured mode.

    Missing corpus files abort the command before anything is written.
    Wheeze rows are computed once and shared by all modes.
    """
    entries = load_corpus(cfg.data_dir, cfg.split_manifest)
    want_spec = CNN in cfg.families
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg)

    cache = {}  # (rec id, start, end, label) -> (features, spectrogram)
    per_mode = {m: [] for m in cfg.modes}  # list of (entry split, event)
    skipped = []
    recordings = {}
    for entry in entries:
        rec = entry.load()
        wheezes = entry.wheezes(rec.duration)
        recordings[entry.id] = rec
        for mode in cfg.modes:
            generated = generate_events(entry.id, rec.duration, wheezes, cfg.generation_config(mode))
            for ev in sorted(wheezes + generated, key=lambda e: (e.start, e.end, e.label)):
                key = (ev.recording_id, ev.start, ev.end, ev.label)
                if key not in cache:
                    try:
                        samples = slice_event(rec, ev)
                    except RangeError as exc:
                        log.warning("skipping event: %s", exc)
                        skipped.append({"recording_id": ev.recording_id, "start": ev.start,
                                        "end": ev.end, "reason": str(exc)})
                        cache[key] = None
                        continue
                    vec = extract_event_features(samples, ev.label)
                    spec = dsp.event_spectrogram(samples).astype(np.float32) if want_spec else None
                    cache[key] = (vec, spec)
                if cache[key] is not None:
                    per_mode[mode].append((entry.split, ev, key))

    summary = {"n_recordings": len(entries), "skipped_events": skipped, "modes": {}}
    for mode in cfg.modes:
        rows = per_mode[mode]
        atomic_write_text(cfg.output_dir / f"events_{mode.lower()}.csv",
                          events_to_csv([ev for _, ev, _ in rows], mode, cfg.base_seed))
        counts = {}
        for part in SPLITS:
            sel = [key for split, _, key in rows if split == part]
            vectors = [cache[k][0] for k in sel]
            with atomic_path(cfg.output_dir / f"features_{mode.lower()}_{part}.csv") as tmp:
                write_feature_csv(tmp, vectors)
            if want_spec:
                stack = np.stack([cache[k][1] for k in sel]) if sel else np.zeros((0, dsp.N_BINS, dsp.N_FRAMES), np.float32)
                buf = io.BytesIO()
                np.save(buf, stack)
                atomic_write_bytes(cfg.output_dir / f"spectrograms_{mode.lower()}_{part}.npy", buf.getvalue())
            n_w = sum(1 for v in vectors if v.label == WHEEZE)
            counts[part] = {"wheeze": n_w, "random": len(vectors) - n_w}
        total = sum(c["wheeze"] + c["random"] for c in counts.values())
        wheeze = sum(c["wheeze"] for c in counts.values())
        summary["modes"][mode] = {"counts": counts, "total": total,
                                  "wheeze_fraction": wheeze / total if total else 0.0}
    atomic_write_json(cfg.output_dir / "prepare.json", summary)
    return summary


# -- run --------------------------------------------------------------------

@dataclass
class ModeData:
    X_train: np.ndarray
    y_train: np.ndarray
    d_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    d_test: np.ndarray


def load_mode_data(cfg: ExperimentConfig, mode: str, spectrograms: bool = False) -> ModeData:
    parts = {}
    for part in SPLITS:
        path = cfg.output_dir / f"features_{mode.lower()}_{part}.csv"
        if not path.is_file():
            raise ArgumentError(f"{path} missing; run 'prepare' first")
        X, labels, durations, _ = read_feature_csv(path)
        if spectrograms:
            spath = cfg.output_dir / f"spectrograms_{mode.lower()}_{part}.npy"
            if not spath.is_file():
                raise ArgumentError(f"{spath} missing; run 'prepare' with the cnn family enabled")
            X = np.load(spath)
        y = np.array([1 if lab == WHEEZE else 0 for lab in labels], dtype=np.int64)
        parts[part] = (X, y, durations)
    (a, b, c), (d, e, f) = parts["train"], parts["test"]
    return ModeData(a, b, c, d, e, f)


def run_dir(cfg, mode, family) -> Path:
    return cfg.output_dir / "runs" / mode.lower() / family


def run_paths(cfg, mode, family, k):
    d = run_dir(cfg, mode, family)
    return d / f"run{k:02d}.model", d / f"run{k:02d}.metrics.json"


def run_complete(cfg, mode, family, k) -> bool:
    model_path, metrics_path = run_paths(cfg, mode, family, k)
    if not (model_path.is_file() and metrics_path.is_file()):
        return False
    try:
        json.loads(metrics_path.read_text())
    except ValueError:
        return False
    return True


def _search(cfg, mode, family, data: ModeData) -> dict:
    path = run_dir(cfg, mode, family) / "search.json"
    seed = run_seed(cfg.base_seed, family + ":search", 0, mode)
    if path.is_file():
        cached = json.loads(path.read_text())
        if cached.get("budget") == cfg.search_budget and cached.get("seed") == seed:
            return cached["best_params"]
    res = hyper_search(family, data.X_train, data.y_train, budget=cfg.search_budget, seed=seed,
                       cnn_config=cfg.cnn_config(seed))
    atomic_write_json(path, {"family": family, "mode": mode, "budget": cfg.search_budget, "seed": seed,
                             "best_params": res.best_params, "best_mcc": res.best_mcc,
                             "trials": res.trials})
    return res.best_params


def _train_one(task):
    """Worker body: train, evaluate and persist one run."""
    cfg, mode, family, k, params, data = task
    seed = run_seed(cfg.base_seed, family, k, mode)
    model = train(family, data.X_train, data.y_train, params, cfg.cnn_config(seed),
                  data.X_train.shape[1:] if family == CNN else None)
    pred = model.predict(data.X_test)
    conf = confusion_from_predictions(data.y_test, pred)
    rep = metrics(conf)
    fn_idx = np.flatnonzero((data.y_test == 1) & (pred == 0))
    model_path, metrics_path = run_paths(cfg, mode, family, k)
    save_model(model_path, model)
    atomic_write_json(metrics_path, {
        "family": family, "mode": mode, "run": k, "seed": seed, "params": params,
        "confusion": {"tp": conf.tp, "tn": conf.tn, "fp": conf.fp, "fn": conf.fn},
        "metrics": rep.as_dict(),
        "fn_indices": fn_idx.tolist(),
        "fn_durations": [float(x) for x in data.d_test[fn_idx]],
    })
    return rep.mcc


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Search once per (mode, family), then train ``n_runs`` seeded models.

    Completed runs (model + metrics file present) are skipped. A failing
    run or search is recorded and the remaining work continues.
    """
    if jobs < 1:
        raise ArgumentError("jobs must be >= 1")
    write_effective_config(cfg)
    failures, done, skipped = [], [], []
    tasks = []
    for mode in cfg.modes:
        tab = load_mode_data(cfg, mode)
        img = load_mode_data(cfg, mode, spectrograms=True) if CNN in cfg.families else None
        for family in cfg.families:
            data = img if family == CNN else tab
            pending = [k for k in range(cfg.n_runs) if not run_complete(cfg, mode, family, k)]
            skipped += [(mode, family, k) for k in range(cfg.n_runs) if k not in pending]
            if not pending:
                continue
            try:
                params = _search(cfg, mode, family, data)
            except (WheezeBiasError, ValueError) as exc:
                failures.append({"mode": mode, "family": family, "run": None, "stage": "search",
                                 "error": f"{type(exc).__name__}: {exc}"})
                continue
            tasks += [(cfg, mode, family, k, params, data) for k in pending]

    def record(task, outcome):
        _, mode, family, k, _, _ = task
        if isinstance(outcome, BaseException):
            log.error("%s/%s run %d failed: %s", mode, family, k, outcome)
            failures.append({"mode": mode, "family": family, "run": k, "stage": "train",
                             "error": f"{type(outcome).__name__}: {outcome}"})
        else:
            done.append((mode, family, k))

    if jobs == 1:
        for task in tasks:
            try:
                record(task, _train_one(task))
            except Exception as exc:  # isolate the failing run
                record(task, exc)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(task, pool.submit(_train_one, task)) for task in tasks]
            for task, fut in futures:
                try:
                    record(task, fut.result())
                except Exception as exc:
                    record(task, exc)
    summary = {"trained": len(done), "skipped": len(skipped), "failures": failures}
    return summary


# -- audit ------------------------------------------------------------------

def padding_probe_mcc(d_train, y_train, d_test, y_test) -> float:
    """Test MCC of a logistic model that sees only the zero-padding fraction."""
    def feat(d):
        n = np.rint(np.asarray(d) * 4000).astype(np.int64)
        return np.array([[dsp.padding_fraction(int(k))] for k in n])
    model = train_logistic(feat(d_train), y_train)
    return metrics(confusion_from_predictions(y_test, model.predict(feat(d_test)))).mcc


def collect_runs(cfg: ExperimentConfig) -> dict:
    """``{mode: {family: [metrics dict per run]}}``; raises if any run is absent."""
    missing = []
    out = {}
    for mode in (FD, VD):
        out[mode] = {}
        for family in cfg.families:
            rows = []
            for k in range(cfg.n_runs):
                _, path = run_paths(cfg, mode, family, k)
                if not path.is_file():
                    missing.append(f"{mode}/{family}/run{k:02d}")
                    continue
                rows.append(json.loads(path.read_text()))
            out[mode][family] = rows
    if missing:
        absent_modes = [m for m in (FD, VD) if all(not out[m][f] for f in cfg.families)]
        hint = f" (mode(s) {', '.join(absent_modes)} never run)" if absent_modes else ""
        shown = ", ".join(missing[:10]) + (f", ... ({len(missing)} total)" if len(missing) > 10 else "")
        raise ArgumentError(f"missing runs{hint}: {shown}")
    return out


def cmd_audit(cfg: ExperimentConfig) -> dict:
    """Build the bias report from completed run files of both modes."""
    runs = collect_runs(cfg)
    histograms, extras = {}, {"best_runs": {}, "padding_probe_mcc": {}, "fn_fraction_below_0325": {}}
    for mode in (FD, VD):
        data = load_mode_data(cfg, mode)
        wheeze_durations = data.d_test[data.y_test == 1]
        extras["padding_probe_mcc"][mode.lower()] = padding_probe_mcc(
            data.d_train, data.y_train, data.d_test, data.y_test)
        extras["best_runs"][mode.lower()] = {}
        extras["fn_fraction_below_0325"][mode.lower()] = {}
        for family in cfg.families:
            rows = runs[mode][family]
            best = max(range(len(rows)), key=lambda i: (rows[i]["metrics"]["mcc"], -i))
            fn = rows[best]["fn_durations"]
            histograms[f"{mode.lower()}_{family}"] = fn_duration_histogram(fn, wheeze_durations)
            extras["best_runs"][mode.lower()][family] = best
            extras["fn_fraction_below_0325"][mode.lower()][family] = fraction_below(fn, FN_SHORT_MARK)

    def as_reports(mode):
        return {f: [MetricsReport(**{k: v for k, v in r["metrics"].items() if k != "undefined"},
                                  undefined=tuple(r["metrics"].get("undefined", ())))
                    for r in runs[mode][f]]
                for f in cfg.families}

    baseline = cfg.baseline if cfg.baseline in cfg.families else cfg.families[0]
    report = bias_report(as_reports(FD), as_reports(VD), baseline=baseline, alpha=cfg.alpha,
                         histograms=histograms)
    report.extras = extras
    files = write_report(report, cfg.output_dir / "report")
    return {"report_dir": str(cfg.output_dir / "report"), "files": [p.name for p in files],
            "mcc_gap": report.mcc_gap, "padding_probe_mcc": extras["padding_probe_mcc"]}


def cmd_all(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    prep = cmd_prepare(cfg)
    run = cmd_run(cfg, jobs)
    out = {"prepare": prep["modes"], "run": run}
    if run["failures"]:
        return out
    out["audit"] = cmd_audit(cfg)
    return out

