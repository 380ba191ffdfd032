"""Monte Carlo EVM benchmark: scenario config, runner, CSV and SVG output."""

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .channel_db import build_db_from_environment
from .estimation import (
    AMPLITUDE_MODES,
    NO_NOISE,
    SearchParams,
    SearchRegion,
    add_noise,
    estimate_multisink,
    estimate_multisource,
    evm_db,
    multisink_dictionary,
    multisource_dictionary,
)
from .geometry import rectangular_room
from .propagation import (
    STEERING_MODES,
    Transmitter,
    channel_from_sources,
    enumerate_virtual_sources,
    linear_array,
    perimeter_array,
)

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "TrialRecord",
    "ResultRow",
    "ESTIMATORS",
    "CSV_HEADER",
    "EVM_FLOOR_DB",
    "load_config",
    "save_config",
    "scenario_array",
    "run_scenario",
    "aggregate",
    "emit_csv",
    "format_csv",
    "emit_plot",
    "render_svg",
]

ESTIMATORS = ("antenna", "multisink", "multisource")

CSV_HEADER = (
    "scenario,M,spacing_lambda,input_evm_db,estimator,mean_output_evm_db,"
    "median_output_evm_db,std_db,mean_loc_err_m,trials"
)

#: Per-trial output EVM is clamped here before averaging.
EVM_FLOOR_DB = -100.0


class ConfigError(ValueError):
    """Invalid scenario configuration; the message starts with the field name."""


def _default_sweep():
    return [float(x) for x in range(-30, 11, 5)]


@dataclass
class ScenarioConfig:
    room_width_m: float = 6.4
    room_depth_m: float = 6.4
    wavelength_m: float = 0.2
    antenna_spacings_lambda: list = field(default_factory=lambda: [0.5, 2.0, 8.0])
    antenna_placement: str = "perimeter"
    max_order: int = 1
    wall_reflection_coefficient: float = 1.0
    num_sources: int = 5
    input_evm_sweep_db: list = field(default_factory=_default_sweep)
    trials: int = 20
    master_seed: int = 2018
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    amplitude_mode: str = "ls"
    steering_mode: str = "squared"
    ue_margin_m: float = None
    tx_amplitude: list = field(default_factory=lambda: [1.0, 0.0])
    coarse_step_lambda: float = 0.25
    final_step_lambda: float = 0.015625
    zoom_window_cells: int = 2
    step_shrink: float = 2.0
    joint_refit: bool = False
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def margin(self):
        return self.wavelength_m / 2 if self.ue_margin_m is None else self.ue_margin_m

    @property
    def search_params(self):
        return SearchParams.for_wavelength(
            self.wavelength_m,
            self.coarse_step_lambda,
            self.final_step_lambda,
            self.zoom_window_cells,
            self.step_shrink,
        )

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        def real(name, positive=True):
            v = getattr(self, name)
            ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
            need(ok and (v > 0 or not positive), name, f"expected a positive number, got {v!r}")

        def integer(name, minimum):
            v = getattr(self, name)
            ok = isinstance(v, int) and not isinstance(v, bool) and v >= minimum
            need(ok, name, f"expected an integer >= {minimum}, got {v!r}")

        for name in ("room_width_m", "room_depth_m", "wavelength_m", "coarse_step_lambda",
                     "final_step_lambda", "wall_reflection_coefficient"):
            real(name)
        need(self.wall_reflection_coefficient <= 1, "wall_reflection_coefficient",
             "must be in (0, 1]")
        need(self.final_step_lambda <= self.coarse_step_lambda, "final_step_lambda",
             "must not exceed coarse_step_lambda")
        real("step_shrink")
        need(self.step_shrink > 1, "step_shrink", "must be > 1")
        integer("max_order", 0)
        integer("num_sources", 0)
        integer("trials", 1)
        integer("master_seed", 0)
        integer("zoom_window_cells", 1)
        integer("workers", 1)
        need(isinstance(self.joint_refit, bool), "joint_refit", "expected true or false")
        need(isinstance(self.antenna_spacings_lambda, list) and self.antenna_spacings_lambda,
             "antenna_spacings_lambda", "expected a non-empty list")
        for s in self.antenna_spacings_lambda:
            need(isinstance(s, (int, float)) and not isinstance(s, bool) and s > 0,
                 "antenna_spacings_lambda", f"spacing must be positive, got {s!r}")
        need(self.antenna_placement in ("perimeter", "linear"), "antenna_placement",
             f"expected 'perimeter' or 'linear', got {self.antenna_placement!r}")
        need(isinstance(self.input_evm_sweep_db, list) and self.input_evm_sweep_db,
             "input_evm_sweep_db", "expected a non-empty list")
        sweep = []
        for v in self.input_evm_sweep_db:
            if v == "-inf":
                v = NO_NOISE
            need(isinstance(v, (int, float)) and not isinstance(v, bool)
                 and (math.isfinite(v) or v == NO_NOISE),
                 "input_evm_sweep_db", f"expected numbers or '-inf', got {v!r}")
            sweep.append(float(v))
        self.input_evm_sweep_db = sweep
        need(isinstance(self.estimators, list) and self.estimators, "estimators",
             "expected a non-empty list")
        for e in self.estimators:
            need(e in ESTIMATORS, "estimators", f"unknown estimator {e!r}")
        need(self.amplitude_mode in AMPLITUDE_MODES, "amplitude_mode",
             f"expected one of {AMPLITUDE_MODES}")
        need(self.steering_mode in STEERING_MODES, "steering_mode",
             f"expected one of {STEERING_MODES}")
        if self.ue_margin_m is not None:
            real("ue_margin_m")
        need(2 * self.margin < min(self.room_width_m, self.room_depth_m), "ue_margin_m",
             "margin leaves no room for the user")
        amp = self.tx_amplitude
        need(isinstance(amp, list) and len(amp) == 2
             and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in amp)
             and complex(*amp) != 0,
             "tx_amplitude", "expected a non-zero [re, im] pair")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("<root>: expected a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"{key}: unknown field")
        return cls(**doc)

    def to_dict(self):
        d = asdict(self)
        d["input_evm_sweep_db"] = [
            "-inf" if v == NO_NOISE else v for v in self.input_evm_sweep_db
        ]
        return d


def load_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path} ({exc.strerror})") from exc
    return ScenarioConfig.from_dict(doc)


def save_config(cfg, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
        f.write("\n")


@dataclass
class TrialRecord:
    scenario: str
    trial_index: int
    ue_location: np.ndarray
    input_evm_db: float
    output_evm_db: dict
    location_error_m: dict
    wall_clock_ms: float


@dataclass
class ResultRow:
    scenario: str
    M: int
    spacing_lambda: float
    input_evm_db: float
    estimator: str
    mean_output_evm_db: float
    median_output_evm_db: float
    std_db: float
    mean_loc_err_m: float
    trials: int


def scenario_id(cfg, spacing):
    return f"{cfg.antenna_placement}-{spacing:g}lambda"


def scenario_array(cfg, spacing_lambda):
    spacing = spacing_lambda * cfg.wavelength_m
    if cfg.antenna_placement == "perimeter":
        return perimeter_array(cfg.room_width_m, cfg.room_depth_m, spacing)
    return linear_array(cfg.room_width_m, cfg.room_depth_m, spacing)


def noise_seed(master_seed, trial_index, evm_index):
    return int(np.random.SeedSequence([master_seed, trial_index, evm_index]).generate_state(1)[0])


def draw_ue(cfg, trial_index):
    rng = np.random.default_rng(cfg.master_seed + trial_index)
    m = cfg.margin
    x = rng.uniform(m, cfg.room_width_m - m)
    y = rng.uniform(m, cfg.room_depth_m - m)
    return np.array([x, y, 0.0])


class _Scene:
    """Geometry and precomputed search dictionaries for one antenna spacing."""

    def __init__(self, cfg, spacing):
        self.cfg = cfg
        self.id = scenario_id(cfg, spacing)
        self.spacing = spacing
        W, D, lam = cfg.room_width_m, cfg.room_depth_m, cfg.wavelength_m
        self.env = rectangular_room(W, D, cfg.wall_reflection_coefficient)
        self.array = scenario_array(cfg, spacing)
        self.params = cfg.search_params
        self.source_region = SearchRegion(-W, 2 * W, -D, 2 * D)
        self.sink_region = SearchRegion(0.0, W, 0.0, D)
        self.source_dict = self.sink_dict = self.db = None
        if "multisource" in cfg.estimators and cfg.num_sources > 0:
            self.source_dict = multisource_dictionary(
                self.array, self.source_region, self.params, lam, cfg.steering_mode
            )
        if "multisink" in cfg.estimators:
            self.db = build_db_from_environment(self.array, self.env, cfg.max_order, lam)
            self.sink_dict = multisink_dictionary(
                self.db, self.sink_region, self.params, cfg.steering_mode
            )

    def run_trial(self, t):
        cfg = self.cfg
        lam = cfg.wavelength_m
        ue = draw_ue(cfg, t)
        tx = Transmitter(ue, complex(*cfg.tx_amplitude))
        sources = enumerate_virtual_sources(ue, self.env, cfg.max_order)
        h = channel_from_sources(tx, sources, self.array, self.env, lam, cfg.steering_mode)
        records = []
        for k, target in enumerate(cfg.input_evm_sweep_db):
            start = time.perf_counter()
            hb = add_noise(h, target, noise_seed(cfg.master_seed, t, k))
            out, loc = {}, {}
            if "antenna" in cfg.estimators:
                out["antenna"] = evm_db(hb, h)
                loc["antenna"] = math.nan
            if "multisource" in cfg.estimators:
                res = estimate_multisource(
                    hb, self.array, cfg.num_sources, self.source_region, self.params, lam,
                    amplitude_mode=cfg.amplitude_mode, steering_mode=cfg.steering_mode,
                    joint_refit=cfg.joint_refit, dictionary=self.source_dict,
                )
                out["multisource"] = evm_db(res.reconstruction, h)
                best = res.strongest
                loc["multisource"] = (
                    math.nan if best is None else float(np.linalg.norm(best.location - ue))
                )
            if "multisink" in cfg.estimators:
                res = estimate_multisink(
                    hb, self.db, self.sink_region, self.params,
                    amplitude_mode=cfg.amplitude_mode, steering_mode=cfg.steering_mode,
                    dictionary=self.sink_dict,
                )
                out["multisink"] = evm_db(res.reconstruction, h)
                loc["multisink"] = float(np.linalg.norm(res.location - ue))
            records.append(TrialRecord(
                self.id, t, ue, target, out, loc, 1e3 * (time.perf_counter() - start)
            ))
        return records


def aggregate(scene_info, records, cfg):
    """Fold trial records into one row per (scenario, input EVM, estimator)."""
    rows = []
    for sid, M, spacing in scene_info:
        for target in sorted(cfg.input_evm_sweep_db):
            sel = [r for r in records if r.scenario == sid and r.input_evm_db == target]
            for est in sorted(cfg.estimators):
                vals = np.array([max(r.output_evm_db[est], EVM_FLOOR_DB) for r in sel])
                locs = np.array([r.location_error_m[est] for r in sel])
                rows.append(ResultRow(
                    sid, M, float(spacing), float(target), est,
                    float(np.mean(vals)), float(np.median(vals)), float(np.std(vals)),
                    float(np.mean(locs)) if np.all(np.isfinite(locs)) else math.nan,
                    len(sel),
                ))
    return rows


def run_scenario(cfg, progress=None):
    """Run every antenna-spacing scenario of ``cfg``.

    Returns ``(rows, records)``: aggregated :class:`ResultRow` objects and the
    per-trial :class:`TrialRecord` list. Results do not depend on
    ``cfg.workers``: each trial draws from its own seeded streams and the
    fold runs in trial order.
    """
    cfg.validate()
    records, info = [], []
    for spacing in cfg.antenna_spacings_lambda:
        scene = _Scene(cfg, spacing)
        info.append((scene.id, len(scene.array), spacing))
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                per_trial = list(pool.map(scene.run_trial, range(cfg.trials)))
        else:
            per_trial = [scene.run_trial(t) for t in range(cfg.trials)]
        for recs in per_trial:
            records.extend(recs)
        if progress is not None:
            progress(scene.id, len(scene.array))
    return aggregate(info, records, cfg), records


# -- output -------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return f"{v:.6f}"
    return str(v)


def format_csv(rows):
    if not rows:
        raise ValueError("no result rows to write")
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([
            r.scenario, r.M, f"{r.spacing_lambda:g}", _fmt(r.input_evm_db), r.estimator,
            _fmt(r.mean_output_evm_db), _fmt(r.median_output_evm_db), _fmt(r.std_db),
            _fmt(r.mean_loc_err_m), r.trials,
        ])
    return buf.getvalue()


def emit_csv(rows, path):
    text = format_csv(rows)
    try:
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


_COLORS = {"antenna": "#555555", "multisource": "#1f77b4", "multisink": "#d62728"}


def render_svg(rows, title, width=640, height=480):
    """SVG line chart of mean output EVM versus input EVM for one scenario.

    One polyline per estimator plus a dashed identity reference. Noiseless
    (``-inf``) sweep points are left out of the chart.
    """
    ests = sorted({r.estimator for r in rows})
    if not ests:
        raise ValueError("no estimators to plot")
    pts = [r for r in rows if math.isfinite(r.input_evm_db)]
    if not pts:
        raise ValueError("no finite input EVM points to plot")
    xs = [r.input_evm_db for r in pts]
    ys = [r.mean_output_evm_db for r in pts] + xs
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    y0, y1 = 5 * math.floor(y0 / 5), 5 * math.ceil(y1 / 5)
    left, right, top, bottom = 70, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in np.arange(y0, y1 + 1e-9, 5 if y1 - y0 <= 60 else 10):
        out.append(f'<line x1="{left}" y1="{sy(v):.1f}" x2="{left + pw}" y2="{sy(v):.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">'
               'input EVM (dB)</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">mean output EVM (dB)</text>')
    ident = f"{sx(x0):.2f},{sy(x0):.2f} {sx(x1):.2f},{sy(x1):.2f}"
    out.append(f'<polyline data-series="identity" points="{ident}" fill="none" '
               'stroke="black" stroke-dasharray="4 3"/>')
    legend = [("identity", "black")]
    for est in ests:
        sel = sorted((r for r in pts if r.estimator == est), key=lambda r: r.input_evm_db)
        coords = " ".join(f"{sx(r.input_evm_db):.2f},{sy(r.mean_output_evm_db):.2f}" for r in sel)
        color = _COLORS.get(est, "#2ca02c")
        out.append(f'<polyline data-series="{est}" points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        legend.append((est, color))
    for i, (name, color) in enumerate(legend):
        y = top + 10 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{y}" x2="{left + pw + 30}" y2="{y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{y + 4}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(rows, out_dir):
    """Write one ``<scenario>.svg`` chart per scenario; returns the paths."""
    import os

    if not rows:
        raise ValueError("no result rows to plot")
    paths = []
    for sid in dict.fromkeys(r.scenario for r in rows):
        sel = [r for r in rows if r.scenario == sid]
        title = f"{sid} (M = {sel[0].M})"
        path = os.path.join(out_dir, f"{sid}.svg")
        try:
            with open(path, "w") as f:
                f.write(render_svg(sel, title))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        paths.append(path)
    return paths


def format_trials_csv(records):
    """Per-trial records as CSV (timing omitted so reruns stay identical)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "trial", "ue_x_m", "ue_y_m", "input_evm_db", "estimator",
                "output_evm_db", "loc_err_m"])
    for r in records:
        for est in sorted(r.output_evm_db):
            w.writerow([r.scenario, r.trial_index, _fmt(float(r.ue_location[0])),
                        _fmt(float(r.ue_location[1])), _fmt(r.input_evm_db), est,
                        _fmt(r.output_evm_db[est]), _fmt(r.location_error_m[est])])
    return buf.getvalue()
