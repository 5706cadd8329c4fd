"""Scenario configuration, task execution, and data emission.

A scenario is one TOML file describing a network, its terminals, a task,
and output options.  The schema is strict: unknown keys are rejected so a
misspelled option cannot be silently ignored.  Exit codes separate user
error from physics: 0 success, 2 config/schema violation, 3 physics-level
infeasibility (degenerate mode, no channel, failed calibration).

All emitted data files are deterministic: fixed formatting, fixed
eigenvector phase convention, no timestamps.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import Trajectory, trajectory
from .effective import effective_multiuser, effective_nonresonant, effective_resonant
from .errors import SpinNetError, ConstructionError
from .network import SpinNetwork, SystemSpec, Terminal, chain, cycle, from_edge_list, is_connected
from .protocol import (
    bell_protocol,
    calibrate_nonresonant,
    calibrate_resonant,
    frequency_plan,
    route,
    w_nonresonant_protocol,
    w_resonant_protocol,
)
from .spectral import (
    SpectralDecomposition,
    chain_spectrum_closed_form,
    coupling_profile,
    cycle_spectrum_closed_form,
    eigendecompose,
    perron_check,
)
from . import effective as _effective
from . import network as _network

__all__ = ["ScenarioConfig", "ConfigError", "load_scenario", "run_scenario", "emit_trajectory_csv", "main"]

FLOAT_FMT = "{:.12g}"


class ConfigError(ValueError):
    """Schema or semantic violation in a scenario config (exit code 2)."""


_NUMBER = {"type": "number"}
_COMPLEX = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    ]
}

_SWEEP = {
    "type": "object",
    "additionalProperties": False,
    "required": ["terminal", "omega"],
    "properties": {
        "terminal": {"type": "string"},
        "omega": {"type": "array", "items": _NUMBER, "minItems": 1},
    },
}

TASK_PARAM_SCHEMAS = {
    "spectrum": {"type": "object", "additionalProperties": False, "properties": {}},
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "t_max": _NUMBER,
            "n_points": {"type": "integer", "minimum": 2},
            "initial": {"type": "string"},
            "resonant_mode_index": {"type": "integer", "minimum": 1},
            "calibrated": {"type": "boolean"},
            "sweep": _SWEEP,
        },
    },
    "calibrate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["regime"],
        "properties": {
            "regime": {"enum": ["resonant", "nonresonant"]},
            "lambda_mode_index": {"type": "integer", "minimum": 1},
            "free_terminal": {"type": "string"},
        },
    },
    "route": {
        "type": "object",
        "additionalProperties": False,
        "required": ["target"],
        "properties": {
            "target": {"type": "string"},
            "t_max": _NUMBER,
            "n_points": {"type": "integer", "minimum": 2},
            "sweep": _SWEEP,
        },
    },
    "plan": {
        "type": "object",
        "additionalProperties": False,
        "required": ["min_mutual_sep", "min_spectrum_sep"],
        "properties": {
            "min_mutual_sep": _NUMBER,
            "min_spectrum_sep": _NUMBER,
            "max_time": _NUMBER,
            "coupling": _NUMBER,
        },
    },
    "entangle": {
        "type": "object",
        "additionalProperties": False,
        "required": ["protocol"],
        "properties": {
            "protocol": {"enum": ["bell", "w_nonresonant", "w_resonant"]},
            "lambda_mode_index": {"type": "integer", "minimum": 1},
            "t_max": _NUMBER,
            "n_points": {"type": "integer", "minimum": 2},
            "tolerance": _NUMBER,
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network"],
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["chain", "cycle", "edge_list"]},
                "size": {"type": "integer", "minimum": 1},
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                        "maxItems": 3,
                    },
                },
            },
        },
        "terminals": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label", "node", "epsilon_xi"],
                "properties": {
                    "label": {"type": "string", "minLength": 1},
                    "node": {"type": "integer", "minimum": 1},
                    "epsilon_xi": _COMPLEX,
                    "omega": _NUMBER,
                    "epsilon": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "task": {"enum": sorted(TASK_PARAM_SCHEMAS)},
        "task_params": {"type": "object"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string", "minLength": 1},
                "format": {"enum": ["csv", "json"]},
                "include_amplitudes": {"type": "boolean"},
                "plot": {"type": "string", "minLength": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One validated scenario: system, task, task parameters, output options."""

    network: SpinNetwork
    terminals: tuple[Terminal, ...]
    task: str
    task_params: dict
    output: dict

    @property
    def spec(self) -> SystemSpec:
        return SystemSpec(self.network, self.terminals)


def _validate(instance, schema, context: str = "") -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = context + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        raise ConfigError(f"{path or 'config'}: {err.message}")


def _build_network(cfg: dict) -> SpinNetwork:
    kind = cfg["kind"]
    if kind in ("chain", "cycle"):
        if "size" not in cfg:
            raise ConfigError(f"network.size: required for kind {kind!r}")
        if "edges" in cfg:
            raise ConfigError(f"network.edges: not allowed for kind {kind!r}")
        try:
            return chain(cfg["size"]) if kind == "chain" else cycle(cfg["size"])
        except ConstructionError as exc:
            raise ConfigError(f"network.size: {exc}") from exc
    if "edges" not in cfg or "size" not in cfg:
        raise ConfigError("network: kind 'edge_list' requires both size and edges")
    edges = []
    for k, e in enumerate(cfg["edges"]):
        i, j = e[0], e[1]
        if i != int(i) or j != int(j):
            raise ConfigError(f"network.edges[{k}]: endpoints must be integers")
        edges.append((int(i), int(j), float(e[2]) if len(e) == 3 else 1.0))
    try:
        return from_edge_list(cfg["size"], edges)
    except ConstructionError as exc:
        raise ConfigError(f"network.edges: {exc}") from exc


def _build_terminals(items, network: SpinNetwork) -> tuple[Terminal, ...]:
    terminals = []
    for k, item in enumerate(items):
        raw = item["epsilon_xi"]
        value = complex(raw[0], raw[1]) if isinstance(raw, list) else complex(raw)
        if item["node"] > network.node_count:
            raise ConfigError(
                f"terminals[{k}].node: node {item['node']} exceeds the network size "
                f"{network.node_count}"
            )
        try:
            terminals.append(
                Terminal(
                    label=item["label"],
                    attach_node=item["node"],
                    coupling=value,
                    field=float(item.get("omega", 0.0)),
                    epsilon=float(item.get("epsilon", 1.0)),
                )
            )
        except ConstructionError as exc:
            raise ConfigError(f"terminals[{k}]: {exc}") from exc
    try:
        SystemSpec(network, tuple(terminals))
    except ConstructionError as exc:
        raise ConfigError(f"terminals: {exc}") from exc
    return tuple(terminals)


def load_scenario(config_path, task_override: str | None = None) -> ScenarioConfig:
    """Parse and validate one scenario file (strict schema, clear paths)."""
    path = Path(config_path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    _validate(data, CONFIG_SCHEMA)
    task = task_override or data.get("task")
    if task is None:
        raise ConfigError("task: required (or select a task subcommand)")
    if task not in TASK_PARAM_SCHEMAS:
        raise ConfigError(f"task: unknown task {task!r}")
    params = data.get("task_params", {})
    _validate(params, TASK_PARAM_SCHEMAS[task], context="task_params")
    network = _build_network(data["network"])
    terminals = _build_terminals(data.get("terminals", []), network)
    return ScenarioConfig(
        network=network,
        terminals=terminals,
        task=task,
        task_params=params,
        output=data.get("output", {}),
    )


# ---------------------------------------------------------------------------
# emission


def _fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def _trajectory_columns(traj: Trajectory, include_amplitudes: bool):
    headers = ["time"] + [f"p_{lab}" for lab in traj.basis_labels]
    columns = [traj.time_grid] + [traj.populations[:, k] for k in range(len(traj.basis_labels))]
    if include_amplitudes:
        for k, lab in enumerate(traj.basis_labels):
            headers += [f"re_{lab}", f"im_{lab}"]
            columns += [traj.states[:, k].real, traj.states[:, k].imag]
    return headers, columns


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"while writing {path}: {exc}") from exc


def emit_trajectory_csv(traj: Trajectory, path, include_amplitudes: bool = False) -> None:
    """Write a trajectory as CSV: time first, terminal columns before nodes,
    12 significant digits, amplitudes as re/im pairs when requested."""
    headers, columns = _trajectory_columns(traj, include_amplitudes)
    lines = [",".join(headers)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(x) for x in row))
    _write_text(Path(path), "\n".join(lines) + "\n")


def emit_trajectory_json(traj: Trajectory, path, include_amplitudes: bool = False) -> None:
    """JSON mirror of the CSV: same field names, one array per column."""
    headers, columns = _trajectory_columns(traj, include_amplitudes)
    payload = {h: [float(_fmt(x)) for x in col] for h, col in zip(headers, columns)}
    _write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


_SVG_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def emit_population_svg(traj: Trajectory, path, labels=None) -> None:
    """Static population-vs-time chart, written directly (no external process)."""
    labels = list(labels) if labels is not None else list(traj.basis_labels[:6])
    width, height, margin = 800, 480, 50
    t = traj.time_grid
    t_span = float(t[-1] - t[0]) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = margin + frac * (width - 2 * margin)
        y = height - margin + 15
        parts.append(
            f'<text x="{x:.1f}" y="{y}" font-size="11" text-anchor="middle">'
            f"{t[0] + frac * t_span:.6g}</text>"
        )
        yy = height - margin - frac * (height - 2 * margin)
        parts.append(
            f'<text x="{margin - 6}" y="{yy + 4:.1f}" font-size="11" text-anchor="end">{frac:g}</text>'
        )
    for k, label in enumerate(labels):
        color = _SVG_PALETTE[k % len(_SVG_PALETTE)]
        p = traj.population(label)
        points = " ".join(
            f"{margin + (ti - t[0]) / t_span * (width - 2 * margin):.2f},"
            f"{height - margin - pi * (height - 2 * margin):.2f}"
            for ti, pi in zip(t, p)
        )
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        parts.append(
            f'<text x="{margin + 10 + 90 * k}" y="{margin - 10}" font-size="12" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    _write_text(Path(path), "\n".join(parts) + "\n")


def _jsonable(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _emit_report(payload: dict, path) -> None:
    _write_text(Path(path), json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# task execution


def _say(quiet: bool, *lines: str) -> None:
    if not quiet:
        for line in lines:
            click.echo(line)


def _complain(*lines: str) -> None:
    for line in lines:
        click.echo(line, err=True)


def _out_path(scenario: ScenarioConfig, output_dir, default_name: str | None = None) -> Path | None:
    name = scenario.output.get("path", default_name)
    if name is None:
        return None
    p = Path(name)
    if not p.is_absolute() and output_dir is not None:
        p = Path(output_dir) / p
    return p


def _mode_value_descending(decomp: SpectralDecomposition, k: int) -> float:
    """Eigenvalue with 1-based index ``k`` in descending order (1 = largest)."""
    n = decomp.source_dimension
    if not 1 <= k <= n:
        raise ConfigError(f"task_params.lambda_mode_index: {k} outside 1..{n}")
    return float(decomp.eigenvalues[n - k])


def _summarize_system(system) -> list[str]:
    net = system.network
    lines = [
        f"network: {net.node_count} nodes, {net.edge_count} edges, "
        f"{'connected' if is_connected(net) else 'disconnected'}"
    ]
    for t in system.terminals:
        c = t.coupling
        coupling = _fmt(c.real) if c.imag == 0 else f"{_fmt(c.real)}{c.imag:+.6g}i"
        lines.append(
            f"  terminal {t.label} @ node {t.attach_node}: coupling {coupling}, field {_fmt(t.field)}"
        )
    return lines


def _emit_trajectory(traj: Trajectory, scenario: ScenarioConfig, path: Path | None, quiet: bool):
    if path is None:
        return
    include = bool(scenario.output.get("include_amplitudes", False))
    if scenario.output.get("format", "csv") == "json":
        emit_trajectory_json(traj, path, include)
    else:
        emit_trajectory_csv(traj, path, include)
    _say(quiet, f"wrote {path}")
    plot = scenario.output.get("plot")
    if plot:
        plot_path = Path(plot)
        if not plot_path.is_absolute() and path is not None:
            plot_path = path.parent / plot_path
        labels = [t.label for t in scenario.terminals] or list(traj.basis_labels[:6])
        emit_population_svg(traj, plot_path, labels)
        _say(quiet, f"wrote {plot_path}")


def _auto_t_max(spec: SystemSpec, resonant_value: float | None) -> float | None:
    """Simulation window: 2.5x the effective-theory transfer time, if inferable."""
    import warnings as _warnings

    # Weak-coupling warnings are advisory and already surfaced by the
    # calibration step; this is only a window heuristic.
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")
        try:
            if resonant_value is not None and spec.terminal_count == 2:
                h = effective_resonant(spec, resonant_value)
                b = 0.5 * (abs(h.matrix[0, 1]) + abs(h.matrix[1, 2]))
                return 2.5 * float(np.pi / (np.sqrt(2.0) * b)) if b > 0 else None
            if spec.terminal_count == 2:
                h = effective_nonresonant(spec)
                b = abs(h.matrix[0, 1])
                return 2.5 * float(np.pi / (2.0 * b)) if b > 0 else None
            if spec.terminal_count >= 3:
                h = effective_multiuser(spec)
                b = min(h.off_diagonal_magnitudes())
                return 2.5 * float(np.pi / (2.0 * b)) if b > 0 else None
        except SpinNetError:
            return None
    return None


def _sweep_specs(scenario: ScenarioConfig):
    """Yield (suffix, spec) pairs: one per sweep value, or a single run."""
    sweep = scenario.task_params.get("sweep")
    if not sweep:
        yield "", scenario.spec
        return
    label = sweep["terminal"]
    base = scenario.spec
    base.terminal_index(label)  # raises for unknown labels
    from dataclasses import replace as _replace

    for value in sweep["omega"]:
        terminals = tuple(
            _replace(t, field=float(value)) if t.label == label else t for t in base.terminals
        )
        yield f"_{label}={value:.6g}", SystemSpec(base.network, terminals)


def _suffixed(path: Path | None, suffix: str) -> Path | None:
    if path is None or not suffix:
        return path
    return path.with_name(path.stem + suffix + path.suffix)


def _task_spectrum(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    decomp = eigendecompose(scenario.network.adjacency_matrix())
    rows = []
    for ci, cls in enumerate(decomp.degeneracy_classes):
        for idx in cls:
            rows.append((idx, float(decomp.eigenvalues[idx]), ci, len(cls)))
    path = _out_path(scenario, output_dir)
    if path is not None:
        if scenario.output.get("format", "csv") == "json":
            payload = {
                "index": [r[0] for r in rows],
                "eigenvalue": [float(_fmt(r[1])) for r in rows],
                "class_index": [r[2] for r in rows],
                "class_size": [r[3] for r in rows],
            }
            _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        else:
            lines = ["index,eigenvalue,class_index,class_size"]
            lines += [f"{i},{_fmt(lam)},{c},{s}" for i, lam, c, s in rows]
            _write_text(path, "\n".join(lines) + "\n")
        _say(quiet, f"wrote {path}")
    perron = perron_check(scenario.network)
    _say(
        quiet,
        *_summarize_system(scenario),
        f"eigenvalues: {decomp.source_dimension}, degeneracy classes: {len(decomp.degeneracy_classes)}",
        f"top eigenvalue {_fmt(perron.top_eigenvalue)}: simple={perron.simple}, "
        f"strictly_positive={perron.strictly_positive}",
        "spectrum (ascending): "
        + ", ".join(_fmt(v) for v in decomp.eigenvalues[: min(12, decomp.source_dimension)])
        + (", ..." if decomp.source_dimension > 12 else ""),
    )


def _task_simulate(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    params = scenario.task_params
    base_spec = scenario.spec
    if base_spec.terminal_count == 0 and "initial" not in params:
        raise ConfigError("task_params.initial: required when there are no terminals")
    resonant_value = None
    if "resonant_mode_index" in params:
        decomp = eigendecompose(base_spec.network.adjacency_matrix())
        resonant_value = _mode_value_descending(decomp, params["resonant_mode_index"])
    for suffix, spec in _sweep_specs(scenario):
        if resonant_value is not None:
            from dataclasses import replace as _replace

            spec = SystemSpec(
                spec.network, tuple(_replace(t, field=resonant_value) for t in spec.terminals)
            )
            if params.get("calibrated", False):
                result = calibrate_resonant(spec, resonant_value)
                spec = result.adjusted_spec
                for w in result.warnings:
                    _complain(f"warning: {w}")
        elif params.get("calibrated", False):
            result = calibrate_nonresonant(spec)
            spec = result.adjusted_spec
            for w in result.warnings:
                _complain(f"warning: {w}")
        initial = params.get("initial", spec.terminals[0].label if spec.terminals else None)
        t_max = params.get("t_max") or _auto_t_max(spec, resonant_value)
        if t_max is None:
            raise ConfigError(
                "task_params.t_max: required (no transfer timescale could be inferred)"
            )
        traj = trajectory(spec, initial, float(t_max), int(params.get("n_points", 2001)))
        _say(quiet, *_summarize_system(spec), f"simulated [0, {_fmt(t_max)}] from {initial!r}")
        for t in spec.terminals:
            t_peak, p_peak = traj.peak(t.label)
            _say(quiet, f"  peak p_{t.label} = {_fmt(p_peak)} at t = {_fmt(t_peak)}")
        _emit_trajectory(traj, scenario, _suffixed(_out_path(scenario, output_dir), suffix), quiet)


def _task_calibrate(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    params = scenario.task_params
    spec = scenario.spec
    if params["regime"] == "resonant":
        if "lambda_mode_index" not in params:
            raise ConfigError("task_params.lambda_mode_index: required for resonant calibration")
        decomp = eigendecompose(spec.network.adjacency_matrix())
        lam = _mode_value_descending(decomp, params["lambda_mode_index"])
        result = calibrate_resonant(spec, lam, decomposition=decomp)
    else:
        result = calibrate_nonresonant(spec, params.get("free_terminal"))
    for w in result.warnings:
        _complain(f"warning: {w}")
    adjusted = result.adjusted_spec
    report = {
        "task": "calibrate",
        "regime": result.regime,
        "resonance_mode": result.resonance_mode,
        "predicted_time": result.predicted_time,
        "terminals": [
            {"label": t.label, "node": t.attach_node, "epsilon_xi": t.coupling, "omega": t.field}
            for t in adjusted.terminals
        ],
        "diagnostics": result.diagnostics,
        "warnings": list(result.warnings),
    }
    path = _out_path(scenario, output_dir)
    if path is not None:
        _emit_report(report, path)
        _say(quiet, f"wrote {path}")
    lines = _summarize_system(scenario) + [f"regime: {result.regime}"]
    if result.regime == "resonant":
        ratio = abs(adjusted.terminals[1].coupling) / abs(adjusted.terminals[0].coupling)
        lines.append(f"coupling ratio xi_d/xi_s = {_fmt(ratio)}")
        lines.append(f"resonance eigenvalue = {_fmt(adjusted.terminals[0].field)}")
    else:
        lines.append(f"calibrated field shift = {_fmt(result.diagnostics['field_shift'])}")
        lines.append(f"diagonal residual = {_fmt(result.diagnostics['diagonal_residual'])}")
    lines.append(f"predicted transfer time = {_fmt(result.predicted_time)}")
    _say(quiet, *lines)


def _task_route(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    params = scenario.task_params
    for suffix, spec in _sweep_specs(scenario):
        result = route(spec, params["target"])
        for w in result.warnings:
            _complain(f"warning: {w}")
        t_max = float(params.get("t_max") or 2.0 * result.predicted_time)
        source = result.adjusted_spec.terminals[0].label
        traj = trajectory(result.adjusted_spec, source, t_max, int(params.get("n_points", 2001)))
        lines = _summarize_system(result.adjusted_spec) + [
            f"routed {source!r} -> {params['target']!r}: predicted time {_fmt(result.predicted_time)}",
            f"min user detuning {_fmt(result.diagnostics['min_user_detuning'])}, "
            f"min spectrum detuning {_fmt(result.diagnostics['min_spectrum_detuning'])}",
        ]
        for t in result.adjusted_spec.terminals:
            t_peak, p_peak = traj.peak(t.label)
            lines.append(f"  peak p_{t.label} = {_fmt(p_peak)} at t = {_fmt(t_peak)}")
        _say(quiet, *lines)
        _emit_trajectory(traj, scenario, _suffixed(_out_path(scenario, output_dir), suffix), quiet)


def _task_plan(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    params = scenario.task_params
    if len(scenario.terminals) < 2:
        raise ConfigError("terminals: planning needs a source terminal plus at least one user")
    nodes = [t.attach_node for t in scenario.terminals]
    plan = frequency_plan(
        scenario.network,
        nodes,
        min_mutual_sep=float(params["min_mutual_sep"]),
        min_spectrum_sep=float(params["min_spectrum_sep"]),
        max_time=params.get("max_time"),
        coupling=float(params.get("coupling", 0.1)),
    )
    report = {
        "task": "plan",
        "assignments": plan.assignments,
        "user_nodes": list(plan.user_nodes),
        "min_eigenvalue_separation": plan.min_eigenvalue_separation,
        "min_mutual_separation": plan.min_mutual_separation,
        "worst_predicted_time": plan.worst_predicted_time,
        "predicted_times": plan.predicted_times,
    }
    path = _out_path(scenario, output_dir)
    if path is not None:
        _emit_report(report, path)
        _say(quiet, f"wrote {path}")
    lines = _summarize_system(scenario)
    for label, omega in plan.assignments.items():
        lines.append(
            f"  {label}: omega = {_fmt(omega)} "
            f"(predicted time {_fmt(plan.predicted_times[label])})"
        )
    lines.append(f"worst predicted time: {_fmt(plan.worst_predicted_time)}")
    _say(quiet, *lines)


def _task_entangle(scenario: ScenarioConfig, output_dir, quiet: bool) -> None:
    params = scenario.task_params
    spec = scenario.spec
    protocol = params["protocol"]
    if protocol == "bell":
        report_obj = bell_protocol(spec)
    elif protocol == "w_nonresonant":
        kwargs = {}
        if "t_max" in params:
            kwargs["t_max"] = float(params["t_max"])
        if "n_points" in params:
            kwargs["n_points"] = int(params["n_points"])
        if "tolerance" in params:
            kwargs["tolerance"] = float(params["tolerance"])
        report_obj = w_nonresonant_protocol(spec, **kwargs)
    else:
        if "lambda_mode_index" not in params:
            raise ConfigError("task_params.lambda_mode_index: required for the resonant W protocol")
        decomp = eigendecompose(spec.network.adjacency_matrix())
        lam = _mode_value_descending(decomp, params["lambda_mode_index"])
        report_obj = w_resonant_protocol(spec, lam, decomposition=decomp)
    report = {
        "task": "entangle",
        "protocol": report_obj.protocol,
        "target_times": list(report_obj.target_times),
        "achieved_fidelity": report_obj.achieved_fidelity,
        "optimal_phases": list(report_obj.optimal_phases),
        "terminal_populations": list(report_obj.terminal_populations),
        "succeeded": report_obj.succeeded,
    }
    path = _out_path(scenario, output_dir)
    if path is not None:
        _emit_report(report, path)
        _say(quiet, f"wrote {path}")
    _say(
        quiet,
        *_summarize_system(scenario),
        f"protocol: {report_obj.protocol} ({'ok' if report_obj.succeeded else 'target not reached'})",
        f"target time(s): {', '.join(_fmt(t) for t in report_obj.target_times)}",
        f"fidelity: {_fmt(report_obj.achieved_fidelity)}",
        "terminal populations: " + ", ".join(_fmt(p) for p in report_obj.terminal_populations),
    )


_TASK_HANDLERS = {
    "spectrum": _task_spectrum,
    "simulate": _task_simulate,
    "calibrate": _task_calibrate,
    "route": _task_route,
    "plan": _task_plan,
    "entangle": _task_entangle,
}


def run_scenario(
    config_path, output_dir=None, quiet: bool = False, task_override: str | None = None
) -> int:
    """Execute one scenario file.  Returns the process exit code (0/2/3)."""
    try:
        scenario = load_scenario(config_path, task_override)
    except ConfigError as exc:
        _complain(f"config error: {exc}")
        return 2
    try:
        _TASK_HANDLERS[scenario.task](scenario, output_dir, quiet)
    except ConfigError as exc:
        _complain(f"config error: {exc}")
        return 2
    except SpinNetError as exc:
        _complain(f"physics error: {exc}")
        return 3
    except OSError as exc:
        _complain(f"i/o error: {exc}")
        return 1
    return 0


# ---------------------------------------------------------------------------
# selftest


def _random_connected_network(rng: np.random.Generator, max_nodes: int = 15) -> SpinNetwork:
    while True:
        n = int(rng.integers(3, max_nodes + 1))
        edges = [
            (i, j)
            for i in range(1, n + 1)
            for j in range(i + 1, n + 1)
            if rng.random() < 0.4
        ]
        if not edges:
            continue
        net = from_edge_list(n, edges)
        if is_connected(net):
            return net


def run_selftest(seed: int = 2026, quiet: bool = False) -> int:
    """Closed-form-vs-numeric spectra, the generator condition, and the
    positive-top-mode property on random graphs.  Exit 0 on a healthy build."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, bool, str]] = []

    worst = 0.0
    for n in range(2, 41):
        numeric = eigendecompose(chain(n).adjacency_matrix())
        closed = chain_spectrum_closed_form(n)
        worst = max(worst, float(np.max(np.abs(numeric.eigenvalues - closed.eigenvalues))))
    checks.append(("chain spectra closed-form vs numeric (N=2..40)", worst < 1e-9, f"max |dlam| = {worst:.2e}"))

    worst = 0.0
    for n in range(3, 41):
        numeric = eigendecompose(cycle(n).adjacency_matrix())
        closed = cycle_spectrum_closed_form(n)
        worst = max(worst, float(np.max(np.abs(numeric.eigenvalues - closed.eigenvalues))))
        for cls_n, cls_c in zip(numeric.degeneracy_classes, closed.degeneracy_classes):
            dp = float(np.max(np.abs(numeric.projector(cls_n) - closed.projector(cls_c))))
            worst = max(worst, dp)
    checks.append(("cycle spectra closed-form vs numeric (N=3..40)", worst < 1e-8, f"max dev = {worst:.2e}"))

    worst = 0.0
    for _ in range(20):
        net = _random_connected_network(rng)
        decomp = eigendecompose(net.adjacency_matrix())
        top, bottom = float(decomp.eigenvalues[-1]), float(decomp.eigenvalues[0])
        spec = SystemSpec(
            net,
            (
                Terminal("s", int(rng.integers(1, net.node_count + 1)), 0.05, top + 0.1 + float(rng.random())),
                Terminal("d", int(rng.integers(1, net.node_count + 1)), 0.05, bottom - 0.1 - float(rng.random())),
            ),
        )
        gen = _effective.sw_generator(spec, decomposition=decomp)
        worst = max(worst, _effective.sw_condition_residual(spec, gen, decomposition=decomp))
    checks.append(("generator condition |V + i[S,H0]| on random systems", worst < 1e-12, f"max residual = {worst:.2e}"))

    ok = True
    for _ in range(30):
        net = _random_connected_network(rng, max_nodes=20)
        report = perron_check(net)
        ok = ok and report.simple and report.strictly_positive
    checks.append(("top mode simple and strictly positive on random connected graphs", ok, ""))

    failed = [c for c in checks if not c[1]]
    for name, passed, detail in checks:
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail and not quiet else ""
        click.echo(f"{status}: {name}{suffix}")
    return 0 if not failed else 3


# ---------------------------------------------------------------------------
# command line


def _scenario_command(task: str | None):
    def decorator(fn):
        fn = click.option("--quiet", is_flag=True, help="Suppress the summary.")(fn)
        fn = click.option(
            "--output", "output_dir", type=click.Path(file_okay=False), default=None,
            help="Directory for relative output paths.",
        )(fn)
        fn = click.option(
            "--config", "config_path", required=True, type=click.Path(), help="Scenario TOML file.",
        )(fn)
        return fn

    return decorator


@click.group(help=__doc__)
def main() -> None:
    pass


@main.command(help="Execute the task named in the config.")
@_scenario_command(None)
def run(config_path, output_dir, quiet):
    sys.exit(run_scenario(config_path, output_dir, quiet))


def _register_task_command(task: str, help_text: str) -> None:
    @main.command(name=task, help=help_text)
    @_scenario_command(task)
    def _cmd(config_path, output_dir, quiet, _task=task):
        sys.exit(run_scenario(config_path, output_dir, quiet, task_override=_task))


_register_task_command("spectrum", "Eigenvalues and degeneracy classes of the network.")
_register_task_command("simulate", "Exact trajectory of the single excitation.")
_register_task_command("calibrate", "Tune couplings/fields to the perfect-transfer condition.")
_register_task_command("route", "Point the source at one user and simulate.")
_register_task_command("plan", "Assign communication frequencies to the users.")
_register_task_command("entangle", "Run a Bell or W entanglement protocol.")


@main.command(help="Run built-in consistency checks (closed forms, generator condition).")
@click.option("--seed", type=int, default=2026, show_default=True)
@click.option("--quiet", is_flag=True)
def selftest(seed, quiet):
    sys.exit(run_selftest(seed, quiet))


if __name__ == "__main__":
    main()
