"""Scenario configuration: a YAML document naming measures, diffusion, grid, simulation and checks."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import measure as M
from .diffusion import DiffusionSpec
from .solver import EmbeddingProblem, SolveGrid
from .verify import CorridorSpec, HypothesisError, SimParams, counterexample_measure


class ConfigError(ValueError):
    pass


def _num(v, key):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    if isinstance(v, str) and v.strip().lower() in ("-inf", "-.inf"):
        return -math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def _args(spec, names, key, optional=()):
    """Positional list or mapping -> dict over names."""
    if isinstance(spec, list):
        if len(spec) > len(names):
            raise ConfigError(f"{key}: too many arguments")
        spec = dict(zip(names, spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"{key}: expected a mapping of arguments")
    unknown = set(spec) - set(names)
    if unknown:
        raise ConfigError(f"{key}: unknown argument(s) {sorted(unknown)}")
    missing = [n for n in names if n not in spec and n not in optional]
    if missing:
        raise ConfigError(f"{key}: missing argument(s) {missing}")
    return spec


class MeasureResolver:
    """Builds measures from the config's ``measures`` block; entries may refer to each other by name."""

    def __init__(self, table: dict):
        if not isinstance(table, dict):
            raise ConfigError("measures: expected a mapping of named measures")
        self.table = table
        self.done: dict[str, M.Measure] = {}
        self.active: set[str] = set()

    def get(self, name: str, key: str = "measures") -> M.Measure:
        if name in self.done:
            return self.done[name]
        if name not in self.table:
            raise ConfigError(f"{key}: unknown measure name {name!r}")
        if name in self.active:
            raise ConfigError(f"measures.{name}: circular reference")
        self.active.add(name)
        try:
            m = self.build(self.table[name], f"measures.{name}")
        finally:
            self.active.discard(name)
        self.done[name] = m
        return m

    def build(self, spec, key: str) -> M.Measure:
        if isinstance(spec, str):
            return self.get(spec, key)
        if not isinstance(spec, dict) or len(spec) != 1:
            raise ConfigError(f"{key}: a measure is a name or a one-key mapping {{constructor: args}}")
        (kind, a), = spec.items()
        k = f"{key}.{kind}"
        try:
            return self._construct(kind, a, k)
        except ConfigError:
            raise
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{k}: {exc}") from None

    def _construct(self, kind, a, k):
        if kind == "dirac":
            a = _args(a if isinstance(a, (list, dict)) else [a], ["loc", "mass"], k, ("mass",))
            return M.dirac(_num(a["loc"], k), _num(a.get("mass", 1.0), k))
        if kind == "discrete":
            a = _args(a, ["locs", "masses"], k)
            return M.discrete([_num(v, k) for v in a["locs"]], [_num(v, k) for v in a["masses"]])
        if kind == "uniform":
            a = _args(a, ["a", "b"], k)
            return M.uniform(_num(a["a"], k), _num(a["b"], k))
        if kind == "gaussian":
            a = _args(a, ["mean", "var", "n_pieces"], k, ("mean", "var", "n_pieces"))
            return M.gaussian(_num(a.get("mean", 0.0), k), _num(a.get("var", 1.0), k), int(a.get("n_pieces", 512)))
        if kind == "tent":
            a = _args(a, ["a", "b", "lambda", "p", "mass"], k, ("mass",))
            return M.tent(_num(a["a"], k), _num(a["b"], k), _num(a["lambda"], k), _num(a["p"], k),
                          _num(a.get("mass", 1.0), k))
        if kind == "mixture":
            a = _args(a, ["nu", "a", "b", "n_cells"], k, ("n_cells",))
            return M.mixture_measure(self.build(a["nu"], f"{k}.nu"), _num(a["a"], k), _num(a["b"], k),
                                     int(a.get("n_cells", 64)))
        if kind == "restrict":
            a = _args(a, ["m", "a", "b"], k)
            return self.build(a["m"], f"{k}.m").restricted(_num(a["a"], k), _num(a["b"], k))
        if kind == "sum":
            if not isinstance(a, list) or not a:
                raise ConfigError(f"{k}: expected a nonempty list of measures")
            return M.measure_sum([self.build(m, f"{k}[{i}]") for i, m in enumerate(a)])
        if kind == "scale":
            a = _args(a, ["m", "w"], k)
            return self.build(a["m"], f"{k}.m").scaled(_num(a["w"], k))
        if kind == "normalize":
            return self.build(a, k).normalized()
        if kind == "counterexample":
            a = _args(a or {}, ["x", "n_intervals", "n_cells"], k, ("x", "n_intervals", "n_cells"))
            mu, _ = counterexample_measure(_num(a.get("x", 0.0), k), int(a.get("n_intervals", 3)),
                                           int(a.get("n_cells", 64)))
            return mu
        raise ConfigError(f"{k}: unknown measure constructor {kind!r}")


def _dataclass_kwargs(cls, block: dict, key: str) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{key}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(block) - names
    if unknown:
        raise ConfigError(f"{key}: unknown key(s) {sorted(unknown)}")
    return dict(block)


@dataclass
class Scenario:
    name: str
    sha256: str
    raw: dict
    problem: EmbeddingProblem
    grid: SolveGrid
    sim: SimParams
    t_eval: float = math.inf
    sim_t_cap: float | None = None
    seeds: list[int] = field(default_factory=list)
    ks_threshold: float | None = None
    output_dir: str = "out"
    surface: bool = False

    @property
    def tag(self) -> str:
        return f"{self.name}.{self.sha256[:12]}"

    def out_path(self, suffix: str, output_dir: str | None = None) -> Path:
        d = Path(output_dir or self.output_dir)
        d.mkdir(parents=True, exist_ok=True)
        return d / f"{self.tag}.{suffix}"

    def block(self, key: str, default=None):
        return self.raw.get(key, default)


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}: YAML parse error{where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data


def build_grid(block: dict | None, key: str = "grid", base: SolveGrid | None = None) -> SolveGrid:
    kw = {} if base is None else {f.name: getattr(base, f.name) for f in fields(SolveGrid)}
    for name, v in _dataclass_kwargs(SolveGrid, block or {}, key).items():
        kw[name] = int(v) if name in ("n_x", "n_t", "psor_max_iters") else (None if v is None else _num(v, f"{key}.{name}"))
    try:
        return SolveGrid(**kw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def build_diffusion(block: dict | None) -> DiffusionSpec:
    block = dict(block or {})
    unknown = set(block) - {"kind", "params", "domain", "k"}
    if unknown:
        raise ConfigError(f"diffusion: unknown key(s) {sorted(unknown)}")
    kind = block.get("kind", "brownian")
    default_domain = (0.0, math.inf) if kind == "geometric" else (-math.inf, math.inf)
    dom = block.get("domain", default_domain)
    try:
        return DiffusionSpec(
            kind, dict(block.get("params") or {}),
            (_num(dom[0], "diffusion.domain"), _num(dom[1], "diffusion.domain")),
            _num(block.get("k", 1.0), "diffusion.k"),
        )
    except ValueError as exc:
        raise ConfigError(f"diffusion: {exc}") from None


KNOWN_KEYS = {"name", "measures", "diffusion", "grid", "sim", "checks", "output_dir", "output",
              "counterexample", "theorem"}


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    data = parse_text(raw_bytes.decode("utf-8"), str(path))
    return scenario_from_dict(data, hashlib.sha256(raw_bytes).hexdigest(), data.get("name", path.stem))


def scenario_from_dict(data: dict, sha256: str = "0" * 64, name: str = "scenario") -> Scenario:
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    resolver = MeasureResolver(data.get("measures") or {})
    for required in ("initial", "target"):
        if required not in resolver.table:
            raise ConfigError(f"measures: missing required measure {required!r}")
    initial = resolver.get("initial")
    target = resolver.get("target")
    diffusion = build_diffusion(data.get("diffusion"))
    try:
        problem = EmbeddingProblem(initial, target, diffusion)
    except ValueError as exc:
        raise ConfigError(f"measures: {exc}") from None
    grid = build_grid(data.get("grid"))
    sim = dict(data.get("sim") or {})
    unknown = set(sim) - {"dt", "n_paths", "seed", "seeds", "t_cap", "t_eval", "ks_threshold"}
    if unknown:
        raise ConfigError(f"sim: unknown key(s) {sorted(unknown)}")
    if data.get("checks") and "seed" not in sim and "seeds" not in sim:
        raise ConfigError("sim: a seed is required when checks are declared")
    seed = int(sim.get("seed", 0))
    params = SimParams(_num(sim.get("dt", 2.5e-4), "sim.dt"), int(sim.get("n_paths", 100_000)), seed)
    if params.dt <= 0 or params.n_paths <= 0:
        raise ConfigError("sim: dt and n_paths must be positive")
    seeds = [int(s) for s in sim.get("seeds", [seed])]
    out = data.get("output") or {}
    return Scenario(
        name=str(name), sha256=sha256, raw=data, problem=problem, grid=grid, sim=params,
        t_eval=_num(sim.get("t_eval", math.inf), "sim.t_eval"),
        sim_t_cap=None if sim.get("t_cap") is None else _num(sim["t_cap"], "sim.t_cap"),
        seeds=seeds,
        ks_threshold=None if sim.get("ks_threshold") is None else _num(sim["ks_threshold"], "sim.ks_threshold"),
        output_dir=str(data.get("output_dir", "out")),
        surface=bool(out.get("surface", False)),
    )


def corridor_from(block: dict, key: str) -> CorridorSpec:
    if not isinstance(block, dict):
        raise ConfigError(f"{key}: expected a mapping")
    unknown = set(block) - {"x", "y", "s", "t", "A", "name"}
    if unknown:
        raise ConfigError(f"{key}: unknown key(s) {sorted(unknown)}")
    try:
        t = _num(block["t"], key)
        s = _num(block.get("s", t), key)
        A = tuple((_num(lo, key), _num(hi, key)) for lo, hi in block.get("A", []))
        return CorridorSpec(_num(block["x"], key), _num(block["y"], key), s, t, A)
    except KeyError as exc:
        raise ConfigError(f"{key}: missing {exc.args[0]!r}") from None
    except HypothesisError as exc:
        raise ConfigError(f"{key}: {exc}") from None
