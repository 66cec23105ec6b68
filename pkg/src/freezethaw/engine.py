"""Freeze-thaw optimisation loop and baseline schedulers.

All algorithms advance one configuration by one unit step at a time against a
tabular oracle, so budgets, prefixes and incumbents are accounted for in the
same way.  Each algorithm is a policy with a JSON-serialisable state, which
lets a finished run be continued bit-for-bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import acquisition as acq
from .surrogate import History, InferenceConfig, MCSurrogate, TaskMeta

ENGINE_VERSION = "1"
CSV_COLUMNS = ("iter", "config_id", "step", "y", "incumbent")

# surrogate budget used inside optimisation loops
HPO_INFERENCE = InferenceConfig(n_samples=32, n_latent=8, n_inner=16, max_components=4096)


class EngineError(RuntimeError):
    pass


class TabularOracle:
    """Lookup-table oracle: ``evaluate(i, b)`` returns ``curves[i, b - 1]``."""

    def __init__(self, configs, curves, name: str = "task"):
        self.configs = np.atleast_2d(np.asarray(configs, dtype=float))
        self.curves = np.asarray(curves, dtype=float)
        if self.curves.shape[0] != self.configs.shape[0]:
            raise ValueError("need one curve per configuration")
        self.name = name

    @classmethod
    def from_task(cls, task) -> "TabularOracle":
        """Oracle over a synthetic task's noisy curves or a tabular benchmark."""
        curves = getattr(task, "observations", None)
        if curves is None:
            curves = task.curves
        name = getattr(task, "task_id", None) or getattr(task, "name", "task")
        return cls(task.configs, curves, name)

    @property
    def n_configs(self) -> int:
        return self.configs.shape[0]

    @property
    def b_max(self) -> int:
        return self.curves.shape[1]

    def evaluate(self, i: int, b: int) -> float:
        if not 1 <= b <= self.b_max:
            raise ValueError(f"step {b} outside 1..{self.b_max}")
        return float(self.curves[i, b - 1])


@dataclass(frozen=True)
class Step:
    iter: int
    config_id: int
    step: int
    y: float
    incumbent: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class RunTrace:
    algorithm: str
    seed: int
    budget: int
    steps: list = field(default_factory=list)
    unit_step: int = 1
    truncated: bool = False
    settings: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict, compare=False)
    version: str = ENGINE_VERSION
    meta: dict = field(default_factory=dict, compare=False)  # labels only, e.g. task name

    def __len__(self):
        return len(self.steps)

    def best(self) -> tuple:
        """``(config_id, step, y)`` of the best observation; ties prefer higher step, then lower id."""
        if not self.steps:
            raise EngineError("empty trace")
        s = max(self.steps, key=lambda s: (s.y, s.step, -s.config_id))
        return s.config_id, s.step, s.y

    def incumbents(self) -> np.ndarray:
        return np.array([s.incumbent for s in self.steps])

    def same_run(self, other: "RunTrace") -> bool:
        """Equality of everything except wall-clock times."""
        return (
            self.algorithm == other.algorithm
            and self.seed == other.seed
            and self.steps == other.steps
            and self.truncated == other.truncated
            and self.settings == other.settings
        )


# ---------------------------------------------------------------------------
# policies


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


class Policy:
    """Decides which configuration to thaw next.  ``next`` returns None when stuck."""

    name = "policy"

    def next(self, frontier: np.ndarray) -> int | None:
        raise NotImplementedError

    def observe(self, i: int, b: int, y: float) -> None:
        pass

    def state(self) -> dict:
        raise NotImplementedError


class FTBOPolicy(Policy):
    name = "ftbo"

    def __init__(self, oracle, spec: acq.AcquisitionSpec, cfg: InferenceConfig, rng, history=None):
        self.oracle = oracle
        self.spec = spec
        self.cfg = cfg
        self.rng = rng
        self.history = history if history is not None else []
        meta = TaskMeta(oracle.configs.shape[1], oracle.b_max, oracle.configs)
        self.surrogate = MCSurrogate(meta, cfg)

    def next(self, frontier):
        open_ = np.flatnonzero(frontier < self.oracle.b_max)
        if open_.size == 0:
            return None
        if not self.history:
            return int(self.rng.integers(self.oracle.n_configs))
        cands = [(self.oracle.configs[i], int(frontier[i])) for i in open_]
        hist = History([(self.oracle.configs[i], b, y) for i, b, y in self.history])
        k = acq.generalized_af(self.spec, cands, self.surrogate, hist, self.oracle.b_max, self.rng)
        return int(open_[k])

    def observe(self, i, b, y):
        self.history.append((i, b, y))

    def state(self):
        return {"rng": _rng_state(self.rng)}


class RandomSearchPolicy(Policy):
    """Train uniformly drawn unseen configurations to ``b_max`` one after another."""

    name = "rs"

    def __init__(self, oracle, rng, current=None):
        self.oracle = oracle
        self.rng = rng
        self.current = current

    def next(self, frontier):
        if self.current is not None and frontier[self.current] < self.oracle.b_max:
            return self.current
        unseen = np.flatnonzero(frontier == 0)
        if unseen.size == 0:
            return None
        self.current = int(unseen[self.rng.integers(unseen.size)])
        return self.current

    def state(self):
        return {"rng": _rng_state(self.rng), "current": self.current}


def hyperband_brackets(b_max: int, eta: int = 3, b_min: int = 1) -> list:
    """Brackets as lists of ``(n_configs, budget)`` rungs, most aggressive first."""
    if eta < 2:
        raise ValueError("eta must be >= 2")
    ratio = b_max / b_min
    s_max = int(math.floor(math.log(ratio) / math.log(eta) + 1e-9))
    out = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((s_max + 1) / (s + 1) * eta**s))
        rungs = []
        for i in range(s + 1):
            n_i = int(math.floor(n * eta ** (-i)))
            r_i = b_max if i == s else max(b_min, int(round(b_max * eta ** (i - s))))
            rungs.append((max(n_i, 1), r_i))
        out.append(rungs)
    return out


class HyperbandPolicy(Policy):
    """Synchronous Hyperband where promoted configurations keep their progress.

    Rungs are filled one unit step at a time in member order; a finished rung
    promotes its top ``n_{i+1}`` members by the value observed at the rung
    budget (ties to the lower id).  Brackets cycle until the budget runs out.
    """

    name = "hyperband"

    def __init__(self, oracle, rng, eta: int = 3, state: dict | None = None):
        self.oracle = oracle
        self.rng = rng
        self.eta = eta
        self.brackets = hyperband_brackets(oracle.b_max, eta)
        st = state or {}
        self.bracket = st.get("bracket", 0)
        self.rung = st.get("rung", 0)
        self.members = st.get("members")

    def _sample(self, n, frontier):
        unseen = np.flatnonzero(frontier == 0)
        if unseen.size >= n:
            return [int(i) for i in self.rng.choice(unseen, size=n, replace=False)]
        # space exhausted: top up with partially trained configurations
        rest = np.flatnonzero((frontier > 0) & (frontier < self.oracle.b_max))
        k = min(n - unseen.size, rest.size)
        extra = self.rng.choice(rest, size=k, replace=False) if k else np.empty(0, dtype=int)
        return [int(i) for i in np.concatenate([unseen, extra])]

    def next(self, frontier):
        if np.all(frontier >= self.oracle.b_max):
            return None
        for _ in range(8 * sum(len(b) for b in self.brackets)):
            rungs = self.brackets[self.bracket]
            if self.members is None:
                self.members = self._sample(rungs[0][0], frontier)
            r = rungs[self.rung][1]
            pending = [i for i in self.members if frontier[i] < r]
            if pending:
                return pending[0]
            if self.rung + 1 < len(rungs):
                keep = rungs[self.rung + 1][0]
                ranked = sorted(self.members, key=lambda i: (-self.oracle.evaluate(i, r), i))
                self.members = ranked[:keep]
                self.rung += 1
            else:
                self.bracket = (self.bracket + 1) % len(self.brackets)
                self.rung = 0
                self.members = None
        raise EngineError("hyperband made no progress")

    def state(self):
        return {"rng": _rng_state(self.rng), "bracket": self.bracket, "rung": self.rung, "members": self.members}


# ---------------------------------------------------------------------------
# driver


def _frontier(trace: RunTrace, n: int) -> np.ndarray:
    f = np.zeros(n, dtype=int)
    for s in trace.steps:
        f[s.config_id] = s.step
    return f


def _drive(policy: Policy, oracle, trace: RunTrace) -> RunTrace:
    frontier = _frontier(trace, oracle.n_configs)
    incumbent = trace.steps[-1].incumbent if trace.steps else -np.inf
    while len(trace.steps) < trace.budget:
        t0 = time.perf_counter()
        i = policy.next(frontier)
        if i is None:
            trace.truncated = True
            break
        b = int(frontier[i]) + trace.unit_step
        if b > oracle.b_max:
            raise EngineError(f"policy advanced config {i} past b_max")
        y = oracle.evaluate(i, b)
        frontier[i] = b
        incumbent = max(incumbent, y)
        policy.observe(i, b, y)
        trace.steps.append(Step(len(trace.steps), int(i), b, y, incumbent, time.perf_counter() - t0))
    trace.state = policy.state()
    trace.state["checksum"] = _state_checksum(trace.state)
    return trace


def _state_checksum(state: dict) -> str:
    body = {k: v for k, v in state.items() if k != "checksum"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _check_budget(oracle, B):
    if B < 1:
        raise ValueError("budget must be >= 1")
    if B > oracle.n_configs * oracle.b_max:
        raise ValueError(f"budget {B} exceeds N*b_max = {oracle.n_configs * oracle.b_max}")


def run_ftbo(oracle, cfg: InferenceConfig = HPO_INFERENCE, spec="mfpi-random", B: int = 100, seed: int = 0) -> RunTrace:
    """Freeze-thaw BO: one random start, then thaw the acquisition's pick by one step."""
    _check_budget(oracle, B)
    spec = acq.get_spec(spec) if isinstance(spec, str) else spec
    rng = np.random.default_rng(seed)
    cfg = InferenceConfig(**{**asdict(cfg), "seed": int(rng.integers(2**31))})
    settings = {"acquisition": spec.name or repr(spec), "spec": asdict(spec), "inference": asdict(cfg)}
    trace = RunTrace(f"ftbo:{spec.name}", seed, B, settings=settings)
    return _drive(FTBOPolicy(oracle, spec, cfg, rng), oracle, trace)


def run_random_search(oracle, B: int, seed: int = 0) -> RunTrace:
    _check_budget(oracle, B)
    trace = RunTrace("rs", seed, B)
    return _drive(RandomSearchPolicy(oracle, np.random.default_rng(seed)), oracle, trace)


def run_hyperband(oracle, B: int, eta: int = 3, seed: int = 0) -> RunTrace:
    _check_budget(oracle, B)
    trace = RunTrace("hyperband", seed, B, settings={"eta": eta})
    return _drive(HyperbandPolicy(oracle, np.random.default_rng(seed), eta), oracle, trace)


def _restore(trace: RunTrace, oracle) -> Policy:
    st = trace.state
    if not st or st.get("checksum") != _state_checksum(st):
        raise EngineError("trace state is missing or corrupted; refusing to continue")
    try:
        rng = _rng_from(st["rng"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EngineError(f"invalid RNG state: {exc}") from exc
    if trace.algorithm == "rs":
        return RandomSearchPolicy(oracle, rng, st.get("current"))
    if trace.algorithm == "hyperband":
        return HyperbandPolicy(oracle, rng, trace.settings["eta"], st)
    if trace.algorithm.startswith("ftbo:"):
        spec = acq.AcquisitionSpec(**trace.settings["spec"])
        cfg = InferenceConfig(**trace.settings["inference"])
        hist = [(s.config_id, s.step, s.y) for s in trace.steps]
        return FTBOPolicy(oracle, spec, cfg, rng, hist)
    raise EngineError(f"unknown algorithm {trace.algorithm!r}")


def continue_run(trace: RunTrace, oracle, additional_budget: int) -> RunTrace:
    """Extend a finished run; equals a fresh run with the larger budget."""
    if trace.version != ENGINE_VERSION:
        raise EngineError(f"trace version {trace.version} != engine version {ENGINE_VERSION}")
    if additional_budget < 0:
        raise ValueError("additional budget must be nonnegative")
    policy = _restore(trace, oracle)
    new = RunTrace(
        trace.algorithm,
        trace.seed,
        trace.budget + additional_budget,
        list(trace.steps),
        trace.unit_step,
        False,
        dict(trace.settings),
        dict(trace.state),
        trace.version,
        dict(trace.meta),
    )
    if additional_budget == 0 or trace.truncated:
        new.truncated = trace.truncated
        new.budget = trace.budget if trace.truncated else new.budget
        return new
    _check_budget(oracle, new.budget)
    return _drive(policy, oracle, new)


# ---------------------------------------------------------------------------
# serialisation


def write_trace(trace: RunTrace, path) -> tuple:
    """Write ``<path>.csv`` and its ``<path>.json`` sidecar; returns both paths."""
    path = Path(path)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in trace.steps:
            w.writerow([s.iter, s.config_id, s.step, repr(s.y), repr(s.incumbent)])
    side = {
        "algorithm": trace.algorithm,
        "seed": trace.seed,
        "budget": trace.budget,
        "unit_step": trace.unit_step,
        "truncated": trace.truncated,
        "settings": trace.settings,
        "state": trace.state,
        "version": trace.version,
        "wall_time": [s.wall_time for s in trace.steps],
        "meta": trace.meta,
    }
    json_path.write_text(json.dumps(side, sort_keys=True, indent=1))
    return csv_path, json_path


def read_trace(path) -> RunTrace:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    walls = side.get("wall_time", [])
    steps = []
    with open(path.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise EngineError(f"unexpected trace header {rows[0]}")
    for k, r in enumerate(rows[1:]):
        steps.append(
            Step(int(r[0]), int(r[1]), int(r[2]), float(r[3]), float(r[4]), walls[k] if k < len(walls) else 0.0)
        )
    return RunTrace(
        side["algorithm"],
        side["seed"],
        side["budget"],
        steps,
        side.get("unit_step", 1),
        side.get("truncated", False),
        side.get("settings", {}),
        side.get("state", {}),
        side.get("version", "?"),
        side.get("meta", {}),
    )


ALGORITHMS = ("ifbo", "rs", "hyperband")


def run_algorithm(name: str, oracle, B: int, seed: int, cfg: InferenceConfig = HPO_INFERENCE, eta: int = 3) -> RunTrace:
    """Dispatch by name: ``ifbo``, ``rs``, ``hyperband``, ``ftbo:<acq>`` or a bare acquisition name."""
    if name == "rs":
        return run_random_search(oracle, B, seed)
    if name == "hyperband":
        return run_hyperband(oracle, B, eta, seed)
    if name == "ifbo":
        return run_ftbo(oracle, cfg, "mfpi-random", B, seed)
    acq_name = name.split(":", 1)[1] if name.startswith("ftbo:") else name
    try:
        spec = acq.get_spec(acq_name)
    except KeyError:
        raise KeyError(
            f"unknown algorithm {name!r}; known: {', '.join(ALGORITHMS)}, ftbo:<acq> with acq in "
            f"{', '.join(acq.acquisition_names())}"
        ) from None
    return run_ftbo(oracle, cfg, spec, B, seed)
