"""Experiment schedules: configuration, runner, snapshot tables and benchmarks.

A schedule starts from an initial network trained on the first
``initial_samples`` training rows and then applies ``steps`` in order.
Each update is timed in two parts: generating node values
(``node_time_s``) and updating the factor and weights
(``additional_time_s``); ``accumulative_time_s`` sums the latter.  Every
step produces a row; steps with ``snapshot: false`` skip the test-set
evaluation and leave the accuracy empty.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import data as dataio
from . import learners as L
from . import network
from .full import accuracy, full_add_nodes, full_add_rows, full_fit
from .linalg import BatchConfig, NotSPDError
from .oracle import direct_ridge

__all__ = [
    "ALGORITHMS",
    "BENCH_SCHEMA",
    "REPORT_SCHEMA",
    "SNAPSHOT_COLUMNS",
    "BenchReport",
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "Session",
    "SnapshotRow",
    "bench",
    "format_table",
    "load_config",
    "load_dataset",
    "run",
]

ALGORITHMS = ("rec-input", "sqrt-input", "sqrt-node", "full")
REPORT_SCHEMA = "ridgestream.snapshot/1"
BENCH_SCHEMA = "ridgestream.bench/1"
SNAPSHOT_COLUMNS = (
    "step",
    "label",
    "samples",
    "nodes",
    "test_accuracy",
    "additional_time_s",
    "accumulative_time_s",
    "node_time_s",
    "oracle_accuracy",
)


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthData(_Strict):
    kind: Literal["synth"] = "synth"
    train: int = Field(gt=0)
    test: int = Field(ge=0)
    features: int = Field(20, gt=0)
    classes: int = Field(4, ge=2)
    noise: float = Field(1.0, ge=0)
    separation: float = Field(3.0, gt=0)
    seed: int | None = None  # defaults to the experiment seed


class IdxData(_Strict):
    kind: Literal["idx"] = "idx"
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    train_limit: int | None = Field(None, gt=0)
    test_limit: int | None = Field(None, ge=0)
    classes: int = Field(10, ge=2)
    scale: float = Field(1.0 / 255.0, gt=0)


class LayoutConfig(_Strict):
    feature_groups: int = Field(10, ge=0)
    feature_width: int = Field(10, ge=0)
    enhancement_groups: int = Field(1, ge=0)
    enhancement_width: int = Field(100, ge=0)
    enhancement_scale: float = 0.8
    fine_tune: bool = True
    sparsity: float = Field(1e-3, ge=0)
    fine_tune_iters: int = Field(50, ge=0)
    feature_bias: bool = True
    feature_activation: Literal["identity", "tansig", "sigmoid", "relu"] = "identity"
    enhancement_activation: Literal["identity", "tansig", "sigmoid", "relu"] = "tansig"

    def build(self):
        return network.NetworkLayout(**self.model_dump())


class AddInputs(_Strict):
    op: Literal["add_inputs"]
    p: int = Field(gt=0)
    snapshot: bool = True

    @property
    def label(self):
        return f"+{self.p} inputs"


class AddEnhancement(_Strict):
    op: Literal["add_enhancement"]
    q: int = Field(gt=0)
    snapshot: bool = True

    @property
    def label(self):
        return f"+{self.q} enhancement"


class AddFeature(_Strict):
    op: Literal["add_feature"]
    width: int = Field(gt=0)
    cross: int = Field(0, ge=0)
    snapshot: bool = True

    @property
    def label(self):
        return f"+{self.width} feature/+{self.cross} cross"


Step = Annotated[Union[AddInputs, AddEnhancement, AddFeature], Field(discriminator="op")]


class BenchOptions(_Strict):
    algorithms: list[Literal["rec-input", "sqrt-input", "sqrt-node", "full"]] | None = None
    repeats: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    algorithm: Literal["rec-input", "sqrt-input", "sqrt-node", "full"] = "full"
    lam: float = Field(gt=0)
    batch: int = Field(ge=1)
    seed: int = Field(0, ge=0)
    data: Annotated[Union[SynthData, IdxData], Field(discriminator="kind")]
    layout: LayoutConfig = LayoutConfig()
    initial_samples: int | None = Field(None, gt=0)
    steps: list[Step] = []
    oracle: bool = False
    bench: BenchOptions = BenchOptions()

    @model_validator(mode="after")
    def _consistent(self):
        check_steps(self.algorithm, self.steps)
        return self

    @property
    def has_input_steps(self):
        return any(isinstance(s, AddInputs) for s in self.steps)

    @property
    def has_node_steps(self):
        return any(not isinstance(s, AddInputs) for s in self.steps)

    def with_(self, **changes):
        return self.model_validate({**self.model_dump(), **changes})


def check_steps(algorithm, steps):
    kinds = {type(s) for s in steps}
    if algorithm in ("rec-input", "sqrt-input") and kinds - {AddInputs}:
        raise ValueError(f"{algorithm} schedules may only add inputs")
    if algorithm == "sqrt-node" and AddInputs in kinds:
        raise ValueError("sqrt-node schedules may only add nodes")


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror or err}") from None
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as err:
        raise ConfigError(f"invalid config {path}:\n{err}") from None


# -- data ---------------------------------------------------------------------


def load_dataset(cfg):
    """``(train, test)`` :class:`~ridgestream.data.Dataset` pair for a config."""
    source = cfg.data
    if isinstance(source, SynthData):
        seed = cfg.seed if source.seed is None else source.seed
        return dataio.synth_split(
            seed, source.train, source.test, source.features, source.classes, source.noise, source.separation
        )

    def pair(images, labels, limit):
        x = dataio.load_idx_images(images, source.scale)
        lab = dataio.load_idx_labels(labels)
        if x.shape[0] != lab.shape[0]:
            raise dataio.IDXError(f"{x.shape[0]} images but {lab.shape[0]} labels", 4, str(labels))
        if limit is not None:
            x, lab = x[:limit], lab[:limit]
        return dataio.Dataset(x, dataio.one_hot(lab, source.classes), lab, source.classes)

    return (
        pair(source.train_images, source.train_labels, source.train_limit),
        pair(source.test_images, source.test_labels, source.test_limit),
    )


# -- sessions -----------------------------------------------------------------


def _step_seed(seed, step):
    return int(np.random.SeedSequence([int(seed), 2, int(step)]).generate_state(1)[0])


class Session:
    """One learner plus the network that feeds it.

    Each method returns ``(update_seconds, node_seconds)``.
    """

    def __init__(self, algorithm, cfg, layout, seed):
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        self.algorithm = algorithm
        self.cfg = cfg
        self.layout = layout
        self.seed = seed
        self.state = None
        self.params = None
        self.x = None
        self.y = None

    @property
    def samples(self):
        return 0 if self.x is None else self.x.shape[0]

    @property
    def nodes(self):
        return 0 if self.params is None else self.params.k

    def init(self, x, y):
        t0 = time.perf_counter()
        a, self.params = network.initialize(x, self.layout, self.seed)
        t1 = time.perf_counter()
        fit = {"rec-input": L.rec_fit, "sqrt-input": L.sqrt_fit, "sqrt-node": L.node_fit, "full": full_fit}
        self.state = fit[self.algorithm](a, y, self.cfg)
        t2 = time.perf_counter()
        if self.algorithm == "full":
            self.state = replace(self.state, params=self.params, x=x)
        self.x, self.y = x, y
        return t2 - t1, t1 - t0

    def add_inputs(self, x, y):
        t0 = time.perf_counter()
        a_p = network.add_inputs(x, self.params)
        t1 = time.perf_counter()
        if self.algorithm == "rec-input":
            self.state = L.rec_add_inputs(self.state, a_p, y)
        elif self.algorithm == "sqrt-input":
            self.state = L.sqrt_add_inputs(self.state, a_p, y)
        elif self.algorithm == "full":
            self.state = full_add_rows(self.state, a_p, y, x_new=x)
        else:
            raise ValueError(f"{self.algorithm} cannot add inputs")
        t2 = time.perf_counter()
        self.x, self.y = np.vstack([self.x, x]), np.vstack([self.y, y])
        return t2 - t1, t1 - t0

    def _add_columns(self, a_q, params):
        t1 = time.perf_counter()
        if self.algorithm == "sqrt-node":
            self.state = L.node_add(self.state, a_q)
        elif self.algorithm == "full":
            self.state = full_add_nodes(self.state, a_q, params)
        else:
            raise ValueError(f"{self.algorithm} cannot add nodes")
        self.params = params
        return time.perf_counter() - t1

    def add_enhancement(self, count, seed):
        t0 = time.perf_counter()
        a_q, params = network.add_enhancement_nodes(self.state.a, self.params, count, seed)
        node_time = time.perf_counter() - t0
        return self._add_columns(a_q, params), node_time

    def add_feature(self, width, cross, seed):
        t0 = time.perf_counter()
        a_q, params = network.add_feature_nodes(self.x, self.params, width, cross, seed)
        node_time = time.perf_counter() - t0
        return self._add_columns(a_q, params), node_time

    def node_matrix(self, x):
        return network.add_inputs(x, self.params)

    def predict(self, x):
        return L.predict(self.state, self.node_matrix(x))

    def oracle_predict(self, x):
        sol = direct_ridge(self.node_matrix(self.x), self.y, self.cfg.lam)
        return self.node_matrix(x) @ sol.w


# -- runs -----------------------------------------------------------------------


@dataclass
class SnapshotRow:
    step: int
    label: str
    samples: int
    nodes: int
    test_accuracy: float | None  # percent; None when the step is not evaluated
    additional_time_s: float
    accumulative_time_s: float
    node_time_s: float
    oracle_accuracy: float | None = None


@dataclass
class RunReport:
    algorithm: str
    seed: int
    lam: float
    batch: int
    rows: list = field(default_factory=list)
    breakdown: dict | None = None
    session: Session | None = None

    @property
    def exit_code(self):
        return 2 if self.breakdown else 0

    def as_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "lam": self.lam,
            "batch": self.batch,
            "rows": [asdict(r) for r in self.rows],
            "breakdown": self.breakdown,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def to_csv(self, dest=None):
        return dataio.write_csv([asdict(r) for r in self.rows], SNAPSHOT_COLUMNS, dest)


def _percent(scores, labels):
    return 100.0 * accuracy(scores, labels)


def run(cfg, datasets=None, algorithm=None):
    """Execute a schedule; a nonpositive pivot ends the run with ``breakdown`` set."""
    algorithm = algorithm or cfg.algorithm
    check_steps(algorithm, cfg.steps)
    train, test = datasets if datasets is not None else load_dataset(cfg)
    l0 = cfg.initial_samples or len(train) - sum(s.p for s in cfg.steps if isinstance(s, AddInputs))
    needed = l0 + sum(s.p for s in cfg.steps if isinstance(s, AddInputs))
    if l0 < 1 or needed > len(train):
        raise ConfigError(f"schedule needs {needed} training rows (initial {l0}), dataset has {len(train)}")

    session = Session(algorithm, BatchConfig(cfg.lam, cfg.batch), cfg.layout.build(), cfg.seed)
    report = RunReport(algorithm, cfg.seed, cfg.lam, cfg.batch, session=session)
    total = 0.0

    def snapshot(step, label, update_s, node_s, evaluate=True):
        nonlocal total
        total += update_s
        acc = oracle = None
        if evaluate and len(test):
            acc = _percent(session.predict(test.x), test.labels)
            if cfg.oracle:
                oracle = _percent(session.oracle_predict(test.x), test.labels)
        report.rows.append(
            SnapshotRow(step, label, session.samples, session.nodes, acc, update_s, total, node_s, oracle)
        )

    def broke(step, label, err):
        report.breakdown = {
            "step": step,
            "label": label,
            "message": str(err),
            "pivot_index": err.pivot_index,
            "pivot": err.pivot,
            "batch_index": err.batch_index,
        }

    try:
        update_s, node_s = session.init(train.x[:l0], train.y[:l0])
    except NotSPDError as err:
        broke(0, "initial", err)
        return report
    snapshot(0, "initial", update_s, node_s)

    seen = l0
    for i, step in enumerate(cfg.steps, start=1):
        try:
            if isinstance(step, AddInputs):
                rows = slice(seen, seen + step.p)
                update_s, node_s = session.add_inputs(train.x[rows], train.y[rows])
                seen += step.p
            elif isinstance(step, AddEnhancement):
                update_s, node_s = session.add_enhancement(step.q, _step_seed(cfg.seed, i))
            else:
                update_s, node_s = session.add_feature(step.width, step.cross, _step_seed(cfg.seed, i))
        except NotSPDError as err:
            broke(i, step.label, err)
            break
        snapshot(i, step.label, update_s, node_s, evaluate=step.snapshot)
    return report


def format_table(rows, columns):
    """Fixed-width text table for the console."""
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 1e4 else f"{v:.3e}"
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


# -- benchmarks -------------------------------------------------------------------

_RATIOS = {
    # numerator / denominator of additional update time
    "sqrt_node_over_full": ("sqrt-node", "full"),
    "sqrt_input_over_rec_input": ("sqrt-input", "rec-input"),
    "sqrt_input_over_full": ("sqrt-input", "full"),
}


def _bench_algorithms(cfg):
    if cfg.bench.algorithms:
        return list(cfg.bench.algorithms)
    if cfg.has_input_steps and cfg.has_node_steps:
        return ["full"]
    if cfg.has_node_steps:
        return ["sqrt-node", "full"]
    return ["rec-input", "sqrt-input", "full"]


@dataclass
class BenchReport:
    algorithms: list
    rows: list
    columns: list
    breakdowns: dict

    @property
    def exit_code(self):
        return 2 if any(self.breakdowns.values()) else 0

    def as_dict(self):
        return {"schema": BENCH_SCHEMA, "algorithms": self.algorithms, "rows": self.rows, "breakdowns": self.breakdowns}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def to_csv(self, dest=None):
        return dataio.write_csv(self.rows, self.columns, dest)

    def ratio(self, name, start=1):
        """Per-step values of one ratio column, skipping the initial fit row by default."""
        return [r[name] for r in self.rows[start:] if r.get(name) is not None]


def bench(cfg, datasets=None):
    """Run the schedule once per algorithm on the same data and seeds.

    Per-step times are the minimum over ``cfg.bench.repeats`` runs.
    """
    algorithms = _bench_algorithms(cfg)
    datasets = datasets if datasets is not None else load_dataset(cfg)
    plain = cfg.with_(oracle=False)
    reports = {}
    for alg in algorithms:
        runs = [run(plain, datasets, alg) for _ in range(cfg.bench.repeats)]
        best = runs[0]
        for other in runs[1:]:
            for row, o in zip(best.rows, other.rows):
                row.additional_time_s = min(row.additional_time_s, o.additional_time_s)
                row.node_time_s = min(row.node_time_s, o.node_time_s)
        acc = 0.0
        for row in best.rows:
            acc += row.additional_time_s
            row.accumulative_time_s = acc
        reports[alg] = best

    columns = ["step", "label", "samples", "nodes"]
    for alg in algorithms:
        key = alg.replace("-", "_")
        columns += [f"{key}_accuracy", f"{key}_time_s", f"{key}_accumulative_s", f"{key}_node_time_s"]
    ratios = [name for name, (num, den) in _RATIOS.items() if num in reports and den in reports]
    columns += ratios

    rows = []
    ref = reports[algorithms[0]]
    for i, base in enumerate(ref.rows):
        row = {"step": base.step, "label": base.label, "samples": base.samples, "nodes": base.nodes}
        for alg in algorithms:
            key = alg.replace("-", "_")
            r = reports[alg].rows[i] if i < len(reports[alg].rows) else None
            row[f"{key}_accuracy"] = r.test_accuracy if r else None
            row[f"{key}_time_s"] = r.additional_time_s if r else None
            row[f"{key}_accumulative_s"] = r.accumulative_time_s if r else None
            row[f"{key}_node_time_s"] = r.node_time_s if r else None
        for name in ratios:
            num, den = (row[f"{a.replace('-', '_')}_time_s"] for a in _RATIOS[name])
            row[name] = num / den if num is not None and den else None
        rows.append(row)
    return BenchReport(algorithms, rows, columns, {alg: reports[alg].breakdown for alg in algorithms})
