"""Command-line pipeline: load data, train a model, generate counterfactuals, score.

Subcommands: global, region, sweep, compare, fixture. Settings come from
built-in defaults, then an optional JSON config file (``--config``), then
explicit flags. Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

One top-level seed drives everything through fixed offsets:
split = seed, model = seed + 1, factual sampling = seed + 2,
counterfactuals = seed + 3 (+ test-row index per factual), region query = seed + 4.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .baseline import DEFAULT_EPSILON, dice_importance, equivalence_check, matched_tau
from .cfgen import GenerationError, GeneratorConfig, generate_batch, sample_factuals, sparsity_profile
from .dataset import (DatasetError, accident_spec, load_csv, planted_spec, split,
                      synthesize_fixture, write_csv)
from .flex import FlexError, FlexResult, ThresholdVector, flex_scores, monotonicity_summary, tau_sweep
from .model import ModelError, external_predictor, train_forest, train_knn
from .regional import RegionError, RegionReport, RowFilter, build_region, correlate, mode_shift
from .report import REPORT_SCHEMA, ReportError, compare, dumps_csv, dumps_json, rank

logger = logging.getLogger("flexcf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

SPLIT_OFFSET, MODEL_OFFSET, SAMPLE_OFFSET, CF_OFFSET, REGION_OFFSET = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    schema: str | None = None
    seed: int = 0
    train_fraction: float = 0.8
    # model
    model: str = "forest"
    n_trees: int = 50
    max_depth: int = 8
    k: int = 5
    command: str | None = None
    timeout: float = 30.0
    # generator
    strategy: str = "sparse_search"
    n_cf: int = 10
    max_changes: int | None = None
    search_budget: int = 500
    sparsity_weight: float = 1.0
    # analysis
    n_factuals: int = 200
    tau: float = 0.05
    epsilon: float = DEFAULT_EPSILON
    taus: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    filter: list = field(default_factory=list)
    n_members: int = 5
    distance: str | None = None
    global_result: str | None = None
    no_global: bool = False
    jobs: int = 1
    # fixture
    kind: str = "planted"
    n_rows: int = 1000
    label_noise: float = 0.0

    @classmethod
    def resolve(cls, file_values: dict, flag_values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        merged = {}
        for source in (file_values, flag_values):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key not in known:
                    raise UsageError(f"unknown configuration key {key!r}")
                merged[key] = value
        cfg = cls(**merged)
        if isinstance(cfg.taus, str):
            cfg.taus = [float(t) for t in cfg.taus.split(",") if t.strip()]
        if isinstance(cfg.filter, str):
            cfg.filter = [cfg.filter]
        return cfg

    def generator(self) -> GeneratorConfig:
        try:
            return GeneratorConfig(self.strategy, self.n_cf, self.max_changes, self.search_budget,
                                   self.sparsity_weight, self.seed + CF_OFFSET)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def echo(self, command: str) -> dict:
        return {"subcommand": command, "version": __version__, **asdict(self)}


# -- shared pipeline ---------------------------------------------------------


class _Run:
    """Output directory bookkeeping plus the data/model steps every command shares."""

    def __init__(self, cfg: RunConfig, out: Path, command: str):
        self.cfg = cfg
        self.out = out
        self.command = command
        self.files: dict[str, str] = {}
        self.warnings: list[str] = []
        self.model = None
        out.mkdir(parents=True, exist_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        close = getattr(self.model, "close", None)
        if close is not None:
            close()

    def write(self, name: str, doc, fmt: str = "json"):
        text = dumps_json(doc) if fmt == "json" else dumps_csv(doc)
        data = text.encode("utf-8")
        (self.out / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def warn(self, msg: str):
        logger.warning(msg)
        self.warnings.append(msg)

    def finish(self):
        self.write("config.json", self.cfg.echo(self.command))
        manifest = {"schema": REPORT_SCHEMA, "subcommand": self.command,
                    "files": [{"name": k, "sha256": self.files[k]} for k in sorted(self.files)]}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    def load(self):
        cfg = self.cfg
        if not cfg.data or not cfg.schema:
            raise UsageError("--data and --schema are required")
        self.ds = load_csv(cfg.data, cfg.schema)
        self.train, self.test = split(self.ds, cfg.train_fraction, cfg.seed + SPLIT_OFFSET)
        self.model = self._model()
        return self

    def _model(self):
        cfg = self.cfg
        if cfg.model == "forest":
            model = train_forest(self.train, cfg.n_trees, cfg.max_depth, cfg.seed + MODEL_OFFSET)
            self.write("model.json", model.to_dict())
            return model
        if cfg.model == "knn":
            try:
                return train_knn(self.train, cfg.k)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        if cfg.model == "external":
            if not cfg.command:
                raise UsageError("--command is required for the external model")
            return external_predictor(cfg.command, cfg.timeout)
        raise UsageError(f"unknown model {cfg.model!r}")

    def metadata(self) -> dict:
        return {"dataset": self.ds.fingerprint(), "seed": self.cfg.seed,
                "generator": self.cfg.strategy, "n_cf": self.cfg.n_cf}

    def counterfactuals(self, test_indices):
        res = generate_batch([self.test.rows[i] for i in test_indices], self.train, self.model,
                             self.cfg.generator(), indices=test_indices, n_jobs=self.cfg.jobs)
        for s in res.skipped:
            self.warn(f"test row {s.index} skipped: {s.reason}")
        if not res.sets:
            raise GenerationError("no counterfactuals could be generated for any factual")
        return res

    def global_sample(self):
        idx = sample_factuals(self.test, self.model, self.cfg.n_factuals, self.cfg.seed + SAMPLE_OFFSET)
        if idx.size == 0:
            raise DatasetError("zero eligible (undesirable-predicted) test instances")
        if idx.size < self.cfg.n_factuals:
            self.warn(f"only {idx.size} eligible factuals, fewer than n_factuals={self.cfg.n_factuals}; "
                      "using all of them")
        return [int(i) for i in idx]

    def write_cfsets(self, name, sets):
        self.write(name, {"kind": "counterfactuals",
                          "sets": [s.to_dict(self.ds.schema) for s in sets]})

    def diagnostics(self, res, factual_indices):
        return {
            "kind": "diagnostics",
            "factual_test_indices": factual_indices,
            "skipped": [s.to_dict() for s in res.skipped],
            "shortfalls": {str(s.factual_index): s.shortfall for s in res.sets if s.shortfall},
            "sparsity": sparsity_profile(res.sets),
            "warnings": list(self.warnings),
        }


def _tau(cfg):
    try:
        return ThresholdVector(cfg.tau)
    except FlexError as exc:
        raise UsageError(str(exc)) from None


def cmd_global(cfg: RunConfig, out: Path) -> FlexResult:
    with _Run(cfg, out, "global") as run:
        run.load()
        return _global_body(cfg, run)


def _global_body(cfg, run):
    factuals = run.global_sample()
    res = run.counterfactuals(factuals)
    result = flex_scores(res.sets, run.ds.schema, _tau(cfg))
    run.write("flex.json", result)
    run.write("ranking.csv", rank(result, run.metadata()), "csv")
    run.write_cfsets("counterfactuals.json", res.sets)
    run.write("diagnostics.json", run.diagnostics(res, factuals))
    run.finish()
    return result


def cmd_region(cfg: RunConfig, out: Path) -> RegionReport:
    if cfg.no_global and not cfg.global_result:
        raise UsageError("correlation requires global result (give --global-result or drop --no-global)")
    with _Run(cfg, out, "region") as run:
        run.load()
        return _region_body(cfg, run)


def _region_body(cfg, run):
    try:
        row_filter = RowFilter.parse(cfg.filter) if cfg.filter else None
    except RegionError as exc:
        raise UsageError(str(exc)) from None
    region = build_region(run.test, run.model, row_filter, cfg.n_members,
                          cfg.seed + REGION_OFFSET, cfg.distance)
    members = list(region.member_indices)
    res = run.counterfactuals(members)
    if res.skipped:
        raise GenerationError("counterfactual generation failed for region members: "
                              + ", ".join(str(s.index) for s in res.skipped))
    tau = _tau(cfg)
    regional = flex_scores(res.sets, run.ds.schema, tau)
    shifts = mode_shift(region, res.sets, run.test)

    if cfg.global_result:
        with open(cfg.global_result, encoding="utf-8") as fh:
            global_ = FlexResult.from_dict(json.load(fh))
    else:
        gres = run.counterfactuals(run.global_sample())
        global_ = flex_scores(gres.sets, run.ds.schema, tau)
        run.write("global_flex.json", global_)
    report = RegionReport(region, regional, shifts, correlate(regional, global_))
    run.write("region.json", report)
    run.write("scatter.csv", report.scatter_rows(), "csv")
    run.write("ranking.csv", rank(regional, run.metadata()), "csv")
    run.write_cfsets("counterfactuals.json", res.sets)
    run.write("diagnostics.json", run.diagnostics(res, members))
    run.finish()
    return report


def cmd_sweep(cfg: RunConfig, out: Path) -> list:
    taus = [float(t) for t in cfg.taus]
    if not taus:
        raise UsageError("empty tau list")
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise UsageError(f"taus must be sorted ascending, got {taus}")
    with _Run(cfg, out, "sweep") as run:
        run.load()
        return _sweep_body(cfg, run)


def _sweep_body(cfg, run):
    taus = [float(t) for t in cfg.taus]
    factuals = run.global_sample()
    res = run.counterfactuals(factuals)
    sweep = tau_sweep(res.sets, run.ds.schema, taus)
    long_rows = []
    for t, result in sweep:
        run.write(f"sweep_tau_{t:g}.json", result)
        for j, name in enumerate(result.feature_names):
            long_rows.append({"tau": t, "feature": name, "phi_mean": float(result.phi[j]),
                              "phi_std": float(result.phi_std[j]), "mu": float(result.mu[j])})
    summary = {"kind": "sweep_summary", "taus": taus,
               "non_increasing": monotonicity_summary(sweep), "notes": []}
    if not run.ds.continuous_mask.any():
        summary["notes"].append("no continuous features: categorical results do not depend on tau")
        logger.warning(summary["notes"][-1])
    run.write("sweep.csv", long_rows, "csv")
    run.write("sweep_summary.json", summary)
    run.write("diagnostics.json", run.diagnostics(res, factuals))
    run.finish()
    return sweep


def cmd_compare(cfg: RunConfig, out: Path) -> dict:
    with _Run(cfg, out, "compare") as run:
        run.load()
        return _compare_body(cfg, run)


def _compare_body(cfg, run):
    factuals = run.global_sample()
    res = run.counterfactuals(factuals)
    schema = run.ds.schema
    flex = flex_scores(res.sets, schema, _tau(cfg))
    flex_matched = flex_scores(res.sets, schema, matched_tau(schema, cfg.epsilon))
    dice = dice_importance(res.sets, schema, cfg.epsilon)
    meta = run.metadata()
    tables = [rank(flex, meta), rank(flex_matched, meta, "flex_matched"), rank(dice, meta)]
    doc = compare(tables, ["flex", "flex_matched", "dice"])
    equiv = equivalence_check(res.sets, schema, cfg.epsilon)
    run.write("flex.json", flex)
    run.write("dice.json", dice)
    run.write("comparison.json", doc)
    run.write("equivalence.json", equiv)
    for t in tables:
        run.write(f"ranking_{t.rows[0].method}.csv", t, "csv")
    run.write("diagnostics.json", run.diagnostics(res, factuals))
    run.finish()
    return {"comparison": doc, "equivalence": equiv}


def cmd_fixture(cfg: RunConfig, out: Path):
    if cfg.kind == "planted":
        spec = planted_spec(cfg.n_rows)
    elif cfg.kind == "accident":
        spec = accident_spec(cfg.n_rows, cfg.label_noise)
    else:
        raise UsageError(f"unknown fixture kind {cfg.kind!r}")
    ds = synthesize_fixture(spec, cfg.seed)
    run = _Run(cfg, out, "fixture")
    write_csv(ds, out / "data.csv", out / "schema.json")
    for name in ("data.csv", "schema.json"):
        run.files[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    run.finish()
    return ds


COMMANDS = {"global": cmd_global, "region": cmd_region, "sweep": cmd_sweep,
            "compare": cmd_compare, "fixture": cmd_fixture}


# -- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexcf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true", default=False)

    analysis = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    g = analysis.add_argument_group("data")
    g.add_argument("--data", help="CSV file")
    g.add_argument("--schema", help="schema JSON file")
    g.add_argument("--train-fraction", type=float)
    g = analysis.add_argument_group("model")
    g.add_argument("--model", choices=["forest", "knn", "external"])
    g.add_argument("--n-trees", type=int)
    g.add_argument("--max-depth", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--command", help="external predictor command line")
    g.add_argument("--timeout", type=float, help="seconds per batch for the external predictor")
    g = analysis.add_argument_group("counterfactuals")
    g.add_argument("--strategy", choices=["nearest_unlike_neighbor", "sparse_search"])
    g.add_argument("--n-cf", type=int)
    g.add_argument("--max-changes", type=int)
    g.add_argument("--search-budget", type=int)
    g.add_argument("--sparsity-weight", type=float)
    g.add_argument("--jobs", type=int, help="worker threads across factuals")
    g = analysis.add_argument_group("scoring")
    g.add_argument("--n-factuals", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--epsilon", type=float)

    sub.add_parser("global", parents=[common, analysis], help="global feature change frequencies",
                   argument_default=argparse.SUPPRESS)
    p = sub.add_parser("region", parents=[common, analysis], help="regional scores and diagnostics",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--filter", action="append",
                   help='clause "feat=value", "feat in {a,b}" or "feat between lo,hi" (repeatable)')
    p.add_argument("--n-members", type=int)
    p.add_argument("--distance", choices=["hamming", "mixed"])
    p.add_argument("--global-result", help="flex.json from a previous global run")
    p.add_argument("--no-global", action="store_true", help="do not compute a fresh global result")
    p = sub.add_parser("sweep", parents=[common, analysis], help="threshold sweep",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--taus", type=_floats, help="comma-separated, ascending")
    sub.add_parser("compare", parents=[common, analysis], help="FLEX versus pooled baseline",
                   argument_default=argparse.SUPPRESS)
    p = sub.add_parser("fixture", parents=[common], help="write a synthetic dataset",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--kind", choices=["planted", "accident"])
    p.add_argument("--n-rows", type=int)
    p.add_argument("--label-noise", type=float)
    return parser


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the command's result."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("subcommand")
    out = Path(args.pop("out"))
    args.pop("verbose", None)
    file_values = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        file_values.pop("subcommand", None)
        file_values.pop("version", None)
    try:
        cfg = RunConfig.resolve(file_values, args)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    return COMMANDS[command](cfg, out)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, RegionError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, GenerationError, FlexError, ReportError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # last resort: never exit with a bare traceback
        logging.getLogger("flexcf").debug("unhandled", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
