"""Command line interface.

One command per invocation: ``fme`` (per-observation effects), ``ame``
(model summary table), ``came`` (subgroup partitioning), ``train``
(fit and save a built-in model), ``fetch-bikes`` (convert the raw
bike rental CSV). Summaries print to stdout; ``--out DIR`` writes the
JSON artifacts (plus CSV/text/SVG siblings depending on ``--format``).
Every JSON artifact embeds the run configuration, so a rerun with the
same flags reproduces it byte for byte.

Exit codes: 0 success, 2 invalid input or usage, 3 computation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

from fmekit.aggregate import AmeTable, ame, ame_table
from fmekit.bikes import convert_day_csv
from fmekit.dataset import Dataset, load_csv, read_schema
from fmekit.errors import ComputationError, FmeError, ValidationError
from fmekit.fme import (
    CategoricalStep,
    Envelope,
    FmeResultSet,
    NumericStep,
    compute_fme,
    parse_step,
)
from fmekit.nlm import NlmSettings, average_nlm
from fmekit.partition import (
    ExactGroups,
    MaxSd,
    PartitioningOptions,
    came_summary,
    fit_partition,
)
from fmekit.predictor import (
    CartOptions,
    ForestOptions,
    load_model,
    save_model,
    train_cart,
    train_forest,
    train_linear,
)
from fmekit import viz

_TRAIN_SPEC = re.compile(r"(linear|cart|forest)(?:\((.*)\))?\Z")
_INT_OPTS = {"trees", "mtry", "seed", "max_depth", "min_node_size"}
_FLOAT_OPTS = {"min_sse_improvement"}


class RunConfig:
    """Everything a command needs, in a serializable form. The dict
    form goes into each output's provenance so results are traceable
    to the exact invocation."""

    _FIELDS = (
        "command", "data", "schema", "target", "model", "step", "features",
        "steps", "ep", "envelope_data", "nlm", "nlm_panels", "partitions",
        "max_sd", "exclude_step_features", "out", "seed", "jobs", "format",
    )

    def __init__(self, args: argparse.Namespace):
        for name in self._FIELDS:
            setattr(self, name, getattr(args, name, None))

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self._FIELDS}


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _out_dir(args) -> str | None:
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_data(args) -> Dataset:
    if not args.data:
        raise ValidationError("--data is required")
    schema = read_schema(args.schema) if args.schema else None
    return load_csv(args.data, schema=schema, target=getattr(args, "target", None))


def _train_options(raw: str | None, default_seed: int | None) -> dict:
    opts: dict = {}
    for part in (raw or "").split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in _INT_OPTS | _FLOAT_OPTS:
            raise ValidationError(f"bad train option {part!r}")
        try:
            opts[key] = float(value) if key in _FLOAT_OPTS else int(value)
        except ValueError:
            raise ValidationError(f"bad train option value {part!r}") from None
    if "seed" not in opts and default_seed is not None:
        opts["seed"] = default_seed
    return opts


def _train_from_spec(spec: str, data: Dataset, target: str | None,
                     default_seed: int | None):
    m = _TRAIN_SPEC.fullmatch(spec.strip())
    if not m:
        raise ValidationError(
            f"model {spec!r} is neither a model file nor a train spec "
            "like 'linear', 'cart(max_depth=4)' or 'forest(trees=100,seed=1)'"
        )
    kind, raw = m.group(1), m.group(2)
    opts = _train_options(raw, default_seed)
    if kind == "linear":
        if opts and set(opts) != {"seed"}:
            raise ValidationError("linear training takes no options")
        return train_linear(data, target)
    if kind == "cart":
        allowed = {"max_depth", "min_node_size", "min_sse_improvement"}
        extra = set(opts) - {"seed"} - allowed
        if extra:
            raise ValidationError(f"cart does not take {sorted(extra)}")
        cart_opts = CartOptions(
            max_depth=opts.get("max_depth", 30),
            min_node_size=opts.get("min_node_size", 5),
            min_sse_improvement=opts.get("min_sse_improvement", 0.0),
        )
        return train_cart(data, target, cart_opts)
    forest_opts = ForestOptions(
        n_trees=opts.get("trees", 100),
        mtry=opts.get("mtry"),
        seed=opts.get("seed", 0),
        max_depth=opts.get("max_depth", 30),
        min_node_size=opts.get("min_node_size", 5),
        min_sse_improvement=opts.get("min_sse_improvement", 0.0),
    )
    return train_forest(data, target, forest_opts)


def _resolve_model(args, data: Dataset):
    if not args.model:
        raise ValidationError("--model is required")
    if os.path.isfile(args.model):
        return load_model(args.model)
    return _train_from_spec(args.model, data, getattr(args, "target", None),
                            getattr(args, "seed", None))


def _make_envelope(args) -> Envelope | None:
    if args.ep != "envelope":
        return None
    reference = None
    if args.envelope_data:
        schema = read_schema(args.schema) if args.schema else None
        reference = load_csv(args.envelope_data, schema=schema)
    return Envelope(reference=reference)


def _percent(k: int, n: int) -> int:
    return round(100.0 * k / n) if n else 0


def _fme_summary(result: FmeResultSet) -> tuple[str, list[str]]:
    """The printable effects summary and any warnings raised while
    averaging (degenerate NLM paths are reported, never fatal)."""
    warnings: list[str] = []
    step = result.step
    lines = ["Forward Marginal Effects Object", "", "Step type:"]
    if isinstance(step, NumericStep):
        lines += ["  numerical", "", "Features & step lengths:"]
        lines += [f"  {name}, {h:g}" for name, h in step.steps.items()]
    else:
        lines += ["  categorical", "", "Feature & reference category:",
                  f"  {step.feature}, {step.reference}"]
    k, n = result.n_extrapolation, result.n_total
    lines += ["", "Extrapolation point detection:",
              f"  {result.ep_method}, EPs: {k} of {n} obs. ({_percent(k, n)}%)"]
    lines += ["", "Average Marginal Effect (AME):", f"  {ame(result):.4f}"]
    if result.nlm is not None:
        try:
            anlm_text = f"{average_nlm(result):.2f}"
        except ComputationError:
            anlm_text = "NA"
            warnings.append("all NLM paths were degenerate; ANLM is undefined")
        lines += ["", "Average Non-Linearity Measure (ANLM):", f"  {anlm_text}"]
    return "\n".join(lines) + "\n", warnings


def _select_plot(result: FmeResultSet, data: Dataset) -> viz.PlotData:
    if isinstance(result.step, CategoricalStep):
        return viz.categorical_plot_data(result)
    width = len(result.step.steps)
    if width == 1:
        return viz.univariate_plot_data(result, data)
    if width == 2:
        return viz.bivariate_plot_data(result, data)
    return viz.higher_order_plot_data(result)


def _write_plot(plot: viz.PlotData, config: RunConfig, out: str, stem: str) -> None:
    payload = plot.to_dict()
    payload["provenance"] = {"config": config.to_dict()}
    _write_json(payload, os.path.join(out, f"{stem}.json"))
    viz.render_svg(plot, os.path.join(out, f"{stem}.svg"))


def _compute(args, want_nlm: bool) -> tuple[Dataset, FmeResultSet, RunConfig]:
    data = _load_data(args)
    model = _resolve_model(args, data)
    step = parse_step(args.step)
    config = RunConfig(args)
    config.step = step.to_dict()
    result = compute_fme(
        model, data, step,
        ep=_make_envelope(args),
        with_nlm=want_nlm,
        nlm_settings=NlmSettings(n_subintervals=args.nlm_panels),
        jobs=args.jobs,
    )
    return data, result, config


def cmd_fme(args) -> int:
    data, result, config = _compute(args, want_nlm=args.nlm)
    summary, warnings = _fme_summary(result)
    sys.stdout.write(summary)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = _out_dir(args)
    if out:
        payload = result.to_dict()
        payload["provenance"]["config"] = config.to_dict()
        _write_json(payload, os.path.join(out, "fme_results.json"))
        if args.format == "csv":
            result.to_csv(os.path.join(out, "fme_results.csv"))
        elif args.format == "text":
            with open(os.path.join(out, "fme_summary.txt"), "w", encoding="utf-8") as fh:
                fh.write(summary)
        elif args.format == "svg":
            _write_plot(_select_plot(result, data), config, out, "fme_plot")
    return 0


def cmd_ame(args) -> int:
    data = _load_data(args)
    model = _resolve_model(args, data)
    config = RunConfig(args)
    features = None
    if args.features:
        features = [f.strip() for f in args.features.split(",") if f.strip()]
        config.features = features
    steps = None
    if args.steps:
        try:
            steps = json.loads(args.steps)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--steps is not valid JSON: {exc}") from None
        if not isinstance(steps, dict):
            raise ValidationError("--steps must be a JSON object of feature: step")
        config.steps = steps
    table = ame_table(model, data, features=features, steps=steps,
                      ep=_make_envelope(args))
    sys.stdout.write(table.to_text())
    out = _out_dir(args)
    if out:
        payload = table.to_dict()
        payload["provenance"]["config"] = config.to_dict()
        _write_json(payload, os.path.join(out, "ame_table.json"))
        if args.format == "csv":
            table.to_csv(os.path.join(out, "ame_table.csv"))
        elif args.format == "text":
            with open(os.path.join(out, "ame_table.txt"), "w", encoding="utf-8") as fh:
                fh.write(table.to_text())
    return 0


def cmd_came(args) -> int:
    if (args.partitions is None) == (args.max_sd is None):
        raise ValidationError("pass exactly one of --partitions or --max-sd")
    data, result, config = _compute(args, want_nlm=args.nlm)
    objective = (ExactGroups(args.partitions) if args.partitions is not None
                 else MaxSd(args.max_sd))
    tree = fit_partition(result, data, PartitioningOptions(
        objective=objective,
        exclude_step_features=args.exclude_step_features,
    ))
    text = came_summary(tree).to_text()
    sys.stdout.write(text)
    out = _out_dir(args)
    if out:
        payload = tree.to_dict()
        payload["provenance"]["config"] = config.to_dict()
        _write_json(payload, os.path.join(out, "partition.json"))
        if args.format == "text":
            with open(os.path.join(out, "partition.txt"), "w", encoding="utf-8") as fh:
                fh.write(text)
        elif args.format == "svg":
            _write_plot(viz.partition_plot_data(tree), config, out, "partition_plot")
    return 0


def cmd_train(args) -> int:
    data = _load_data(args)
    if os.path.isfile(args.model):
        raise ValidationError(
            f"{args.model!r} is an existing file; train expects a spec "
            "like 'forest(trees=100,seed=1)'"
        )
    model = _train_from_spec(args.model, data, args.target, args.seed)
    config = RunConfig(args)
    out = _out_dir(args)
    if not out:
        raise ValidationError("train needs --out to store the model")
    path = os.path.join(out, "model.json")
    payload = model.to_dict()
    payload["provenance"] = {"config": config.to_dict()}
    _write_json(payload, path)
    print(f"trained {model.describe()} -> {path}")
    return 0


def cmd_fetch_bikes(args) -> int:
    info = convert_day_csv(args.source, args.out or "data")
    print(f"wrote {info['csv_path']} ({info['n_rows']} rows)")
    print(f"wrote {info['schema_path']}")
    for w in info["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _add_common(p, *, step=True, model=True):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--schema", help="JSON sidecar mapping column -> numeric|categorical")
    p.add_argument("--target", help="target column (needed when training inline)")
    if model:
        p.add_argument("--model", required=True,
                       help="model JSON file, or an inline train spec like "
                            "'forest(trees=100,seed=1)'")
    if step:
        p.add_argument("--step", required=True,
                       help="JSON step spec: '{\"temp\": 5}' or "
                            "'{\"feature\": \"weather\", \"reference\": \"rain\"}'")
    p.add_argument("--ep", choices=("envelope", "none"), default="none",
                   help="extrapolation point detection method")
    p.add_argument("--envelope-data", dest="envelope_data",
                   help="CSV whose per-feature ranges define the envelope "
                        "(defaults to --data)")
    p.add_argument("--seed", type=int, help="seed for inline training")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--out", help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmekit",
        description="Forward marginal effects: what a model's prediction "
                    "does when feature values take a concrete step.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fme", help="per-observation effects for one step")
    _add_common(p)
    p.add_argument("--nlm", action="store_true",
                   help="also compute per-observation non-linearity")
    p.add_argument("--nlm-panels", dest="nlm_panels", type=int, default=4,
                   help="quadrature panels per path integral")
    p.add_argument("--format", choices=("text", "csv", "json", "svg"),
                   default="json", help="extra artifact written beside the JSON")
    p.set_defaults(func=cmd_fme)

    p = sub.add_parser("ame", help="average-effect summary table per feature")
    _add_common(p, step=False)
    p.add_argument("--features", help="comma-separated subset of features")
    p.add_argument("--steps", help="JSON object overriding numeric step sizes")
    p.add_argument("--format", choices=("text", "csv", "json"),
                   default="json", help="extra artifact written beside the JSON")
    p.set_defaults(func=cmd_ame)

    p = sub.add_parser("came", help="partition observations into effect subgroups")
    _add_common(p)
    p.add_argument("--partitions", type=int, help="exact number of subgroups")
    p.add_argument("--max-sd", dest="max_sd", type=float,
                   help="stop splitting when a node's FME sd is at or below this")
    p.add_argument("--nlm", action="store_true",
                   help="also compute per-observation non-linearity")
    p.add_argument("--nlm-panels", dest="nlm_panels", type=int, default=4,
                   help="quadrature panels per path integral")
    p.add_argument("--exclude-step-features", action="store_true",
                   help="do not split on the stepped features themselves")
    p.add_argument("--format", choices=("text", "json", "svg"),
                   default="json", help="extra artifact written beside the JSON")
    p.set_defaults(func=cmd_came)

    p = sub.add_parser("train", help="fit a built-in model and save it")
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--schema", help="JSON sidecar mapping column -> numeric|categorical")
    p.add_argument("--target", required=True, help="target column")
    p.add_argument("--model", required=True,
                   help="train spec: 'linear', 'cart(...)' or 'forest(...)'")
    p.add_argument("--seed", type=int, help="seed (spec seed= takes precedence)")
    p.add_argument("--out", required=True, help="directory for model.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fetch-bikes",
                       help="convert a raw day-level bike rental CSV")
    p.add_argument("--source", required=True, help="path to the raw day.csv")
    p.add_argument("--out", help="output directory (default: data)")
    p.set_defaults(func=cmd_fetch_bikes)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FmeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
