"""Command-line front end tying the pipeline stages together.

Every subcommand accepts --seed, --config <json file> and --out <dir>.
Config values fill in defaults for flags not given explicitly.  Exit codes:
0 success, 2 validation error (bad flags or bad input files), 1 runtime
failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from . import ssm as cssm
from .fitting import FitConfig, fit_sequence
from .mesh import MeshSequence, devectorize, rigid_align, vectorize
from .motion import eval_intersections, mc_optimize
from .objectives import LossWeights
from .phenotypes import phenotype_table
from .population import (
    FeatureMatrix,
    precision_at_k,
    recall_at_k,
    signed_variation,
    truncate_descriptor,
    vertex_correlation,
)
from .synth import (
    SynthConfig,
    VolumeGeometry,
    default_view_specs,
    intensity_volume,
    make_texture,
    slice_views,
    synth_population,
    voxelize_sequence,
)


class _Args(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(2)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(_subparser=p)


def _apply_config(args):
    """Fill flags still at their parser defaults from the config file.

    Explicitly passed flags always win; a flag explicitly set to its default
    value is indistinguishable from an omitted one and may be overridden.
    """
    if args.config is None:
        return args
    try:
        values = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise cio.ValidationError(f"cannot read config {args.config}: {exc}")
    defaults = {
        action.dest: action.default for action in args._subparser._actions
    }
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest in defaults and getattr(args, dest, None) == defaults[dest]:
            setattr(args, dest, value)
    return args


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = SynthConfig(
        seed=args.seed,
        scale=args.scale,
        n_frames=args.frames,
        n_modes=args.modes,
        voxel_size=args.voxel_size,
        displacement_sigma=args.sigma,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pop = synth_population(cfg, args.subjects)
    cio.save_sequence(out / "template", MeshSequence([pop.template]))
    geom = VolumeGeometry.for_population(pop.sequences, cfg.voxel_size)
    rng = _rng(args.seed + 1)
    texture = make_texture(geom.dims, rng)
    specs = default_view_specs(geom, n_sax=args.sax, pixel_spacing=args.pixel_spacing)
    ground_truth = {"subjects": {}}
    for i, seq in enumerate(pop.sequences):
        subj = out / f"subject_{i:03d}"
        subj.mkdir(parents=True, exist_ok=True)
        cio.save_sequence(subj / "meshes", seq)
        targets = _targets_from_sequence(seq)
        cio.save_target_clouds(subj / "targets.bin", targets)
        if args.views or args.volumes:
            labels = voxelize_sequence(seq, geom)
            if args.volumes:
                cio.save_volume(subj / "labels.bin", labels, geom)
        if args.views:
            intens = [
                intensity_volume(labels[t], texture=texture)
                for t in range(cfg.n_frames)
            ]
            if args.volumes:
                cio.save_volume(subj / "intensity.bin", np.stack(intens), geom)
            views, injected = slice_views(
                intens, labels, geom, specs, cfg.displacement_sigma, rng
            )
            cio.save_views(subj / "views.bin", views)
            ground_truth["subjects"][str(i)] = {
                "injected_displacements": {
                    k: [float(v[0]), float(v[1])] for k, v in injected.items()
                },
                "mode_weights": [float(x) for x in pop.weights[i]],
                "motion_scale": float(pop.motion_scales[i]),
            }
        else:
            ground_truth["subjects"][str(i)] = {
                "mode_weights": [float(x) for x in pop.weights[i]],
                "motion_scale": float(pop.motion_scales[i]),
            }
    attrs = {k: [float(x) for x in v] for k, v in pop.attributes.items()}
    ground_truth["attributes"] = attrs
    (out / "ground_truth.json").write_text(
        json.dumps(ground_truth, sort_keys=True, indent=2) + "\n"
    )
    return 0


def _targets_from_sequence(seq):
    from .objectives import TargetClouds

    return TargetClouds.from_sequence(seq)


def cmd_mc(args):
    views = cio.load_views(args.views)
    displacements, trace = mc_optimize(views, lr=args.lr, epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cio.save_displacements_json(out / "displacements.json", displacements)
    metrics = eval_intersections(views)
    (out / "mc_metrics.json").write_text(
        json.dumps(
            {k: float(v) for k, v in metrics.items()},
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    return 0


def cmd_fit(args):
    template = cio.load_chamber_set(args.template)
    targets = cio.load_target_clouds(args.targets)
    cfg = FitConfig(
        weights=LossWeights(),
        dims_coarse=tuple(args.dims_coarse),
        dims_mid=tuple(args.dims_mid),
        dims_fine=tuple(args.dims_fine),
        iterations=args.iterations,
        lr=args.lr,
        seed=args.seed,
    )
    seq, grids, trace = fit_sequence(template, targets, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cio.save_sequence(out / "meshes", seq)
    cio.save_grids(out / "grids.bin", [grids["coarse"], grids["mid"]] + grids["fine"])
    lines = ["stage,iteration,loss\n"]
    for stage, it, loss in trace:
        lines.append(f"{stage},{it},{loss:.17g}\n")
    (out / "loss_trace.csv").write_text("".join(lines))
    from .mesh import STRUCTURES
    from .objectives import surface_distances

    rows = []
    subject = Path(args.targets).stem
    for t in range(seq.n_frames):
        for s in STRUCTURES:
            sd = surface_distances(seq.frames[t][s].vertices, targets.points(t, s))
            rows.append((subject, t, s, "assd", sd["assd"]))
            rows.append((subject, t, s, "hd90", sd["hd90"]))
    cio.save_metric_csv(out / "fit_metrics.csv", rows)
    return 0


def _load_population_vectors(data_dir, template):
    data_dir = Path(data_dir)
    subject_dirs = sorted(
        d for d in data_dir.iterdir() if d.is_dir() and d.name.startswith("subject_")
    )
    if not subject_dirs:
        raise cio.ValidationError(f"{data_dir}: no subject_* directories")
    vectors = []
    for d in subject_dirs:
        seq = cio.load_sequence(d / "meshes")
        aligned_frames = []
        for frame in seq.frames:
            _, _, _, aligned = rigid_align(frame, template)
            aligned_frames.append(aligned)
        vectors.append(vectorize(MeshSequence(aligned_frames)))
    return subject_dirs, np.stack(vectors)


def cmd_ssm(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.action == "train":
        template_seq = cio.load_sequence(args.template)
        template = template_seq.frames[0]
        dirs, vectors = _load_population_vectors(args.data, template)
        from .mesh import Topology

        n_frames = int(vectors.shape[1] // (3 * template.total_vertices))
        topology = Topology.from_chamber_set(template, n_frames)
        model = cssm.ShapeModel(n_components=args.components, topology=topology)
        batch = args.batch_size
        for start in range(0, len(vectors), batch):
            cssm.ipca_partial_fit(model, vectors[start : start + batch])
        cio.save_model(out / "model.hssm", model, topology)
        return 0

    template_seq = cio.load_sequence(args.template)
    template = template_seq.frames[0]
    from .mesh import Topology

    model_path = args.model
    raw = cio.load_model(model_path)
    n_frames = int(raw.dim // (3 * template.total_vertices))
    topology = Topology.from_chamber_set(template, n_frames)
    model = cio.load_model(model_path, topology)

    if args.action == "encode":
        seq = cio.load_sequence(args.meshes)
        w = cssm.encode(model, vectorize(seq))
        cio.save_features_csv(out / "descriptor.csv", w[None, :])
        return 0
    if args.action == "decode":
        _, rows = cio.load_features_csv(args.weights)
        seq = devectorize(cssm.decode(model, rows[0]), topology)
        cio.save_sequence(out / "meshes", seq)
        return 0
    if args.action == "fit-contours":
        targets = cio.load_target_clouds(args.contours)
        contours = [dict(frame) for frame in targets.frames]
        lr = 0.05 if args.lr is None else args.lr
        iters = 500 if args.iterations is None else args.iterations
        w = cssm.fit_to_contours(model, contours, lr=lr, iters=iters)
        cio.save_features_csv(out / "descriptor.csv", w[None, :])
        return 0
    if args.action == "complete":
        seq = cio.load_sequence(args.meshes)
        observed = np.zeros(topology.n_frames, dtype=bool)
        for t in args.observed.split(","):
            observed[int(t)] = True
        lr = 0.1 if args.lr is None else args.lr
        iters = 200 if args.iterations is None else args.iterations
        full = cssm.complete_sequence(model, seq, observed, lr=lr, iters=iters)
        cio.save_sequence(out / "meshes", full)
        return 0
    if args.action == "modes":
        seq = cssm.sample_mode(model, args.pc, args.sd)
        cio.save_sequence(out / f"mode_{args.pc}_{args.sd:+g}sd", seq)
        return 0
    raise cio.ValidationError(f"unknown ssm action {args.action!r}")


def cmd_pheno(args):
    data_dir = Path(args.data)
    subject_dirs = sorted(
        d for d in data_dir.iterdir() if d.is_dir() and d.name.startswith("subject_")
    )
    if not subject_dirs:
        raise cio.ValidationError(f"{data_dir}: no subject_* directories")
    tables = []
    ids = []
    for d in subject_dirs:
        mesh_dir = d / "meshes" if (d / "meshes").exists() else d
        seq = cio.load_sequence(mesh_dir)
        tables.append(phenotype_table(seq))
        ids.append(d.name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cio.save_phenotype_csv(out / "phenotypes.csv", tables, ids)
    return 0


def cmd_corr(args):
    model = cio.load_model(args.model)
    template_seq = cio.load_sequence(args.template)
    template = template_seq.frames[0]
    from .mesh import Topology

    n_frames = int(model.dim // (3 * template.total_vertices))
    topology = Topology.from_chamber_set(template, n_frames)
    model = cio.load_model(args.model, topology)
    mean_seq = devectorize(model.mean, topology)
    data_dir = Path(args.data)
    subject_dirs = sorted(
        d for d in data_dir.iterdir() if d.is_dir() and d.name.startswith("subject_")
    )
    fields = []
    for d in subject_dirs:
        seq = cio.load_sequence(d / "meshes")
        fields.append(signed_variation(seq, mean_seq))
    fields = np.stack(fields)
    ids, values = cio.load_features_csv(args.attributes)
    names = [f"f{j}" for j in range(values.shape[1])]
    col = names.index(args.attribute) if args.attribute in names else int(
        args.attribute.lstrip("f")
    )
    r, p, significant = vertex_correlation(fields, values[: len(fields), col])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cio.save_correlation_csv(out / "correlation.csv", topology, r, p, significant)
    return 0


def cmd_retrieve(args):
    _, values = cio.load_features_csv(args.features)
    _, groups = cio.load_groups_csv(args.groups)
    features = FeatureMatrix(values)
    if args.pcs is not None:
        features = truncate_descriptor(features, args.pcs)
    precision = precision_at_k(
        features, groups, args.k, n_queries=args.queries, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "retrieval.json").write_text(
        json.dumps(
            {"k": args.k, "n_queries": args.queries, "precision_percent": precision},
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    return 0


def cmd_reid(args):
    _, v1 = cio.load_features_csv(args.features_t1)
    _, v2 = cio.load_features_csv(args.features_t2)
    f1 = FeatureMatrix(v1)
    f2 = FeatureMatrix(v2)
    if args.pcs is not None:
        f1 = truncate_descriptor(f1, args.pcs)
        f2 = truncate_descriptor(f2, args.pcs)
    recall = recall_at_k(f1, f2, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reid.json").write_text(
        json.dumps({"k": args.k, "recall_percent": recall}, sort_keys=True, indent=2)
        + "\n"
    )
    return 0


def cmd_eval(args):
    from . import acceptance

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite != "acceptance":
        raise cio.ValidationError(f"unknown suite {args.suite!r}")
    results = acceptance.run_all(
        only=args.criteria, workdir=out / "eval_artifacts"
    )
    lines = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        line = f"[{status}] criterion {res.number}: {res.name} ({res.runtime:.1f}s) {res.detail}"
        print(line)
        lines.append(line + "\n")
    (out / "acceptance_report.txt").write_text("".join(lines))
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Args(prog="cardioshape")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic population")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--modes", type=int, default=6)
    p.add_argument("--voxel-size", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--sax", type=int, default=7)
    p.add_argument("--pixel-spacing", type=float, default=2.0)
    p.add_argument("--views", action="store_true")
    p.add_argument("--volumes", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mc", help="motion-correct a view set")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("fit", help="fit the template to target clouds")
    p.add_argument("--template", type=Path, required=True)
    p.add_argument("--targets", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--dims-coarse", type=int, nargs=3, default=[6, 6, 8])
    p.add_argument("--dims-mid", type=int, nargs=3, default=[12, 12, 16])
    p.add_argument("--dims-fine", type=int, nargs=3, default=[24, 24, 32])
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ssm", help="shape-model operations")
    p.add_argument("action", choices=[
        "train", "encode", "decode", "fit-contours", "complete", "modes"
    ])
    p.add_argument("--data", type=Path)
    p.add_argument("--template", type=Path, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--meshes", type=Path)
    p.add_argument("--weights", type=Path)
    p.add_argument("--contours", type=Path)
    p.add_argument("--observed", type=str, default="0")
    p.add_argument("--components", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--pc", type=int, default=0)
    p.add_argument("--sd", type=float, default=2.0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_ssm)

    p = sub.add_parser("pheno", help="phenotype table for fitted sequences")
    p.add_argument("--data", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_pheno)

    p = sub.add_parser("corr", help="vertex-wise attribute correlation maps")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--template", type=Path, required=True)
    p.add_argument("--attributes", type=Path, required=True)
    p.add_argument("--attribute", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("retrieve", help="group retrieval precision@K")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--groups", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--pcs", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("reid", help="longitudinal re-identification recall@K")
    p.add_argument("--features-t1", type=Path, required=True)
    p.add_argument("--features-t2", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--pcs", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_reid)

    p = sub.add_parser("eval", help="run verification suites")
    p.add_argument("--suite", type=str, default="acceptance")
    p.add_argument("--criteria", type=int, nargs="*", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        return args.func(args)
    except cio.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
