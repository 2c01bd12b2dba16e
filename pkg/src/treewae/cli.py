"""Command-line pipeline: synthesize, extract, measure, train, compress, serve.

Every command is deterministic under a fixed seed and drops a provenance
file (command, flags, seed, package version) next to its outputs. Exit
codes: 0 on success, 2 for input errors, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics as an
from . import barycenter as bc
from . import fields as fl
from . import metric as mt
from . import topology as tp
from . import wae as wae_mod

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _write_provenance(out_dir: Path, command: str, args: argparse.Namespace):
    doc = {
        "command": command,
        "version": __version__,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"provenance_{command}.json", "w") as fh:
        json.dump(doc, fh, indent=1, default=str)
        fh.write("\n")


def _load_manifest(path: Path):
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise InputError(f"manifest must be a non-empty JSON array: {path}")
    base = path.parent
    out = []
    for e in entries:
        p = Path(e["path"])
        if not p.is_absolute():
            p = base / p
        out.append((p, e.get("label")))
    return out


def _extract_one(sf, mode: str, eps1: float, eps2: float, eps3: float,
                 simplify_frac: float, kind: str):
    tree = tp.compute_merge_tree(sf, kind)
    bdt = tp.branch_decomposition(tree)
    bdt = tp.simplify(bdt, simplify_frac)
    bdt = tp.merge_saddles(bdt, 1.0 if mode == "pd" else eps1)
    return tp.normalize(bdt, eps2, eps3)


def _load_bdt_dir(path: Path):
    files = sorted(path.glob("*.bdt.json"))
    if not files:
        raise InputError(f"no .bdt.json files in {path}")
    return [tp.load_bdt(f) for f in files], [f.name[: -len(".bdt.json")] for f in files]


def _config_from_args(args, n_members: int) -> wae_mod.TrainConfig:
    return wae_mod.TrainConfig(
        n_it=args.nit,
        d_latent=args.latent_dim,
        d_out=args.out_dim,
        eps1=args.eps1,
        eps2=args.eps2,
        eps3=args.eps3,
        learning_rate=args.lr,
        penalty_metric=args.penalty_metric,
        penalty_cluster=args.penalty_cluster,
        lambda_metric=args.lambda_m,
        lambda_cluster=args.lambda_c,
        softmax_beta=args.beta,
        max_epochs=args.epochs,
        seed=args.seed,
        n_clusters=args.clusters,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields_list, labels, target = fl.generate_stability_ensemble(args.noise, args.seed)
    manifest = []
    for i, (sf, label) in enumerate(zip(fields_list, labels)):
        name = f"member_{i:02d}.sfld"
        fl.save_field(sf, out / name)
        manifest.append({"path": name, "label": int(label)})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    dm = mt.DistanceMatrix(len(fields_list), target,
                           [f"member_{i:02d}" for i in range(len(fields_list))])
    mt.export_distance_csv(dm, out / "target_distances.csv")
    _write_provenance(out, "synth", args)
    print(f"wrote {len(fields_list)} fields + manifest to {out}")


def cmd_extract(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = _load_manifest(Path(args.manifest))
    labels = []
    for i, (path, label) in enumerate(entries):
        sf = fl.load_field(path)
        bdt = _extract_one(sf, args.mode, args.eps1, args.eps2, args.eps3,
                           args.simplify, args.tree_kind)
        tp.save_bdt(bdt, out / f"member_{i:02d}.bdt.json")
        labels.append(label)
    if any(l is not None for l in labels):
        with open(out / "labels.json", "w") as fh:
            json.dump(labels, fh)
            fh.write("\n")
    _write_provenance(out, "extract", args)
    print(f"extracted {len(entries)} BDTs to {out}")


def cmd_distances(args):
    ensemble, names = _load_bdt_dir(Path(args.bdts))
    use_diagram = args.mode == "pd"
    dm = mt.distance_matrix(ensemble, use_diagram_metric=use_diagram, names=names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mt.export_distance_csv(dm, out)
    _write_provenance(out.parent, "distances", args)
    print(f"wrote {dm.n}x{dm.n} distance matrix to {out}")


def _model_to_json(model: wae_mod.TrainedModel) -> dict:
    cfg = model.config
    layers = []
    for layer in model.network.layers:
        layers.append({
            "dim": layer.dim,
            "in": {"origin": tp.bdt_to_json(layer.in_sub.origin),
                   "vectors": layer.in_sub.basis.vectors.tolist()},
            "out": {"origin": tp.bdt_to_json(layer.out_sub.origin),
                    "vectors": layer.out_sub.basis.vectors.tolist()},
        })
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(cfg).items()},
        "n_e": model.network.n_e,
        "n_d": model.network.n_d,
        "layers": layers,
        "latent_coords": model.latent_coords.tolist(),
        "last_coeffs": model.last_coeffs.tolist(),
        "energy_trace": model.energy_trace,
        "member_scales": [list(s) for s in model.member_scales],
        "member_names": model.member_names,
        "stopped_early": model.stopped_early,
        "best_epoch": model.best_epoch,
    }


def _model_from_json(doc: dict) -> wae_mod.TrainedModel:
    from .geometry import BDTBasis
    from .wae import Layer, Network, SubLayer, TrainConfig, TrainedModel

    cfg_doc = dict(doc["config"])
    cfg_doc["origin_caps"] = tuple(cfg_doc["origin_caps"])
    cfg = TrainConfig(**cfg_doc)
    layers = []
    for ld in doc["layers"]:
        oin = tp.bdt_from_json(ld["in"]["origin"])
        oout = tp.bdt_from_json(ld["out"]["origin"])
        layers.append(Layer(
            SubLayer(oin, BDTBasis(oin, np.array(ld["in"]["vectors"]), checked=False), "input"),
            SubLayer(oout, BDTBasis(oout, np.array(ld["out"]["vectors"]), checked=False), "output"),
            int(ld["dim"]),
        ))
    network = Network(layers, int(doc["n_e"]), int(doc["n_d"]))
    return TrainedModel(
        network=network,
        config=cfg,
        energy_trace=[tuple(t) for t in doc["energy_trace"]],
        latent_coords=np.array(doc["latent_coords"]),
        last_coeffs=np.array(doc["last_coeffs"]),
        member_scales=[tuple(s) for s in doc["member_scales"]],
        member_names=list(doc["member_names"]),
        stopped_early=bool(doc.get("stopped_early", False)),
        best_epoch=int(doc.get("best_epoch", -1)),
    )


def save_model(model: wae_mod.TrainedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(_model_to_json(model), fh)
        fh.write("\n")


def load_model(path) -> wae_mod.TrainedModel:
    with open(path) as fh:
        return _model_from_json(json.load(fh))


def _train_from_dir(args):
    ensemble, names = _load_bdt_dir(Path(args.bdts))
    labels = None
    labels_path = Path(args.bdts) / "labels.json"
    if labels_path.exists():
        with open(labels_path) as fh:
            raw = json.load(fh)
        if all(l is not None for l in raw):
            labels = [int(l) for l in raw]
    cfg = _config_from_args(args, len(ensemble))
    model = wae_mod.train(ensemble, cfg, ground_truth_clusters=labels,
                          member_names=names)
    return model, ensemble, labels


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, ensemble, _ = _train_from_dir(args)
    save_model(model, out / "model.json")
    with open(out / "energy.csv", "w") as fh:
        fh.write("epoch,E,P_M,P_C\n")
        for i, (e, pm, pc) in enumerate(model.energy_trace):
            fh.write(f"{i},{e!r},{pm!r},{pc!r}\n")
    _write_provenance(out, "train", args)
    e0, ef = model.energy_trace[0][0], model.energy_trace[-1][0]
    print(f"trained {len(model.energy_trace)} epochs "
          f"(energy {e0:.4g} -> {ef:.4g}, stopped_early={model.stopped_early})")


def cmd_compress(args):
    model = load_model(Path(args.model))
    ensemble, _ = _load_bdt_dir(Path(args.bdts))
    payload = an.compress(model, ensemble)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    an.save_compressed(payload, out)
    original = sum(an.bdt_binary_size(b) for b in ensemble)
    compressed = an.compressed_binary_size(payload)
    factor = an.compression_factor(original, compressed)
    _write_provenance(out.parent, "compress", args)
    print(f"compression factor: {factor:.2f} ({original} -> {compressed} bytes)")


def cmd_decompress(args):
    payload = an.load_compressed(Path(args.payload))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, tree in zip(payload.member_names, an.decompress(payload)):
        tp.save_bdt(tree, out / f"{name}.bdt.json")
    _write_provenance(out, "decompress", args)
    print(f"decompressed {len(payload.member_names)} BDTs to {out}")


def cmd_layout(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, ensemble, labels = _train_from_dir(args)
    points = an.layout2d(model)
    k = args.clusters
    cents = wae_mod._latent_kmeans(points, k, args.seed)
    pred = np.argmin(((points[:, None, :] - cents[None, :, :]) ** 2).sum(-1),
                     axis=1).tolist()
    with open(out / "layout.csv", "w") as fh:
        fh.write("member,name,x,y,cluster\n")
        for i, name in enumerate(model.member_names):
            fh.write(f"{i},{name},{points[i,0]!r},{points[i,1]!r},{pred[i]}\n")
    report = {
        "penalty_metric": args.penalty_metric,
        "penalty_cluster": args.penalty_cluster,
        "final_energy": model.energy_trace[-1][0],
        "epochs": len(model.energy_trace),
    }
    if labels is not None:
        dm_true = None
        if args.target_distances:
            rows = Path(args.target_distances).read_text().strip().split("\n")[1:]
            entries = np.array([[float(v) for v in r.split(",")[1:]] for r in rows])
            dm_true = mt.DistanceMatrix(len(entries), entries)
        else:
            dm_true = mt.distance_matrix(ensemble,
                                         use_diagram_metric=args.mode == "pd")
        report["nmi"] = an.nmi(labels, pred)
        report["ari"] = an.ari(labels, pred)
        report["sim"] = an.scale_aligned_sim(dm_true, points)
        report["sim_raw"] = an.sim(dm_true, an.layout_distance_matrix(points))
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    save_model(model, out / "model.json")
    _export_feature_views(out, model, ensemble)
    _write_provenance(out, "layout", args)
    printable = {k: (round(v, 4) if isinstance(v, float) else v)
                 for k, v in report.items()}
    print(f"layout written to {out}: {printable}")


def _export_feature_views(out: Path, model, ensemble):
    reference = bc.barycenter(ensemble)
    pcv_points = an.pcv(model, ensemble, reference=reference)
    with open(out / "pcv.csv", "w") as fh:
        fh.write("branch,rho1,rho2,degenerate\n")
        for p in pcv_points:
            fh.write(f"{p.branch},{p.rho1!r},{p.rho2!r},{int(p.degenerate)}\n")
    with open(out / "pcv.json", "w") as fh:
        json.dump([vars(p) for p in pcv_points], fh, indent=1)
        fh.write("\n")
    fli_report = an.fli(model, ensemble, reference=reference)
    with open(out / "fli.csv", "w") as fh:
        fh.write("branch,original_persistence,latent_persistence,fli\n")
        for b, o, l, f in zip(fli_report.branches, fli_report.original_persistence,
                              fli_report.latent_persistence, fli_report.fli):
            fh.write(f"{b},{o!r},{l!r},{f!r}\n")
    with open(out / "fli.json", "w") as fh:
        json.dump(vars(fli_report), fh, indent=1)
        fh.write("\n")


def cmd_serve(args):
    import uvicorn

    from .server import build_session, create_app

    model_path = Path(args.model)
    if not model_path.exists():
        raise InputError(f"model file not found: {model_path}")
    model = load_model(model_path)
    ensemble, _ = _load_bdt_dir(Path(args.bdts))
    session = build_session(model, ensemble)
    app = create_app(session)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common_train_flags(p):
    p.add_argument("--mode", choices=("pd", "mt"), default="pd")
    p.add_argument("--eps1", type=float, default=None)
    p.add_argument("--eps2", type=float, default=0.95)
    p.add_argument("--eps3", type=float, default=0.9)
    p.add_argument("--simplify", type=float, default=0.0025)
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--out-dim", type=int, default=16)
    p.add_argument("--nit", type=int, default=2)
    p.add_argument("--penalty-metric", action="store_true")
    p.add_argument("--penalty-cluster", action="store_true")
    p.add_argument("--lambda-m", type=float, default=1.0)
    p.add_argument("--lambda-c", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treewae",
        description="Auto-encoding of merge trees and persistence diagrams "
                    "for ensemble analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the ground-truth ensemble")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="fields -> normalized BDT files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tree-kind", choices=("split", "join"), default="split")
    p.add_argument("--out", required=True)
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("distances", help="pairwise distance matrix CSV")
    p.add_argument("--bdts", required=True)
    p.add_argument("--out", required=True)
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("train", help="train the auto-encoder")
    p.add_argument("--bdts", required=True)
    p.add_argument("--out", required=True)
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="write the reduced payload")
    p.add_argument("--model", required=True)
    p.add_argument("--bdts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="payload -> BDT files")
    p.add_argument("--payload", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("layout", help="train + 2D layout + quality report")
    p.add_argument("--bdts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-distances", default=None,
                   help="CSV of ground-truth distances for the SIM score")
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("serve", help="HTTP API for the latent explorer")
    p.add_argument("--model", required=True)
    p.add_argument("--bdts", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "eps1", None) is None and hasattr(args, "mode"):
        args.eps1 = 1.0 if args.mode == "pd" else 0.05
    try:
        args.func(args)
    except (InputError, fl.FieldFormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
