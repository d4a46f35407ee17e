"""Stateless adapter CLIs keyed by file contracts.

Each subcommand reads toolkit-format inputs (LATV/CSV/JSON), runs one model,
and writes toolkit-format outputs, so a real-model run is a drop-in
replacement for the analytic backend. Model weights are located via
$LATENTFORGE_MODEL_DIR.

Exit codes: 0 success, 2 bad input (usage, malformed JSON, dim mismatch),
3 model load failure (error JSON on stdout), 5 partial completion
(missing-outputs JSON on stdout).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import models as mdl
from .formats import BridgeFormatError, read_csv_rows, read_latv, write_csv, write_latv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_PARTIAL = 5

LABEL_FIELDS = ("race", "gender", "age_bin", "expression", "yaw", "pitch", "illumination")


class InputFailure(Exception):
    pass


def _error_json(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _list_images(image_dir) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise InputFailure(f"not a directory: {root}")
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() == ".png")


def cmd_make_fixtures(args) -> int:
    written = mdl.make_fixture_models(seed=args.seed)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_generate_images(args) -> int:
    gan = mdl.resolve(args.model)
    latents = read_latv(args.latents)
    if latents.shape[0] and latents.shape[1] != gan.latent_dim:
        print(f"latent dim {latents.shape[1]} does not match model dim {gan.latent_dim}", file=sys.stderr)
        return EXIT_INPUT

    names = {}
    if args.sidecar:
        rows = read_csv_rows(args.sidecar, required=("sample_id", "row_index"))
        names = {int(r["row_index"]): r["sample_id"] for r in rows}

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    for i in range(latents.shape[0]):
        sample_id = names.get(i, f"{i:06d}")
        filename = f"{sample_id}.png"
        mdl.save_grayscale(out_dir / filename, gan.render(latents[i]))
        index_rows.append((i, sample_id, filename))
    write_csv(out_dir / "index.csv", ("row_index", "sample_id", "filename"), index_rows)
    print(f"rendered {latents.shape[0]} images to {out_dir}")
    return EXIT_OK


def cmd_extract_embeddings(args) -> int:
    embedder = mdl.resolve(args.model)
    images = _list_images(args.image_dir)
    vectors = []
    sidecar = []
    skipped = []
    for path in images:
        try:
            img = mdl.load_grayscale(path)
        except Exception as exc:
            skipped.append({"file": path.name, "reason": str(exc)})
            continue
        sidecar.append((path.stem, len(vectors)))
        vectors.append(embedder.embed(img))
    empty_dim = getattr(embedder, "embed_dim", mdl.FIXTURE_EMBED_DIM)
    arr = np.stack(vectors) if vectors else np.empty((0, empty_dim))
    write_latv(args.out, arr)
    sidecar_path = args.sidecar_out or str(args.out) + ".sidecar.csv"
    write_csv(sidecar_path, ("sample_id", "row_index"), sidecar)
    if skipped:
        _error_json({"skipped": skipped})
    print(f"embedded {len(vectors)} images -> {args.out}")
    return EXIT_OK


def cmd_detect_faces(args) -> int:
    detector = mdl.resolve(args.model)
    rows = [(p.stem, detector.detect(mdl.load_grayscale(p))) for p in _list_images(args.image_dir)]
    write_csv(args.out, ("sample_id", "face_count"), rows)
    print(f"detections for {len(rows)} images -> {args.out}")
    return EXIT_OK


def cmd_score_quality(args) -> int:
    scorer = mdl.resolve(args.model)
    rows = [(p.stem, f"{scorer.score(mdl.load_grayscale(p)):.6f}") for p in _list_images(args.image_dir)]
    write_csv(args.out, ("sample_id", "quality"), rows)
    print(f"quality scores for {len(rows)} images -> {args.out}")
    return EXIT_OK


def cmd_label_attributes(args) -> int:
    labeler = mdl.resolve(args.model)
    fields = tuple(f.strip() for f in args.fields.split(",")) if args.fields else LABEL_FIELDS
    unknown = set(fields) - set(LABEL_FIELDS)
    if unknown:
        raise InputFailure(f"unknown label fields {sorted(unknown)}")
    rows = []
    for p in _list_images(args.image_dir):
        labels = labeler.label(mdl.load_grayscale(p))
        rows.append((p.stem, *(labels[f] for f in fields)))
    write_csv(args.out, ("sample_id", *fields), rows)
    print(f"labels for {len(rows)} images -> {args.out}")
    return EXIT_OK


def cmd_run_personalization(args) -> int:
    try:
        job = json.loads(Path(args.job).read_text(encoding="utf-8"))
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        input_images = list(job["input_images"])
        expected = list(manifest["expected_outputs"])
        seed = int(manifest.get("seed", 0))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"malformed job/manifest: {exc}", file=sys.stderr)
        return EXIT_INPUT

    generator = mdl.resolve(args.model)
    input_dir = Path(args.input_dir)
    try:
        inputs = [mdl.load_grayscale(input_dir / name) for name in input_images]
    except Exception as exc:
        print(f"cannot read input images: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out_dir = Path(args.out_dir or manifest.get("output_dir", "."))
    limit = len(expected) if args.max_outputs is None else min(args.max_outputs, len(expected))
    for i in range(limit):
        mdl.save_grayscale(out_dir / expected[i], generator.generate(inputs, seed, i))

    missing = [name for name in expected if not (out_dir / name).exists()]
    if missing:
        _error_json({"missing": missing})
        return EXIT_PARTIAL
    print(f"produced {len(expected)} outputs in {out_dir}")
    return EXIT_OK


def cmd_run_job(args) -> int:
    """Dispatch a BridgeJob document: {kind, model, inputs, outputs}."""
    try:
        job = json.loads(Path(args.job).read_text(encoding="utf-8"))
        kind = job["kind"]
        model = job["model"]
        inputs = job.get("inputs", {})
        outputs = job.get("outputs", {})
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"malformed bridge job: {exc}", file=sys.stderr)
        return EXIT_INPUT

    argv = {"generate_images": ["generate-images", "--model", model,
                                "--latents", inputs.get("latents", ""),
                                "--out-dir", outputs.get("image_dir", "")],
            "extract_embeddings": ["extract-embeddings", "--model", model,
                                   "--image-dir", inputs.get("image_dir", ""),
                                   "--out", outputs.get("embeddings", "")],
            "detect_faces": ["detect-faces", "--model", model,
                             "--image-dir", inputs.get("image_dir", ""),
                             "--out", outputs.get("detections", "")],
            "score_quality": ["score-quality", "--model", model,
                              "--image-dir", inputs.get("image_dir", ""),
                              "--out", outputs.get("quality", "")],
            "label_attributes": ["label-attributes", "--model", model,
                                 "--image-dir", inputs.get("image_dir", ""),
                                 "--out", outputs.get("labels", "")],
            "run_personalization": ["run-personalization", "--model", model,
                                    "--job", inputs.get("job", ""),
                                    "--manifest", inputs.get("manifest", ""),
                                    "--input-dir", inputs.get("image_dir", ""),
                                    "--out-dir", outputs.get("image_dir", "")],
            }.get(kind)
    if argv is None:
        print(f"unknown bridge job kind {kind!r}", file=sys.stderr)
        return EXIT_INPUT
    if kind == "generate_images" and inputs.get("sidecar"):
        argv += ["--sidecar", inputs["sidecar"]]
    return main(argv)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentforge-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    fx = sub.add_parser("make-fixtures", help="record the tiny deterministic fixture models")
    fx.add_argument("--seed", type=int, default=0)
    fx.set_defaults(func=cmd_make_fixtures)

    gen = sub.add_parser("generate-images", help="render one image per LATV row")
    gen.add_argument("--model", default="fixture:gan")
    gen.add_argument("--latents", required=True)
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--sidecar", default=None, help="sample_id,row_index CSV for output naming")
    gen.set_defaults(func=cmd_generate_images)

    emb = sub.add_parser("extract-embeddings", help="embed every PNG in a directory")
    emb.add_argument("--model", default="fixture:embedder")
    emb.add_argument("--image-dir", required=True)
    emb.add_argument("--out", required=True)
    emb.add_argument("--sidecar-out", default=None)
    emb.set_defaults(func=cmd_extract_embeddings)

    det = sub.add_parser("detect-faces", help="face counts per image")
    det.add_argument("--model", default="fixture:detector")
    det.add_argument("--image-dir", required=True)
    det.add_argument("--out", required=True)
    det.set_defaults(func=cmd_detect_faces)

    qual = sub.add_parser("score-quality", help="quality score per image")
    qual.add_argument("--model", default="fixture:quality")
    qual.add_argument("--image-dir", required=True)
    qual.add_argument("--out", required=True)
    qual.set_defaults(func=cmd_score_quality)

    lab = sub.add_parser("label-attributes", help="attribute labels per image")
    lab.add_argument("--model", default="fixture:labeler")
    lab.add_argument("--image-dir", required=True)
    lab.add_argument("--out", required=True)
    lab.add_argument("--fields", default=None, help="comma-separated subset of label columns")
    lab.set_defaults(func=cmd_label_attributes)

    per = sub.add_parser("run-personalization", help="produce the manifest's expected outputs")
    per.add_argument("--model", default="stub:diffusion")
    per.add_argument("--job", required=True)
    per.add_argument("--manifest", required=True)
    per.add_argument("--input-dir", required=True)
    per.add_argument("--out-dir", default=None)
    per.add_argument("--max-outputs", type=int, default=None,
                     help="stop after N outputs (smoke/testing control)")
    per.set_defaults(func=cmd_run_personalization)

    job = sub.add_parser("run-job", help="dispatch a BridgeJob JSON document")
    job.add_argument("job")
    job.set_defaults(func=cmd_run_job)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except mdl.ModelLoadError as exc:
        _error_json({"error": str(exc), "model": exc.model_id})
        return EXIT_MODEL
    except (BridgeFormatError, InputFailure, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
