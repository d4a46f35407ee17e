"""Run-directory pipeline: the canonical stage sequence over file artifacts.

Each stage reads its inputs from the run directory, writes immutable
outputs, and records input/output digests in manifest.json. Re-running a
completed stage with identical input digests is a no-op; with different
digests the run directory is considered tainted and the stage refuses.
Manifests carry no timestamps, so identical config+seed runs are
byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import boundaries as bnd
from . import curation as cur
from . import evaluation as ev
from . import fileio as fio
from . import identities as idf
from . import personalization as per
from . import simworld as sw
from .errors import ConfigError, DataError, DependencyError
from .geometry import AttributeBoundary

STAGES = (
    "pool",
    "boundaries",
    "identities",
    "variations",
    "personalize-emit",
    "ingest",
    "filter",
    "eval",
)

LABEL_COLUMNS = ("index", "race", "gender", "age_bin", "expression", "yaw", "pitch", "illumination", "quality")


@dataclass
class EvalConfig:
    per_identity: int = 10
    mated: int = 20
    nonmated: int = 20
    bins: int = 100
    epsilon: float = 1e-6
    gan_per_identity: int = 6
    gan_mated: int = 15
    references: tuple[str, ...] = ("gan",)


@dataclass
class RunConfig:
    backend: str = "simworld"
    pool_size: int = 2560
    quality_percentile: float = 0.10
    dim: int = 64
    embed_dim: int = 32
    races: tuple[str, ...] = sw.RACES
    age_bins: tuple[str, ...] = sw.ADULT_AGE_BINS
    genders: tuple[str, ...] = sw.GENDERS
    per_group: int = 10
    alphas: dict = field(default_factory=lambda: {"race": 1.0, "age": 1.0, "gender": 1.0, "expression": 1.0})
    alpha_yaw: float = 1.39
    alpha_pitch: float = 0.98
    t_ip: float = 0.3
    t_ip_sweep: tuple[float, ...] = ()
    prompts_per_category: int = 4
    samples_per_prompt: int = 4
    sim_noise_sweep: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    sim_outlier_fraction: float = 0.1
    svm_epochs: int = 50
    svm_per_side: int | None = None
    eval: EvalConfig = field(default_factory=EvalConfig)
    quality_threshold: float = 24.45
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        doc = fio.read_json(path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
        kwargs = dict(doc)
        if "eval" in kwargs:
            ev_doc = kwargs["eval"]
            ev_known = set(EvalConfig.__dataclass_fields__)
            ev_unknown = set(ev_doc) - ev_known
            if ev_unknown:
                raise ConfigError(f"{path}: unknown eval fields {sorted(ev_unknown)}")
            if "references" in ev_doc:
                ev_doc["references"] = tuple(ev_doc["references"])
            kwargs["eval"] = EvalConfig(**ev_doc)
        for tup_field in ("races", "age_bins", "genders", "t_ip_sweep", "sim_noise_sweep"):
            if tup_field in kwargs:
                kwargs[tup_field] = tuple(kwargs[tup_field])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.backend not in ("simworld", "bridge"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if not 0.0 <= self.quality_percentile < 1.0:
            raise ConfigError(f"quality_percentile must be in [0,1), got {self.quality_percentile}")
        if self.per_group < 1 or self.pool_size < 1:
            raise ConfigError("per_group and pool_size must be >= 1")
        for t in self.t_ip_values():
            cur.FilterConfig(t_ip=t)  # range check

    def t_ip_values(self) -> tuple[float, ...]:
        return self.t_ip_sweep if self.t_ip_sweep else (self.t_ip,)

    def to_canonical_json(self) -> str:
        doc = json.loads(json.dumps(self, default=lambda o: o.__dict__ if hasattr(o, "__dict__") else list(o)))
        return json.dumps(doc, indent=2, sort_keys=True)


def _tip_tag(t: float) -> str:
    return f"tip{t:.2f}".replace(".", "").replace("-", "m")


class RunDirectory:
    """Manifest bookkeeping plus stage implementations for one run."""

    def __init__(self, root, config: RunConfig):
        self.root = Path(root)
        self.config = config
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = fio.read_json(self.manifest_path)
        else:
            self.manifest = {
                "config_digest": fio.sha256_bytes(config.to_canonical_json().encode()),
                "seed": config.seed,
                "stages": {},
            }
        recorded = self.manifest.get("config_digest")
        current = fio.sha256_bytes(config.to_canonical_json().encode())
        if recorded != current:
            raise ConfigError(
                f"run directory {self.root} was created with a different config; use a fresh directory"
            )

    # -- manifest helpers ---------------------------------------------------

    def _save_manifest(self):
        fio.write_json(self.manifest_path, self.manifest)

    def _digest_inputs(self, paths) -> str:
        h = []
        for p in sorted(str(p) for p in paths):
            h.append(f"{Path(p).name}:{fio.sha256_file(p)}")
        return fio.sha256_bytes("|".join(h).encode())

    def stage_done(self, stage: str) -> bool:
        return stage in self.manifest["stages"]

    def _require(self, stage: str, needed: str):
        if not self.stage_done(needed):
            raise DependencyError(f"stage {stage!r} requires completed stage {needed!r}")

    def _finish(self, stage: str, input_digest: str, outputs):
        entry = {
            "inputs": input_digest,
            "outputs": {str(Path(p).relative_to(self.root)): fio.sha256_file(p) for p in sorted(map(str, outputs))},
        }
        self.manifest["stages"][stage] = entry
        self._save_manifest()

    def _skip_or_refuse(self, stage: str, input_digest: str) -> bool:
        """True when the stage is already done with identical inputs."""
        if not self.stage_done(stage):
            return False
        if self.manifest["stages"][stage]["inputs"] == input_digest:
            return True
        raise ConfigError(
            f"stage {stage!r} already ran with different inputs; outputs are immutable, use a fresh run directory"
        )

    # -- backend ------------------------------------------------------------

    def world(self) -> sw.World:
        cfg = self.config
        return sw.create_world(dim=cfg.dim, embed_dim=cfg.embed_dim, seed=cfg.seed)

    # -- stages ---------------------------------------------------------------

    def run_stage(self, stage: str):
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
        if self.config.backend != "simworld" and stage in ("pool", "ingest"):
            raise ConfigError("bridge-backed runs must supply pool/ingest artifacts via the bridge CLI")
        getattr(self, "stage_" + stage.replace("-", "_"))()

    def stage_pool(self):
        cfg = self.config
        digest = fio.sha256_bytes(f"pool:{cfg.pool_size}:{cfg.quality_percentile}:{cfg.seed}".encode())
        if self._skip_or_refuse("pool", digest):
            return
        result = idf.build_candidate_pool(self.world(), cfg.pool_size, cfg.quality_percentile, seed=cfg.seed)
        out = self.root / "pool"
        latents = np.stack([s.latent for s in result.samples])
        fio.write_latv(out / "latents.latv", latents)
        fio.write_csv(
            out / "labels.csv",
            LABEL_COLUMNS,
            (
                (i, s.race, s.gender, s.age_bin, s.expression,
                 f"{s.yaw:.8f}", f"{s.pitch:.8f}", f"{s.illumination:.8f}", f"{s.quality:.6f}")
                for i, s in enumerate(result.samples)
            ),
        )
        fio.write_json(
            out / "provenance.json",
            {
                "n_sampled": result.n_sampled,
                "n_quality_dropped": result.n_quality_dropped,
                "n_age_dropped": result.n_age_dropped,
                "n_pool": len(result.samples),
            },
        )
        self._finish("pool", digest, [out / "latents.latv", out / "labels.csv", out / "provenance.json"])

    def load_pool(self) -> list[idf.CandidateSample]:
        latents = fio.read_latv(self.root / "pool" / "latents.latv")
        rows = fio.read_csv_dicts(self.root / "pool" / "labels.csv", required=LABEL_COLUMNS)
        if len(rows) != latents.shape[0]:
            raise DataError("pool labels and latents disagree in length")
        return [
            idf.CandidateSample(
                index=int(r["index"]),
                latent=latents[i],
                race=r["race"],
                gender=r["gender"],
                age_bin=r["age_bin"],
                expression=r["expression"],
                yaw=float(r["yaw"]),
                pitch=float(r["pitch"]),
                illumination=float(r["illumination"]),
                quality=float(r["quality"]),
            )
            for i, r in enumerate(rows)
        ]

    def stage_boundaries(self):
        cfg = self.config
        self._require("boundaries", "pool")
        inputs = [self.root / "pool" / "latents.latv", self.root / "pool" / "labels.csv"]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("boundaries", digest):
            return
        pool = self.load_pool()
        latents = np.stack([s.latent for s in pool])
        svm = bnd.SvmConfig(epochs=cfg.svm_epochs, seed=cfg.seed)
        trained: dict[str, AttributeBoundary] = {}

        # scalar attributes: extremes of the recorded scores
        for attr in ("yaw", "pitch", "illumination"):
            pool_scores = np.array([getattr(s, attr) for s in pool])
            lp = bnd.LabeledPool(latents=latents, scores=pool_scores, attribute=attr)
            trained.update(bnd.train_attribute_suite({attr: lp}, "binary", svm, per_side=cfg.svm_per_side))

        # gender / age: categorical labels mapped to ordinal scores
        gender_scores = np.array([1.0 if s.gender == "Male" else -1.0 for s in pool])
        trained.update(
            bnd.train_attribute_suite(
                {"gender": bnd.LabeledPool(latents=latents, scores=gender_scores, attribute="gender")},
                "binary", svm, per_side=cfg.svm_per_side,
            )
        )
        bin_rank = {b: i for i, b in enumerate(cfg.age_bins)}
        age_scores = np.array([float(bin_rank.get(s.age_bin, 0)) for s in pool])
        trained.update(
            bnd.train_attribute_suite(
                {"age": bnd.LabeledPool(latents=latents, scores=age_scores, attribute="age")},
                "binary", svm, per_side=cfg.svm_per_side,
            )
        )

        # expressions: each against neutral
        expr_pools = {}
        for expr in sw.EXPRESSIONS:
            mask = np.array([s.expression == expr for s in pool])
            if mask.sum() >= 2:
                expr_pools[expr] = bnd.LabeledPool(
                    latents=latents[mask], scores=np.zeros(int(mask.sum())), attribute=expr
                )
        if "neutral" not in expr_pools:
            raise DataError("pool has no neutral-expression samples; cannot train expression boundaries")
        expr_trained = bnd.train_attribute_suite(expr_pools, "one_vs_one_vs_neutral", svm)
        trained.update({idf.expression_key(k): v for k, v in expr_trained.items()})

        # races: one vs all
        race_pools = {}
        for race in cfg.races:
            mask = np.array([s.race == race for s in pool])
            if mask.sum() >= 2:
                race_pools[race] = bnd.LabeledPool(
                    latents=latents[mask], scores=np.zeros(int(mask.sum())), attribute=race
                )
        if len(race_pools) < 2:
            raise DataError("pool covers fewer than 2 races; cannot train race boundaries")
        race_trained = bnd.train_attribute_suite(race_pools, "one_vs_all", svm)
        trained.update({idf.race_key(k): v for k, v in race_trained.items()})

        out = self.root / "boundaries"
        outputs = []
        for key in sorted(trained):
            b = trained[key]
            b.attribute = key
            path = out / (key.replace(":", "_") + ".json")
            fio.write_boundary_json(path, b)
            outputs.append(path)
        report = out / "report.csv"
        lines = ["# average_distance over all training vectors, unit normal; holdout=last 10% of seeded shuffle per side"]
        lines.append("attribute,n_images,validation_accuracy,average_distance")
        for key in sorted(trained):
            m = trained[key].meta
            lines.append(f"{key},{m.n_train},{m.validation_accuracy:.4f},{m.average_distance:.4f}")
        fio.atomic_write_text(report, "\n".join(lines) + "\n")
        outputs.append(report)
        self._finish("boundaries", digest, outputs)

    def load_boundaries(self) -> dict[str, AttributeBoundary]:
        out = self.root / "boundaries"
        found = {}
        for path in sorted(out.glob("*.json")):
            b = fio.read_boundary_json(path)
            found[b.attribute] = b
        if not found:
            raise DependencyError("no boundary files found; run the boundaries stage")
        return found

    def stage_identities(self):
        cfg = self.config
        self._require("identities", "boundaries")
        inputs = sorted((self.root / "boundaries").glob("*.json")) + [self.root / "pool" / "latents.latv"]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("identities", digest):
            return
        pool = self.load_pool()
        trained = self.load_boundaries()
        groups, quota = idf.plan_demographic_groups(cfg.races, cfg.age_bins, cfg.genders, cfg.per_group)

        used: set[int] = set()
        records = []
        unfillable = []
        for group in groups:
            available = [s for s in pool if s.index not in used]
            if len(available) < cfg.per_group:
                unfillable.append(group)
                continue
            seeds = idf.select_seed_candidates(available, group, cfg.per_group)
            for j, seed in enumerate(seeds):
                used.add(seed.index)
                alphas = idf.resolve_demographic_alphas(group, cfg.alphas)
                rec = idf.synthesize_identity(
                    seed, group, trained, alphas, identity_id=f"g{group.group_id:02d}i{j}"
                )
                records.append(rec)
        if unfillable:
            raise DataError(
                "cannot fill demographic quota; unfillable groups: "
                + ", ".join(f"{g.race}/{g.age_bin}/{g.gender}" for g in unfillable)
            )
        if len(records) != quota:
            raise DataError(f"planned {quota} identities, produced {len(records)}")

        out = self.root / "identities"
        latents = np.stack([r.demographic_latent for r in records])
        fio.write_latv(out / "demographic.latv", latents)
        neutral = np.stack([r.neutral_latent for r in records])
        fio.write_latv(out / "neutral.latv", neutral)
        seeds_arr = np.stack([r.seed_latent for r in records])
        fio.write_latv(out / "seeds.latv", seeds_arr)
        doc = [
            {
                "identity_id": r.identity_id,
                "group_id": r.group.group_id,
                "race": r.group.race,
                "age_bin": r.group.age_bin,
                "gender": r.group.gender,
                "row": i,
                "steps": r.steps,
                "status": r.status,
            }
            for i, r in enumerate(records)
        ]
        fio.write_json(out / "identities.json", doc)
        self._finish(
            "identities", digest,
            [out / "demographic.latv", out / "neutral.latv", out / "seeds.latv", out / "identities.json"],
        )

    def load_identities(self) -> list[idf.IdentityRecord]:
        out = self.root / "identities"
        doc = fio.read_json(out / "identities.json")
        demo = fio.read_latv(out / "demographic.latv")
        neutral = fio.read_latv(out / "neutral.latv")
        seeds = fio.read_latv(out / "seeds.latv")
        records = []
        for entry in doc:
            group = idf.DemographicGroup(
                race=entry["race"], age_bin=entry["age_bin"], gender=entry["gender"], group_id=entry["group_id"]
            )
            i = entry["row"]
            rec = idf.IdentityRecord(
                identity_id=entry["identity_id"],
                group=group,
                seed_latent=seeds[i],
                neutral_latent=neutral[i],
                demographic_latent=demo[i],
                status=entry["status"],
                steps=list(entry["steps"]),
            )
            records.append(rec)
        return records

    def stage_variations(self):
        cfg = self.config
        self._require("variations", "identities")
        inputs = [self.root / "identities" / "identities.json", self.root / "identities" / "demographic.latv"]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("variations", digest):
            return
        records = self.load_identities()
        trained = self.load_boundaries()
        spec = idf.default_variation_spec(cfg.alpha_yaw, cfg.alpha_pitch, cfg.alphas.get("expression", 1.0))
        world = self.world()

        rows = []
        sidecar = {}
        gan_embeddings = []
        gan_meta = []
        for rec in records:
            idf.generate_variations(rec, spec, trained)
            for tag, latent in zip(rec.variation_tags, rec.variation_latents):
                sample_id = f"{rec.identity_id}_{tag}"
                sidecar[sample_id] = len(rows)
                rows.append(latent)
                gan_embeddings.append(sw.embed(world, latent))
                gan_meta.append((sample_id, rec.identity_id, tag, rec.group.gender))

        out = self.root / "variations"
        fio.write_latv(out / "latents.latv", np.stack(rows))
        fio.write_sidecar_csv(out / "latents.sidecar.csv", sidecar)
        fio.write_latv(out / "gan_embeddings.latv", np.stack(gan_embeddings))
        fio.write_sidecar_csv(out / "gan_embeddings.sidecar.csv", sidecar)
        fio.write_csv(
            out / "samples.csv",
            ("sample_id", "identity_id", "variation", "gender"),
            gan_meta,
        )
        # identities.json stays untouched (stage outputs are immutable);
        # synthesized status lives in this stage's own artifact.
        status_doc = {
            rec.identity_id: {"status": "synthesized", "variations": [f"{rec.identity_id}_{t}" for t in rec.variation_tags]}
            for rec in records
        }
        fio.write_json(out / "status.json", status_doc)
        self._finish(
            "variations", digest,
            [out / "latents.latv", out / "latents.sidecar.csv", out / "gan_embeddings.latv",
             out / "gan_embeddings.sidecar.csv", out / "samples.csv", out / "status.json"],
        )

    def stage_personalize_emit(self):
        cfg = self.config
        self._require("personalize-emit", "variations")
        inputs = [self.root / "variations" / "samples.csv", self.root / "variations" / "status.json"]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("personalize-emit", digest):
            return
        records = self.load_identities()
        var_latents = fio.read_latv(self.root / "variations" / "latents.latv")
        var_sidecar = fio.read_sidecar_csv(self.root / "variations" / "latents.sidecar.csv")
        status_doc = fio.read_json(self.root / "variations" / "status.json")
        templates = {
            cat: items[: cfg.prompts_per_category] for cat, items in per.DEFAULT_PROMPT_TEMPLATES.items()
        }
        bank = per.build_prompt_bank(templates)
        out = self.root / "personalize"
        outputs = []
        bank_path = out / "prompts.json"
        fio.write_json(bank_path, [p.to_dict() for p in bank])
        outputs.append(bank_path)
        for rec in records:
            entry = status_doc[rec.identity_id]
            sample_ids = entry["variations"]
            rec.variation_tags = [sid[len(rec.identity_id) + 1 :] for sid in sample_ids]
            rec.variation_latents = [var_latents[var_sidecar[sid]] for sid in sample_ids]
            rec.status = entry["status"]
            job = per.emit_finetune_job(rec, out_dir=out / "jobs")
            outputs.append(out / "jobs" / f"{job.identity_id}.job.json")
            manifest = per.emit_inference_manifest(
                rec.identity_id,
                bank,
                samples_per_prompt=cfg.samples_per_prompt,
                seed=cfg.seed,
                # run-dir-relative so manifests are byte-identical across runs
                output_dir=f"personalize/generated/{rec.identity_id}",
                out_path=out / "manifests" / f"{rec.identity_id}.manifest.json",
            )
            outputs.append(out / "manifests" / f"{manifest.identity_id}.manifest.json")
        self._finish("personalize-emit", digest, outputs)

    def stage_ingest(self):
        """Simworld stand-in for running the personalization jobs."""
        cfg = self.config
        self._require("ingest", "personalize-emit")
        manifests = sorted((self.root / "personalize" / "manifests").glob("*.manifest.json"))
        digest = self._digest_inputs(manifests)
        if self._skip_or_refuse("ingest", digest):
            return
        records = {r.identity_id: r for r in self.load_identities()}
        world = self.world()

        embeddings = []
        sidecar = {}
        sample_rows = []
        detections = []
        genders = []
        for m_index, mpath in enumerate(manifests):
            manifest = per.load_inference_manifest(mpath)
            rec = records[manifest.identity_id]
            stems = [name[: -len(".png")] for name in manifest.expected_outputs()]
            sims = sw.simulate_personalization(
                world,
                rec.demographic_latent,
                stems,
                per_prompt_noise=list(cfg.sim_noise_sweep),
                seed=cfg.seed * 100003 + m_index,
                outlier_fraction=cfg.sim_outlier_fraction,
                identity_gender=rec.group.gender,
            )
            for sim in sims:
                sample_id = sim.prompt_id
                sidecar[sample_id] = len(embeddings)
                embeddings.append(sim.embedding)
                prompt_id = sample_id[len(manifest.identity_id) + 1 :].rsplit("_", 1)[0]
                sample_rows.append((sample_id, manifest.identity_id, prompt_id, "diffusion", int(sim.is_outlier)))
                detections.append((sample_id, 1))
                genders.append((sample_id, sim.gender))

        out = self.root / "diffusion"
        fio.write_latv(out / "embeddings.latv", np.stack(embeddings))
        fio.write_sidecar_csv(out / "embeddings.sidecar.csv", sidecar)
        fio.write_csv(out / "samples.csv", ("sample_id", "identity_id", "prompt_id", "stage", "is_outlier"), sample_rows)
        fio.write_csv(out / "detections.csv", ("sample_id", "face_count"), detections)
        fio.write_csv(out / "genders.csv", ("sample_id", "gender"), genders)
        self._finish(
            "ingest", digest,
            [out / "embeddings.latv", out / "embeddings.sidecar.csv", out / "samples.csv",
             out / "detections.csv", out / "genders.csv"],
        )

    def _load_diffusion(self):
        out = self.root / "diffusion"
        emb = fio.read_latv(out / "embeddings.latv")
        sidecar = fio.read_sidecar_csv(out / "embeddings.sidecar.csv")
        rows = fio.read_csv_dicts(out / "samples.csv", required=("sample_id", "identity_id", "prompt_id", "stage"))
        detections = {
            r["sample_id"]: int(r["face_count"])
            for r in fio.read_csv_dicts(out / "detections.csv", required=("sample_id", "face_count"))
        }
        genders = {
            r["sample_id"]: r["gender"]
            for r in fio.read_csv_dicts(out / "genders.csv", required=("sample_id", "gender"))
        }
        embeddings = {sid: emb[row] for sid, row in sidecar.items()}
        return rows, embeddings, detections, genders

    def _load_gan_references(self):
        out = self.root / "variations"
        emb = fio.read_latv(out / "gan_embeddings.latv")
        sidecar = fio.read_sidecar_csv(out / "gan_embeddings.sidecar.csv")
        rows = fio.read_csv_dicts(out / "samples.csv", required=("sample_id", "identity_id", "variation", "gender"))
        by_identity: dict[str, list[dict]] = {}
        for r in rows:
            by_identity.setdefault(r["identity_id"], []).append(r)
        refs = {}
        gan_embeddings = {}
        for identity, rws in by_identity.items():
            vecs = np.stack([emb[sidecar[r["sample_id"]]] for r in rws])
            refs[identity] = cur.build_gan_reference(identity, vecs, [r["gender"] for r in rws])
            for r in rws:
                gan_embeddings[r["sample_id"]] = emb[sidecar[r["sample_id"]]]
        return refs, gan_embeddings, rows

    def stage_filter(self):
        cfg = self.config
        self._require("filter", "ingest")
        inputs = [
            self.root / "diffusion" / "samples.csv",
            self.root / "diffusion" / "embeddings.latv",
            self.root / "variations" / "gan_embeddings.latv",
        ]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("filter", digest):
            return
        rows, embeddings, detections, genders = self._load_diffusion()
        refs, _, _ = self._load_gan_references()
        outputs = []
        for t in cfg.t_ip_values():
            samples = [
                cur.CurationSample(
                    sample_id=r["sample_id"],
                    identity_id=r["identity_id"],
                    stage=r["stage"],
                    prompt_id=r["prompt_id"],
                )
                for r in rows
            ]
            filtered, report = cur.apply_filters(
                samples, refs, cur.FilterConfig(t_ip=t), genders, embeddings=embeddings, detections=detections
            )
            out = self.root / "filter" / _tip_tag(t)
            fio.write_json(out / "report.json", report.to_dict())
            fio.write_csv(
                out / "survivors.csv",
                ("sample_id", "identity_id", "ip_score"),
                (
                    (s.sample_id, s.identity_id, f"{s.ip_score:.8f}")
                    for s in filtered
                    if s.verdict == "kept"
                ),
            )
            outputs.extend([out / "report.json", out / "survivors.csv"])
        self._finish("filter", digest, outputs)

    def stage_eval(self):
        cfg = self.config
        self._require("eval", "filter")
        inputs = [self.root / "filter" / _tip_tag(t) / "survivors.csv" for t in cfg.t_ip_values()]
        digest = self._digest_inputs(inputs)
        if self._skip_or_refuse("eval", digest):
            return
        _, diff_embeddings, _, _ = self._load_diffusion()
        refs, gan_embeddings, gan_rows = self._load_gan_references()

        datasets: dict[str, ev.EvaluatedDataset] = {}
        comparison_docs = {}

        gan_by_identity: dict[str, list[str]] = {}
        for r in gan_rows:
            gan_by_identity.setdefault(r["identity_id"], []).append(r["sample_id"])
        cset = ev.sample_comparisons(
            gan_by_identity,
            per_identity=cfg.eval.gan_per_identity,
            mated_per_id=cfg.eval.gan_mated,
            nonmated_per_id=cfg.eval.nonmated,
            seed=cfg.seed,
            dataset_id="gan",
        )
        mated, nonmated = ev.score_comparisons(cset, gan_embeddings, bins=cfg.eval.bins)
        datasets["gan"] = ev.EvaluatedDataset("gan", mated, nonmated, n_identities=len(gan_by_identity))
        comparison_docs["gan"] = cset.to_dict()

        for t in cfg.t_ip_values():
            name = _tip_tag(t)
            surv = fio.read_csv_dicts(
                self.root / "filter" / name / "survivors.csv", required=("sample_id", "identity_id")
            )
            by_identity: dict[str, list[str]] = {}
            for r in surv:
                by_identity.setdefault(r["identity_id"], []).append(r["sample_id"])
            cset = ev.sample_comparisons(
                by_identity,
                per_identity=cfg.eval.per_identity,
                mated_per_id=cfg.eval.mated,
                nonmated_per_id=cfg.eval.nonmated,
                seed=cfg.seed,
                dataset_id=name,
            )
            mated, nonmated = ev.score_comparisons(cset, diff_embeddings, bins=cfg.eval.bins)
            datasets[name] = ev.EvaluatedDataset(name, mated, nonmated, n_identities=len(by_identity))
            comparison_docs[name] = cset.to_dict()

        report_csv, hist_csv = ev.distribution_report(
            datasets, list(cfg.eval.references), bins=cfg.eval.bins, epsilon=cfg.eval.epsilon
        )
        out = self.root / "eval"
        fio.atomic_write_text(out / "report.csv", report_csv)
        fio.atomic_write_text(out / "histograms.csv", hist_csv)
        outputs = [out / "report.csv", out / "histograms.csv"]
        for name, doc in comparison_docs.items():
            path = out / "comparisons" / f"{name}.json"
            fio.write_json(path, doc)
            outputs.append(path)
        self._finish("eval", digest, outputs)


def execute(config_path, run_dir, stage_filter=None, seed_override=None, t_ip_override=None) -> Path:
    """Run the requested stages (all of them by default) in canonical order.

    The run directory is held under a single-writer lock for the duration.
    """
    config = RunConfig.from_file(config_path)
    if seed_override is not None:
        config.seed = int(seed_override)
    if t_ip_override is not None:
        config.t_ip = float(t_ip_override)
        config.t_ip_sweep = ()
        config.validate()
    unknown = set(stage_filter or ()) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}, expected a subset of {STAGES}")
    run = RunDirectory(run_dir, config)
    wanted = list(STAGES) if not stage_filter else [s for s in STAGES if s in set(stage_filter)]

    lock = run.root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"run directory {run.root} is locked by another writer ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        for stage in wanted:
            run.run_stage(stage)
    finally:
        lock.unlink(missing_ok=True)
    return run.root
