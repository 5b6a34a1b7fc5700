"""End-to-end orchestration: extract -> PCA -> GMM -> pool -> SVM -> evaluate.

Every stage writes its artifact into the cache directory and reuses it when
present, so a rerun with the same config is a cache replay and the whole
chain is deterministic: same seed, same bytes, at any worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import convnet, pyramid, svm as svm_mod
from .dataset import DatasetManifest, ManifestRecord, load_image
from .descriptors import DescriptorSet
from .errors import ConfigurationError, InputError, StageError
from .fisher import l2_normalize
from .gmm import GmmModel, fit_gmm
from .metrics import average_precision_11pt, mean_average_precision, top1_accuracy
from .pca import PcaModel, fit_pca, project, subsample
from .pooling import AP, STRATEGIES, PooledRepresentation, pool
from .svm import LinearModel, score_matrix, train_ovr

CACHE_ENV = "MPPFV_CACHE_DIR"


@dataclass
class PipelineConfig:
    """Flat, fully explicit run configuration; every seed is in here."""

    manifest: str = ""
    cache_dir: str = ""
    net: str = "toy:0"            # "toy:<seed>" | path to .mppn or .txt description
    standard: int = 32
    channels: int = 1
    descriptor_dim: int = 24
    scales: int = 3
    growth: str = "area"
    scale_mask: tuple[int, ...] = ()  # empty means all scales
    pca_dim: int = 16
    pca_whiten: bool = False
    pre_l2: bool = False          # per-descriptor l2 before PCA (off by default)
    sample_limit: int = 25_600
    gmm_k: int = 8
    pool: str = "mpp"
    svm_lambda: float = 0.0       # 0 means cross-validate
    svm_epochs: int = 200
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.pool not in STRATEGIES:
            raise ConfigurationError(f"unknown pooling strategy {self.pool!r}")
        if self.scales < 1:
            raise ConfigurationError("need at least one pyramid scale")

    @property
    def fv_length(self) -> int:
        """Fisher block length 2Kd implied by the config."""
        return 2 * self.gmm_k * self.pca_dim

    @property
    def effective_scales(self) -> tuple[int, ...]:
        return self.scale_mask or tuple(range(1, self.scales + 1))

    def resolve_cache(self) -> Path:
        cache = self.cache_dir or os.environ.get(CACHE_ENV, "")
        if not cache:
            raise ConfigurationError(
                f"no cache directory: set cache_dir or the {CACHE_ENV} environment variable"
            )
        path = Path(cache)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_mask"] = list(self.scale_mask)
        d["fv_length"] = self.fv_length
        return d

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        """Flat `key value` (or `key=value`) text file plus override pairs."""
        pairs: dict[str, str] = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, value = line.split("=", 1)
            else:
                key, _, value = line.partition(" ")
            pairs[key.strip()] = value.strip()
        pairs.update(overrides or {})
        return cls.from_pairs(pairs)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "PipelineConfig":
        kwargs: dict = {}
        for key, value in pairs.items():
            if key not in cls.__dataclass_fields__:
                raise ConfigurationError(f"unknown config key {key!r}")
            current = cls.__dataclass_fields__[key]
            typ = current.type
            if key == "scale_mask":
                kwargs[key] = tuple(int(t) for t in value.replace(",", " ").split()) \
                    if value else ()
            elif typ == "bool":
                kwargs[key] = value.strip() not in ("", "0", "false", "False")
            elif typ == "int":
                kwargs[key] = int(value)
            elif typ == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


@dataclass
class EvalReport:
    """Deterministic run summary; JSON form is byte-stable for a fixed seed."""

    top1: float
    per_class_ap: dict[str, float]
    mean_ap: float
    counters: dict[str, int]
    sweep: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "top1": self.top1,
            "per_class_ap": self.per_class_ap,
            "mean_ap": self.mean_ap,
            "counters": self.counters,
            "sweep": self.sweep,
            "config": self.config,
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        raw = json.loads(Path(path).read_text())
        return cls(raw["top1"], raw["per_class_ap"], raw["mean_ap"],
                   raw["counters"], raw["sweep"], raw["config"])


# ---------------------------------------------------------------------------
# Stage helpers

def build_network(cfg: PipelineConfig) -> convnet.NetworkSpec:
    if cfg.net.startswith("toy:"):
        net = convnet.toy_network(seed=int(cfg.net[4:]), standard=cfg.standard,
                                  channels=cfg.channels,
                                  descriptor_dim=cfg.descriptor_dim)
    elif cfg.net.endswith(".txt"):
        net = convnet.load_network_manifest(cfg.net)
    else:
        net = convnet.load_network(cfg.net)
    return convnet.convert_fc_to_conv(net)


def _manifest(cfg: PipelineConfig) -> DatasetManifest:
    if not cfg.manifest:
        raise ConfigurationError("config has no dataset manifest")
    return DatasetManifest.load(cfg.manifest)


def _descriptor_path(cache: Path, split: str, index: int) -> Path:
    return cache / "descriptors" / f"{split}-{index:05d}.mppd"


def _pooled_path(cache: Path, tag: str, split: str, index: int) -> Path:
    return cache / f"pooled-{tag}" / f"{split}-{index:05d}.mppf"


def stage_extract(cfg: PipelineConfig) -> dict[str, int]:
    """Dense multi-scale descriptors for every manifest image, cached per image.

    Returns the instruction counters (exact multiply-accumulate counts for
    the dense path, plus what the crop-and-resize path would have cost).
    """
    cache = cfg.resolve_cache()
    manifest = _manifest(cfg)
    net = build_network(cfg)
    base_dir = Path(cfg.manifest).parent
    (cache / "descriptors").mkdir(parents=True, exist_ok=True)

    records = [(r, i) for i, r in enumerate(manifest.records)]
    indexed: dict[str, list[tuple[ManifestRecord, int]]] = {"train": [], "test": []}
    per_split_counter = {"train": 0, "test": 0}
    for rec, _ in records:
        indexed[rec.split].append((rec, per_split_counter[rec.split]))
        per_split_counter[rec.split] += 1

    jobs = [(rec, split, idx) for split in ("train", "test")
            for rec, idx in indexed[split]]

    def run(job):
        rec, split, idx = job
        path = _descriptor_path(cache, split, idx)
        counter = convnet.MacCounter()
        if not path.exists():
            image = load_image(rec.source, base_dir)
            dset = pyramid.extract_all(net, image, cfg.scales, growth=cfg.growth,
                                       counter=counter)
            if cfg.pre_l2:
                norms = np.linalg.norm(dset.vectors, axis=1, keepdims=True)
                dset = dset.with_vectors(dset.vectors / np.maximum(norms, 1e-12))
            dset.save(path)
        return counter.total

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as tp:
            totals = list(tp.map(run, jobs))
    else:
        totals = [run(j) for j in jobs]

    dense_one = sum(
        convnet.mac_count(net, pyramid.scale_edge(cfg.standard, s, cfg.growth))
        for s in range(1, cfg.scales + 1)
    )
    counts = [
        int(np.prod(convnet.output_shape(
            net, pyramid.scale_edge(cfg.standard, s, cfg.growth))[1:]))
        for s in range(1, cfg.scales + 1)
    ]
    naive_one = sum(counts) * convnet.mac_count(net, cfg.standard)
    n_images = len(manifest.records)
    # Counters are computed analytically (not from the `totals` of work that
    # actually ran) so cache replays produce byte-identical reports.
    del totals
    return {
        "dense_macs": dense_one * n_images,
        "naive_macs_equivalent": naive_one * n_images,
        "descriptors_per_image": sum(counts),
    }


def _load_split_descriptors(cfg: PipelineConfig, split: str) -> list[DescriptorSet]:
    cache = cfg.resolve_cache()
    manifest = _manifest(cfg)
    n = len(manifest.split(split))
    sets = []
    for i in range(n):
        path = _descriptor_path(cache, split, i)
        if not path.exists():
            raise StageError(str(path), "extract")
        sets.append(DescriptorSet.load(path))
    return sets


def _training_sample(cfg: PipelineConfig) -> np.ndarray:
    wanted = cfg.effective_scales
    chunks = []
    for dset in _load_split_descriptors(cfg, "train"):
        mask = np.isin(dset.scales, wanted)
        chunks.append(dset.vectors[mask])
    return subsample(np.concatenate(chunks), cfg.sample_limit, cfg.seed)


def stage_pca(cfg: PipelineConfig) -> PcaModel:
    cache = cfg.resolve_cache()
    path = cache / "pca.mppp"
    if path.exists():
        return PcaModel.load(path)
    model = fit_pca(_training_sample(cfg), cfg.pca_dim, whiten=cfg.pca_whiten)
    model.save(path)
    return PcaModel.load(path)  # reload so downstream always sees f32-rounded values


def stage_gmm(cfg: PipelineConfig) -> GmmModel:
    cache = cfg.resolve_cache()
    path = cache / "gmm.mppg"
    if path.exists():
        return GmmModel.load(path)
    pca_path = cache / "pca.mppp"
    if not pca_path.exists():
        raise StageError(str(pca_path), "fit-pca")
    pca_model = PcaModel.load(pca_path)
    projected = project(pca_model, _training_sample(cfg))
    model = fit_gmm(projected, cfg.gmm_k, seed=cfg.seed)
    model.save(path)
    return GmmModel.load(path)


def stage_encode(cfg: PipelineConfig) -> None:
    """Pool every image's projected descriptors with the configured strategy."""
    cache = cfg.resolve_cache()
    pca_path, gmm_path = cache / "pca.mppp", cache / "gmm.mppg"
    if not pca_path.exists():
        raise StageError(str(pca_path), "fit-pca")
    pca_model = PcaModel.load(pca_path)
    gmm_model: GmmModel | None = None
    if cfg.pool != AP:
        if not gmm_path.exists():
            raise StageError(str(gmm_path), "fit-gmm")
        gmm_model = GmmModel.load(gmm_path)

    out_dir = cache / f"pooled-{cfg.pool}"
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = cfg.effective_scales

    for split in ("train", "test"):
        sets = _load_split_descriptors(cfg, split)

        def encode(job):
            idx, dset = job
            path = _pooled_path(cache, cfg.pool, split, idx)
            if path.exists():
                return
            if cfg.pool == AP:
                rep = pool(AP, None, dset, scales=wanted)
            else:
                rep = pool(cfg.pool, gmm_model, project(pca_model, dset), scales=wanted)
            rep.save(path)

        jobs = list(enumerate(sets))
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as tp:
                list(tp.map(encode, jobs))
        else:
            for job in jobs:
                encode(job)


def _load_pooled(cfg: PipelineConfig, split: str) -> list[PooledRepresentation]:
    cache = cfg.resolve_cache()
    manifest = _manifest(cfg)
    reps = []
    for i in range(len(manifest.split(split))):
        path = _pooled_path(cache, cfg.pool, split, i)
        if not path.exists():
            raise StageError(str(path), "encode")
        reps.append(PooledRepresentation.load(path))
    return reps


def stage_svm(cfg: PipelineConfig) -> LinearModel:
    cache = cfg.resolve_cache()
    path = cache / f"svm-{cfg.pool}.mpps"
    if path.exists():
        return LinearModel.load(path)
    manifest = _manifest(cfg)
    reps = _load_pooled(cfg, "train")
    labels = [set(r.labels) for r in manifest.split("train")]
    lam = cfg.svm_lambda if cfg.svm_lambda > 0 else None
    model = train_ovr(reps, labels, lambda_reg=lam, seed=cfg.seed,
                      epochs=cfg.svm_epochs, workers=cfg.workers)
    model.save(path)
    return LinearModel.load(path)


def stage_eval(cfg: PipelineConfig, counters: dict[str, int] | None = None) -> EvalReport:
    cache = cfg.resolve_cache()
    model_path = cache / f"svm-{cfg.pool}.mpps"
    if not model_path.exists():
        raise StageError(str(model_path), "train-svm")
    model = LinearModel.load(model_path)
    manifest = _manifest(cfg)
    reps = _load_pooled(cfg, "test")
    label_sets = [set(r.labels) for r in manifest.split("test")]

    scores = score_matrix(model, reps)
    per_class = {}
    for j, cls in enumerate(model.classes):
        relevance = np.array([cls in s for s in label_sets])
        per_class[cls] = average_precision_11pt(scores[:, j], relevance)
    report = EvalReport(
        top1=top1_accuracy(scores, model.classes, label_sets),
        per_class_ap=per_class,
        mean_ap=mean_average_precision(per_class),
        counters=dict(sorted((counters or {}).items())),
        config=cfg.to_dict(),
    )
    report.save(cache / f"report-{cfg.pool}.json")
    return report


def run_pipeline(cfg: PipelineConfig) -> EvalReport:
    """All stages in order, reusing whatever the cache already holds."""
    counters = stage_extract(cfg)
    stage_pca(cfg)
    stage_gmm(cfg)
    stage_encode(cfg)
    stage_svm(cfg)
    return stage_eval(cfg, counters)


def scale_sweep(cfg: PipelineConfig, ranges: list[tuple[int, ...]] | None = None,
                strategies: tuple[str, ...] = ("mpp", "nfk")) -> EvalReport:
    """Rerun pooling/classification over scale subsets, one row per combination.

    Extraction happens once at the full pyramid depth; each range gets its
    own PCA/GMM/SVM chain in a sub-cache so runs stay independent.
    """
    if ranges is None:
        ranges = [tuple(range(1, top + 1)) for top in range(1, cfg.scales + 1)]
    counters = stage_extract(cfg)
    base_cache = cfg.resolve_cache()

    rows = []
    for scale_range in ranges:
        for strategy in strategies:
            tag = "s" + "-".join(str(s) for s in scale_range)
            sub = replace(cfg, pool=strategy, scale_mask=tuple(scale_range),
                          cache_dir=str(base_cache / f"sweep-{tag}"))
            sub.resolve_cache().mkdir(parents=True, exist_ok=True)
            link = sub.resolve_cache() / "descriptors"
            if not link.exists():
                link.symlink_to(base_cache / "descriptors")
            stage_pca(sub)
            stage_gmm(sub)
            stage_encode(sub)
            stage_svm(sub)
            report = stage_eval(sub)
            rows.append({
                "scales": list(scale_range),
                "strategy": strategy,
                "top1": report.top1,
                "mean_ap": report.mean_ap,
            })

    final = EvalReport(
        top1=rows[-1]["top1"], per_class_ap={}, mean_ap=rows[-1]["mean_ap"],
        counters=dict(sorted(counters.items())), sweep=rows, config=cfg.to_dict(),
    )
    final.save(base_cache / "sweep-report.json")
    return final
