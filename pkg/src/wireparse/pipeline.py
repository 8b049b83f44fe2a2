"""Three-stage parser (proposals -> matching -> verification) behind pluggable predictors."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from . import container, metrics
from .geom import GridSpec
from .hafm_codec import AttractionFieldMap, CodecConfig, ResidualMap, decode, encode, residual_gt
from .junction_codec import DEFAULT_K, JunctionMaps, decode_junctions, encode_junctions, proposals_to_arrays
from .losses import LossConfig
from .metrics import EvalReport, MetricConfig
from .proposals import ProposalSet
from .refine import MatchConfig, match
from .scene_io import SceneError, ScoredWireframe, Wireframe, load_wireframe, save_wireframe, synth_scene
from .verify import (
    FeatureMap,
    MLPScorer,
    VerifyConfig,
    assign_labels,
    augment_samples,
    junction_pair_negatives,
    loi_pool_batch,
    oracle_features,
    train_reference_scorer,
)

log = logging.getLogger(__name__)

_BELOW_ONE = np.nextafter(1.0, 0.0)
_BELOW_HALF = np.nextafter(0.5, 0.0)
_BELOW_ONE_F32 = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass(frozen=True)
class Predictor:
    """Stand-in for the learned backbone and heads."""

    kind: str = "oracle"  # oracle | noisy | file
    sigma: float = 0.0
    drop_rate: float = 0.0
    seed: int = 0
    maps_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("oracle", "noisy", "file"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.sigma < 0 or not 0 <= self.drop_rate <= 1:
            raise ValueError("need sigma >= 0 and drop_rate in [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    image_w: int = 512
    image_h: int = 512
    downsample: int = 4
    codec: CodecConfig = field(default_factory=CodecConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    junction_k: int = DEFAULT_K
    junction_w: float | None = None  # None -> downsample
    predictor: Predictor = field(default_factory=Predictor)
    score_threshold: float = 0.0
    seed: int = 0
    # reference scorer / synthetic data
    scorer_hidden: int = 32
    scorer_epochs: int = 800
    train_scenes: int = 20
    synth_segments: int = 20
    synth_min_len: float = 32.0
    synth_min_separation: float = 12.0

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.image_w, self.image_h, self.downsample)

    def spec_for(self, wf: Wireframe) -> GridSpec:
        return GridSpec(wf.width, wf.height, self.downsample)

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "PipelineConfig":
        """Build from flat ``key=value`` pairs (see :data:`CONFIG_KEYS`)."""
        top, nested = {}, {"codec": {}, "matching": {}, "verify": {}, "loss": {}, "metric": {}, "predictor": {}}
        for key, raw in kv.items():
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            section, conv = CONFIG_KEYS[key]
            value = conv(raw) if isinstance(raw, str) else raw
            name = _NESTED_NAMES.get(key, key)
            if section is None:
                top[name] = value
            else:
                nested[section][name] = value
        base = cls()
        for section, values in nested.items():
            if values:
                top[section] = replace(getattr(base, section), **values)
        return replace(base, **top)


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(" ", "").split(",") if v)


def _resolution(raw: str) -> tuple[int, int]:
    w, h = raw.lower().split("x")
    return int(w), int(h)


def _opt_float(raw: str):
    return None if raw.lower() in ("", "none") else float(raw)


CONFIG_KEYS = {
    "image_w": (None, int),
    "image_h": (None, int),
    "downsample": (None, int),
    "d_max": ("codec", float),
    "tau": ("matching", float),
    "s": ("verify", int),
    "pool_window": ("verify", int),
    "eta": ("verify", float),
    "n": ("verify", int),
    "lambda_msk": ("loss", float),
    "lambda_off": ("loss", float),
    "sap_thresholds": ("metric", _floats),
    "junc_thresholds": ("metric", _floats),
    "eval_resolution": ("metric", _resolution),
    "heatmap_tolerance": ("metric", float),
    "heatmap_threshold_count": ("metric", int),
    "junction_k": (None, int),
    "junction_w": (None, _opt_float),
    "predictor": ("predictor", str),
    "sigma": ("predictor", float),
    "drop_rate": ("predictor", float),
    "predictor_seed": ("predictor", int),
    "maps_dir": ("predictor", str),
    "score_threshold": (None, float),
    "seed": (None, int),
    "scorer_hidden": (None, int),
    "scorer_epochs": (None, int),
    "train_scenes": (None, int),
    "synth_segments": (None, int),
    "synth_min_len": (None, float),
    "synth_min_separation": (None, float),
}
_NESTED_NAMES = {"predictor": "kind", "predictor_seed": "seed"}


def read_config_file(path) -> dict[str, str]:
    kv = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


@dataclass
class PredictedMaps:
    afm: AttractionFieldMap
    residual: ResidualMap
    junctions: JunctionMaps
    features: FeatureMap

    @property
    def spec(self) -> GridSpec:
        return self.afm.spec

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        # float32 rounds values within half an ulp of 1 up to 1.0; keep foreground in [0, 1)
        afm = self.afm.channels.astype(np.float32)
        fg = afm[0] >= 0
        afm[:, fg] = np.minimum(afm[:, fg], _BELOW_ONE_F32)
        container.write_grid(d / "afm.bin", afm, self.spec)
        container.write_grid(d / "residual.bin", self.residual.values, self.spec)
        container.write_grid(d / "junctions.bin", self.junctions.stack(), self.spec)
        container.write_grid(d / "features.bin", self.features.channels, self.spec)

    @classmethod
    def load(cls, directory, expected: GridSpec | None = None) -> "PredictedMaps":
        d = Path(directory)
        afm, spec = container.read_grid(d / "afm.bin")
        if spec is None or (expected is not None and spec != expected):
            raise ValueError(f"{d}: map spec {spec} does not match {expected}")
        res_path = d / "residual.bin"
        if res_path.exists():
            res, rspec = container.read_grid(res_path)
            if rspec != spec:
                raise ValueError(f"{res_path}: spec mismatch")
        else:
            res = np.zeros(spec.shape)
        jm, jspec = container.read_grid(d / "junctions.bin")
        if jspec != spec:
            raise ValueError(f"{d / 'junctions.bin'}: spec mismatch")
        afm_map = AttractionFieldMap(spec, afm)
        junctions = JunctionMaps.from_stack(spec, jm)
        feat_path = d / "features.bin"
        if feat_path.exists():
            feats, fspec = container.read_grid(feat_path)
            if fspec != spec:
                raise ValueError(f"{feat_path}: spec mismatch")
            features = FeatureMap(spec, feats)
        else:
            features = oracle_features(afm_map, junctions)
        return cls(afm_map, ResidualMap(spec, res), junctions, features)


def _truncated_noise(rng, sigma, shape):
    return truncnorm.rvs(-2.0, 2.0, scale=sigma, size=shape, random_state=rng)


def predict(wf: Wireframe, pred: Predictor, spec: GridSpec, cfg: PipelineConfig | None = None,
            scene_index: int = 0) -> PredictedMaps:
    """Maps a learned model would output for ``wf``.

    ``noisy`` perturbs every normalized channel with Gaussian noise truncated
    at two sigma, clamps to the channel range, and drops foreground pixels
    with probability ``drop_rate``; the residual map is then the true
    distance residual.
    """
    cfg = cfg or PipelineConfig()
    if pred.kind == "file":
        if pred.maps_dir is None:
            raise ValueError("file predictor needs maps_dir")
        return PredictedMaps.load(pred.maps_dir, expected=spec)
    gt_afm = encode(wf, spec, cfg.codec)
    gt_j = encode_junctions(wf, spec)
    if pred.kind == "oracle" or (pred.sigma == 0 and pred.drop_rate == 0):
        return PredictedMaps(gt_afm, ResidualMap.zeros(spec), gt_j, oracle_features(gt_afm, gt_j))

    rng = np.random.default_rng([pred.seed, scene_index])
    ch = gt_afm.channels.copy()
    fg = gt_afm.foreground
    if pred.drop_rate > 0:
        drop = fg & (rng.random(spec.shape) < pred.drop_rate)
        ch[:, drop] = np.array([-1.0, 0, 0, 0])[:, None]
        fg = fg & ~drop
    mask, offset = gt_j.mask.copy(), gt_j.offset.copy()
    if pred.sigma > 0:
        n_fg = int(fg.sum())
        ch[:, fg] = np.clip(ch[:, fg] + _truncated_noise(rng, pred.sigma, (4, n_fg)), 0.0, _BELOW_ONE)
        mask = np.clip(mask + _truncated_noise(rng, pred.sigma, mask.shape), 0.0, 1.0)
        offset = np.clip(offset + _truncated_noise(rng, pred.sigma, offset.shape), -0.5, _BELOW_HALF)
    afm = AttractionFieldMap(spec, ch)
    junctions = JunctionMaps(spec, mask, offset)
    return PredictedMaps(afm, residual_gt(gt_afm, afm), junctions, oracle_features(afm, junctions))


@dataclass
class ParseStats:
    junction_proposals: int
    line_proposals: int
    verification_proposals: int
    gt_lines: int | None = None

    def as_dict(self) -> dict:
        return {
            "junction_proposals": self.junction_proposals,
            "line_proposals": self.line_proposals,
            "verification_proposals": self.verification_proposals,
            "gt_lines": self.gt_lines,
        }


def propose(maps: PredictedMaps, cfg: PipelineConfig) -> tuple[ProposalSet, ProposalSet, int]:
    """Stages one and two: decoded line proposals, matched proposals and the junction count."""
    spec = maps.spec
    lines = decode(maps.afm, maps.residual, cfg.codec)
    jpos, jscore = proposals_to_arrays(decode_junctions(maps.junctions, cfg.junction_k, cfg.junction_w))
    lines.junctions, lines.junction_scores = jpos, jscore
    refined = match(lines, cfg.matching, spec.downsample)
    return lines, refined, len(jpos)


def parse(scene: Wireframe | PredictedMaps, cfg: PipelineConfig, scorer, scene_index: int = 0
          ) -> tuple[ScoredWireframe, ParseStats]:
    """Run proposal initialization, refinement and verification on one scene."""
    if isinstance(scene, Wireframe):
        spec = cfg.spec_for(scene)
        maps = predict(scene, cfg.predictor, spec, cfg, scene_index)
        n_gt = len(scene.segments)
    else:
        maps, spec, n_gt = scene, scene.spec, None
    lines, refined, n_junc = propose(maps, cfg)
    if len(refined):
        feats = loi_pool_batch(refined.segments, maps.features, cfg.verify)
        scores = np.clip(np.asarray(scorer.score(feats), float), 0.0, 1.0)
    else:
        scores = np.zeros(0)
    keep = scores >= cfg.score_threshold
    pairs = refined.pairs[keep] if refined.pairs is not None else np.zeros((0, 2), int)
    used = np.unique(pairs)
    remap = np.full(len(refined.junctions), -1)
    remap[used] = np.arange(len(used))
    out = ScoredWireframe(
        spec.image_w,
        spec.image_h,
        refined.junctions[used],
        remap[pairs],
        scores[keep],
        np.clip(refined.junction_scores[used], 0.0, 1.0),
    )
    stats = ParseStats(n_junc, len(lines), len(refined), n_gt)
    return out, stats


def training_samples(scenes: list[Wireframe], cfg: PipelineConfig, seed: int = 0,
                     predictor: Predictor | None = None, negatives: Wireframe | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """LOI features and labels drawn per scene by the augmenting sampler."""
    predictor = predictor or Predictor("oracle")
    xs, ys = [], []
    for i, wf in enumerate(scenes):
        spec = cfg.spec_for(wf)
        maps = predict(wf, predictor, spec, cfg, i)
        _, refined, _ = propose(maps, cfg)
        labeled = assign_labels(refined.segments, wf, spec, cfg.verify)
        pos, neg = augment_samples(labeled, wf, spec, cfg.verify, negatives, seed=[seed, i])
        for group, label in ((pos, 1.0), (neg, 0.0)):
            if group:
                segs = np.array([p.segment for p in group])
                xs.append(loi_pool_batch(segs, maps.features, cfg.verify))
                ys.append(np.full(len(group), label))
    if not xs:
        raise ValueError("no training samples")
    return np.concatenate(xs), np.concatenate(ys)


def heldout_samples(scenes: list[Wireframe], cfg: PipelineConfig, predictor: Predictor | None = None):
    """Every matched proposal, GT segment and junction-pair negative, without resampling."""
    predictor = predictor or Predictor("oracle")
    xs, ys = [], []
    for i, wf in enumerate(scenes):
        spec = cfg.spec_for(wf)
        maps = predict(wf, predictor, spec, cfg, i)
        _, refined, _ = propose(maps, cfg)
        labeled = assign_labels(refined.segments, wf, spec, cfg.verify)
        segs = [p.segment for p in labeled] + list(wf.lines / spec.downsample)
        labels = [p.label for p in labeled] + [True] * len(wf.segments)
        neg = junction_pair_negatives(wf, spec, cfg.verify.eta)
        segs += list(neg)
        labels += [False] * len(neg)
        if segs:
            xs.append(loi_pool_batch(np.array(segs), maps.features, cfg.verify))
            ys.append(np.array(labels, float))
    return np.concatenate(xs), np.concatenate(ys)


def synth_dataset(cfg: PipelineConfig, n: int, seed: int) -> list[Wireframe]:
    return [
        synth_scene(seed * 100_003 + i, cfg.grid, cfg.synth_segments, cfg.synth_min_len, cfg.synth_min_separation)
        for i in range(n)
    ]


def train_scorer(cfg: PipelineConfig, scenes: list[Wireframe] | None = None, seed: int | None = None,
                 negatives: Wireframe | None = None) -> MLPScorer:
    """Reference scorer on oracle features; synthesizes ``train_scenes`` scenes when none are given."""
    seed = cfg.seed if seed is None else seed
    if scenes is None:
        # offset keeps training scenes disjoint from evaluation scenes drawn with the same seed
        scenes = synth_dataset(cfg, cfg.train_scenes, seed + 7919)
    x, y = training_samples(scenes, cfg, seed, negatives=negatives)
    return train_reference_scorer(x, y, seed=seed, epochs=cfg.scorer_epochs, hidden=cfg.scorer_hidden)


def _parse_file(args):
    index, path, cfg, scorer = args
    try:
        wf = load_wireframe(path)
    except (OSError, SceneError) as exc:
        return index, path, None, None, None, str(exc)
    if cfg.predictor.kind == "file":
        base = Path(cfg.predictor.maps_dir or ".")
        cfg = replace(cfg, predictor=replace(cfg.predictor, maps_dir=str(base / Path(path).stem)))
    try:
        pred, stats = parse(wf, cfg, scorer, index)
    except (OSError, ValueError) as exc:
        return index, path, wf, None, None, str(exc)
    return index, path, wf, pred, stats, None


@dataclass
class EvalRun:
    report: EvalReport
    failures: list[tuple[str, str]]
    stats: dict[str, ParseStats]


def run_eval(dataset_dir, cfg: PipelineConfig, out_dir=None, scorer=None, jobs: int = 1,
             figures: bool = True) -> EvalRun:
    """Parse every ``*.json`` annotation in ``dataset_dir`` and evaluate against it.

    Writes per-scene predictions, PR-curve CSVs, ``report.json``, ``run.log``
    and (optionally) PR-curve figures into ``out_dir``.
    """
    paths = sorted(Path(dataset_dir).glob("*.json"))
    if scorer is None:
        scorer = train_scorer(cfg)
    tasks = [(i, p, cfg, scorer) for i, p in enumerate(paths)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_parse_file, tasks))
    else:
        results = [_parse_file(t) for t in tasks]

    preds, gts, failures, stats = [], [], [], {}
    log_lines = ["scene junction_proposals line_proposals verification_proposals gt_lines"]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "predictions").mkdir(parents=True, exist_ok=True)
    for index, path, wf, pred, st, err in results:
        name = Path(path).stem
        if err is not None:
            failures.append((name, err))
            log.warning("skipping %s: %s", name, err)
            log_lines.append(f"{name} ERROR {err}")
            continue
        preds.append(pred)
        gts.append(wf)
        stats[name] = st
        line = f"{name} {st.junction_proposals} {st.line_proposals} {st.verification_proposals} {st.gt_lines}"
        log.info("proposals %s", line)
        log_lines.append(line)
        if out is not None:
            save_wireframe(pred, out / "predictions" / f"{name}.json")

    report = metrics.evaluate(preds, gts, cfg.metric)
    if stats:
        mean = {k: float(np.mean([getattr(s, k) for s in stats.values()]))
                for k in ("junction_proposals", "line_proposals", "verification_proposals", "gt_lines")}
    else:
        mean = {}
    report.extra = {
        "scenes": len(preds),
        "failures": [f"{n}: {e}" for n, e in failures],
        "mean_proposal_counts": mean,
    }
    log_lines.append("mean " + " ".join(f"{k}={v!r}" for k, v in mean.items()))
    if out is not None:
        (out / "report.json").write_text(report.to_text())
        (out / "run.log").write_text("\n".join(log_lines) + "\n")
        for key, curve in report.pr_curves.items():
            metrics.write_pr_curve(curve, out / f"pr_{key}.csv")
        if figures:
            from .plotting import plot_pr_curves

            plot_pr_curves(report, out / "pr_curves.png")
    return EvalRun(report, failures, stats)


def config_help() -> str:
    rows = []
    defaults = PipelineConfig()
    for key in CONFIG_KEYS:
        section, _ = CONFIG_KEYS[key]
        name = _NESTED_NAMES.get(key, key)
        value = getattr(getattr(defaults, section), name) if section else getattr(defaults, name)
        rows.append(f"  {key} = {value}")
    return "\n".join(rows)


__all__ = [
    "PipelineConfig", "Predictor", "PredictedMaps", "ParseStats", "EvalRun", "predict", "parse",
    "propose", "train_scorer", "training_samples", "heldout_samples", "run_eval", "synth_dataset",
    "read_config_file", "config_help",
]
