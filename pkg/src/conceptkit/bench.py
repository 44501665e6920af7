"""Benchmark runs over synthetic articulated objects.

A trial runs the full pipeline once per oracle level. Level ``k`` replaces
the outputs of stage ``k`` and every stage before it with ground truth, so
the levels form the cumulative column of an error breakdown. A failed trial
at level ``k`` is charged to the first later stage whose replacement makes
it succeed, or to the rollout when even full ground truth fails.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .assembly import template_scale
from .concepts import builtin_registry, concepts_in_group
from .expr import DomainError
from .geometry import PointCloud, sample_surface
from .grounding import FitConfig, FitDiverged, Grounding, ground
from .manipulation import (GripperSpec, GraspError, force_direction, instantiate_grasp,
                           load_score_config, sample_candidates, score_grasp, estimate_normals)
from .pointio import write_ply
from .reasoner import (ReasonerConfig, ReasonerError, ReasonerQuery, ask, make_backend,
                       load_config as load_reasoner_config)
from .sim import (ARCHETYPES, InvalidGrasp, RolloutConfig, joint_state_init, render_view,
                  run_with_budget, synth_object)
from .sim.objects import UnknownArchetype

STAGES = ("none", "segmentation", "concept", "grounding", "grasp", "force")
STAGE_ALIASES = {"all": "force", "pose": "grounding", "params": "grounding"}
FAILURE_STAGES = ("segmentation-oracle", "concept-select", "grounding", "grasp", "force", "rollout")
MODES = ("sampled", "estimated")
_CHARGE = dict(zip(STAGES[1:], FAILURE_STAGES[:-1]))


class ConfigError(ValueError):
    pass


def canonical_stage(name: str) -> str:
    s = STAGE_ALIASES.get(name, name)
    if s not in STAGES:
        raise ConfigError(f"unknown oracle stage {name!r}; choose from {', '.join(STAGES + ('all',))}")
    return s


@dataclass(frozen=True)
class BenchmarkConfig:
    trials: Mapping[str, int] = field(default_factory=lambda: {a: 20 for a in ARCHETYPES})
    seed: int = 0
    azimuth_range: tuple = (-80.0, 80.0)
    elevation_range: tuple = (30.0, 60.0)
    n_points: int = 16384
    min_part_points: int = 30
    backend: str = "mock"
    reasoner_config: Optional[str] = None
    modes: tuple = ("estimated",)
    oracle_stages: tuple = ("none",)
    candidates: int = 32
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "trials", {str(k): int(v) for k, v in dict(self.trials).items()})
        object.__setattr__(self, "azimuth_range", tuple(float(v) for v in self.azimuth_range))
        object.__setattr__(self, "elevation_range", tuple(float(v) for v in self.elevation_range))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "oracle_stages", tuple(canonical_stage(s) for s in self.oracle_stages))
        if not self.trials:
            raise ConfigError("no archetypes configured")
        for a, n in self.trials.items():
            if a not in ARCHETYPES:
                raise ConfigError(f"unknown archetype {a!r}")
            if n < 1:
                raise ConfigError(f"{a}: trials must be >= 1")
        lo, hi = self.elevation_range
        if not 30.0 <= lo <= hi <= 60.0:
            raise ConfigError("elevation range must lie within [30, 60] degrees")
        lo, hi = self.azimuth_range
        if not (lo <= hi and hi - lo <= 360.0):
            raise ConfigError("azimuth range must satisfy lo <= hi and span at most 360 degrees")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown sampler mode {m!r}")
        if not self.modes or not self.oracle_stages:
            raise ConfigError("need at least one mode and one oracle stage")
        if self.backend not in ("mock", "live"):
            raise ConfigError("backend must be 'mock' or 'live'")
        if self.n_points < 1 or self.min_part_points < 1 or self.candidates < 1:
            raise ConfigError("point and candidate counts must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["trials"] = dict(sorted(self.trials.items()))
        for k in ("azimuth_range", "elevation_range", "modes", "oracle_stages"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "BenchmarkConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**dict(d))


def load_config(path) -> BenchmarkConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        return BenchmarkConfig.from_json(json.loads(text))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# seeds

def trial_seeds(master: int, archetype: str, index: int) -> dict:
    """Per-trial seeds from a splittable counter; independent of run order."""
    key = (sorted(ARCHETYPES).index(archetype), int(index))
    s = np.random.SeedSequence(int(master), spawn_key=key).generate_state(6)
    names = ("object", "state", "view", "camera", "fit", "grasp")
    return {n: int(v) for n, v in zip(names, s)}


def camera_angles(seeds: dict, cfg: BenchmarkConfig) -> tuple[float, float]:
    rng = np.random.default_rng(seeds["camera"])
    az = float(rng.uniform(*cfg.azimuth_range)) % 360.0
    el = float(rng.uniform(*cfg.elevation_range))
    return az, el


def make_scene(archetype: str, index: int, cfg: BenchmarkConfig):
    s = trial_seeds(cfg.seed, archetype, index)
    obj = joint_state_init(synth_object(archetype, seed=s["object"]), s["state"])
    az, el = camera_angles(s, cfg)
    view, labels = render_view(obj, az, el, cfg.n_points, seed=s["view"], return_labels=True)
    return s, obj, (az, el), view, labels


# ---------------------------------------------------------------------------
# one trial

class _Trial:
    def __init__(self, archetype, index, cfg, registry, backend, rollout_cfg, gripper, score_cfg):
        self.cfg = cfg
        self.reg = registry
        self.backend = backend
        self.rcfg = rollout_cfg
        self.gripper = gripper
        self.score_cfg = score_cfg
        self.seeds, self.obj, self.camera, self.view, labels = make_scene(archetype, index, cfg)
        o = self.obj.oracle
        self.task = o["task"]
        self.joint = o["target_joint"]
        idx = np.flatnonzero(labels == o["target_part"])
        self.n_crop = len(idx)
        self.crop = self.view.subset(idx) if len(idx) else None
        self.gt_concept = o["concept_id"]
        self.gt_grounding = Grounding(o["concept_id"], dict(o["params"]), self.obj.oracle_pose(), 0.0)
        self._groundings = {}
        self._proposals = {}
        self._choice = {}

    # stage outputs -------------------------------------------------------
    def part_cloud(self, oracle: bool):
        if self.n_crop >= self.cfg.min_part_points:
            return "view", self.crop
        if not oracle:
            return None, None
        geom = self.obj.part_geometry(self.obj.oracle["target_part"])
        return "full", PointCloud(sample_surface(geom, 1024, self.seeds["view"]).points)

    def choose(self, kind, options):
        key = (kind, tuple(options))
        if key not in self._choice:
            try:
                a = ask(self.backend, ReasonerQuery(kind, self.task, tuple(options)))
                self._choice[key] = a.chosen
            except ReasonerError:
                self._choice[key] = None
        return self._choice[key]

    def concept(self, oracle: bool):
        if oracle:
            return self.gt_concept
        groups = sorted(self.reg.groups)
        group = self.choose("PartIdentify", [(g, g) for g in groups])
        if group not in self.reg.groups:
            return None
        return self.choose("ConceptSelect", concepts_in_group(self.reg, group))

    def grounding(self, cloud_key, cloud, cid):
        key = (cloud_key, cid)
        if key not in self._groundings:
            try:
                self._groundings[key] = ground(self.reg[cid], cloud, FitConfig(seed=self.seeds["fit"]))
            except FitDiverged:
                self._groundings[key] = None
        return self._groundings[key]

    def local_scene(self, g: Grounding) -> PointCloud:
        radius = template_scale(self.reg[g.concept_id], g.params) + 0.15
        d = np.linalg.norm(self.view.points - g.pose.t, axis=1)
        pts = self.view.points[d < radius]
        if len(pts) < 3:
            pts = self.view.points
        return PointCloud(pts, estimate_normals(pts, int(self.score_cfg.get("normal_neighbors", 12))))

    def grasps(self, gkey, g: Grounding, family, mode):
        key = (gkey, family.name, mode)
        if key in self._proposals:
            return self._proposals[key]
        budget = self.rcfg.budget
        out = []
        if mode == "sampled":
            rng = np.random.default_rng(self.seeds["grasp"])
            for _ in range(budget):
                theta = {t.name: (t.default if t.fixed else float(rng.uniform(t.lo, t.hi)))
                         for t in family.theta}
                try:
                    out.append(instantiate_grasp(family, g, theta, self.gripper))
                except GraspError:
                    continue
        else:
            P = self.local_scene(g)
            scored = []
            thetas = sample_candidates(family, g, self.cfg.candidates, self.seeds["grasp"])
            for i, theta in enumerate(thetas):
                try:
                    grasp = instantiate_grasp(family, g, theta, self.gripper)
                except GraspError:
                    continue
                s = score_grasp(grasp, P, self.gripper, self.score_cfg)
                if s >= self.score_cfg["floor"]:
                    scored.append((-s, i, grasp))
            scored.sort(key=lambda x: (x[0], x[1]))
            out = [x[2] for x in scored[:budget]]
        self._proposals[key] = out
        return out

    # one oracle level ------------------------------------------------------
    def run(self, level: int, mode: str) -> dict:
        def fail(error):
            return {"success": False, "attempts": 0, "failure_reason": None, "error": error,
                    "displacement": 0.0}

        ckey, cloud = self.part_cloud(level >= 1)
        if cloud is None:
            return fail("empty-crop")
        cid = self.concept(level >= 2)
        if cid is None or cid not in self.reg:
            return fail("no-concept")
        concept = self.reg[cid]
        if level >= 3:
            g, gkey = self.gt_grounding, "oracle"
        else:
            g, gkey = self.grounding(ckey, cloud, cid), (ckey, cid)
            if g is None:
                return fail("fit-diverged")
        if level >= 4:
            o = self.obj.oracle
            fam = self.reg[o["concept_id"]].grasp_family(o["grasp_family"])
            grasps = [instantiate_grasp(fam, g, o["theta"], self.gripper)]
        else:
            fname = self.choose("GraspSelect", [(f.name, f.synopsis) for f in concept.grasp_families])
            if fname is None:
                return fail("no-grasp-family")
            grasps = self.grasps(gkey, g, concept.grasp_family(fname), mode)
            if not grasps:
                return fail("no-grasp")
        if level >= 5:
            rule = self.reg[self.gt_concept].force_rule(self.obj.oracle["force_rule"])
        else:
            rname = self.choose("ForceSelect", [(r.name, r.synopsis) for r in concept.force_rules])
            if rname is None:
                return fail("no-force-rule")
            rule = concept.force_rule(rname)
        proposals = []
        for grasp in grasps:
            try:
                proposals.append((grasp, force_direction(rule, g, grasp, self.reg[g.concept_id])))
            except (DomainError, ValueError):
                continue
        if not proposals:
            return fail("no-force")
        try:
            out = run_with_budget(proposals, self.obj, self.joint, self.rcfg, self.gripper)
        except InvalidGrasp:
            return fail("invalid-grasp")
        return {"success": bool(out.success), "attempts": out.attempts,
                "failure_reason": out.failure_reason, "error": None,
                "displacement": float(out.displacement)}


def run_trial(archetype: str, index: int, cfg: BenchmarkConfig, registry=None, backend=None,
              rollout_cfg: RolloutConfig = RolloutConfig(), gripper: GripperSpec = GripperSpec()) -> dict:
    """All oracle levels from the lowest requested one up, for every configured mode."""
    registry = registry or builtin_registry()
    backend = backend or _backend(cfg)
    t = _Trial(archetype, index, cfg, registry, backend, rollout_cfg, gripper, load_score_config())
    first = min(STAGES.index(s) for s in cfg.oracle_stages)
    levels = {}
    for mode in cfg.modes:
        res = {}
        for k in range(first, len(STAGES)):
            if k >= 4 and mode != cfg.modes[0]:
                # grasp and force come from ground truth; the sampler is unused
                res[STAGES[k]] = levels[cfg.modes[0]][STAGES[k]]
                continue
            res[STAGES[k]] = t.run(k, mode)
        for k in range(first, len(STAGES)):
            r = res[STAGES[k]]
            r["stage"] = None if r["success"] else _charge(res, k)
        levels[mode] = res
    return {"archetype": archetype, "index": int(index), "seeds": t.seeds,
            "camera": [float(v) for v in t.camera], "crop_points": int(t.n_crop),
            "initial_state": float(t.obj.joint(t.joint).state), "results": levels}


def _charge(res: dict, k: int) -> str:
    for j in range(k + 1, len(STAGES)):
        if res[STAGES[j]]["success"]:
            return _CHARGE[STAGES[j]]
    return "rollout"


def _backend(cfg: BenchmarkConfig):
    if cfg.backend == "mock":
        return make_backend(ReasonerConfig())
    if not cfg.reasoner_config:
        raise ConfigError("the live backend needs reasoner_config")
    return make_backend(load_reasoner_config(cfg.reasoner_config))


# ---------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class BenchmarkReport:
    config: dict
    seed: int
    results: dict

    def to_json(self) -> dict:
        return {"version": 1, "seed": self.seed, "config": self.config, "results": self.results}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def rate(self, mode: str, stage: str, archetype: str) -> float:
        return self.results[mode][canonical_stage(stage)]["archetypes"][archetype]["rate"]

    def table(self) -> str:
        archs = sorted(self.config["trials"])
        head = ["mode", "oracle"] + archs + ["per-trial", "per-arch"]
        rows = []
        for mode in sorted(self.results):
            for stage in STAGES:
                if stage not in self.results[mode]:
                    continue
                r = self.results[mode][stage]
                rows.append([mode, stage] + [f"{100 * r['archetypes'][a]['rate']:.1f}" for a in archs]
                            + [f"{100 * r['overall']['per_trial']:.1f}",
                               f"{100 * r['overall']['per_archetype']:.1f}"])
        fhead = ["mode", "oracle", "success"] + list(FAILURE_STAGES)
        frows = []
        for mode in sorted(self.results):
            for stage in STAGES:
                if stage not in self.results[mode]:
                    continue
                h = self.results[mode][stage]["histogram"]
                frows.append([mode, stage] + [str(h[k]) for k in ("success",) + FAILURE_STAGES])
        return (_aligned(head, rows) + "\n\nfailure stages (all archetypes)\n"
                + _aligned(fhead, frows) + "\n")


def _aligned(head, rows) -> str:
    w = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    line = lambda r: "  ".join(str(x).rjust(n) if i > 1 else str(x).ljust(n)
                               for i, (x, n) in enumerate(zip(r, w)))
    return "\n".join([line(head), "  ".join("-" * n for n in w)] + [line(r) for r in rows])


def summarize(trials: list, cfg: BenchmarkConfig) -> BenchmarkReport:
    results = {}
    for mode in cfg.modes:
        results[mode] = {}
        for stage in cfg.oracle_stages:
            per_arch = {}
            total = {"success": 0, **{f: 0 for f in FAILURE_STAGES}}
            for a in sorted(cfg.trials):
                rs = [t["results"][mode][stage] for t in trials if t["archetype"] == a]
                n = len(rs)
                s = sum(r["success"] for r in rs)
                hist = {"success": s, **{f: 0 for f in FAILURE_STAGES}}
                for r in rs:
                    if not r["success"]:
                        hist[r["stage"]] += 1
                for k in total:
                    total[k] += hist[k]
                p = s / n
                per_arch[a] = {"trials": n, "successes": s, "rate": p,
                               "stderr": math.sqrt(p * (1 - p) / n), "histogram": hist}
            n_all = sum(v["trials"] for v in per_arch.values())
            results[mode][stage] = {
                "archetypes": per_arch,
                "histogram": total,
                "overall": {"per_trial": total["success"] / n_all,
                            "per_archetype": math.fsum(v["rate"] for v in per_arch.values()) / len(per_arch)},
            }
    # where the report is written has no bearing on its contents
    conf = {k: v for k, v in cfg.to_json().items() if k != "output_dir"}
    return BenchmarkReport(conf, cfg.seed, results)


def run_benchmark(cfg: BenchmarkConfig, backend=None, progress=None) -> tuple[BenchmarkReport, list]:
    registry = builtin_registry()
    backend = backend or _backend(cfg)
    trials = []
    for a in sorted(cfg.trials):
        for i in range(cfg.trials[a]):
            trials.append(run_trial(a, i, cfg, registry, backend))
            if progress:
                progress(a, i)
    report = summarize(trials, cfg)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.dumps(), encoding="utf-8")
        (out / "report.txt").write_text(report.table(), encoding="utf-8")
        with open(out / "trials.jsonl", "w", encoding="utf-8") as fh:
            for t in trials:
                fh.write(json.dumps(t, sort_keys=True) + "\n")
    return report, trials


# ---------------------------------------------------------------------------
# datasets

def synth_dataset(archetype: str, n: int, seed: int, outdir, cfg: Optional[BenchmarkConfig] = None) -> dict:
    """``n`` objects with rendered views and a manifest of the seeds behind each."""
    if archetype not in ARCHETYPES:
        raise UnknownArchetype(f"unknown archetype {archetype!r}; known: {', '.join(ARCHETYPES)}")
    cfg = cfg or BenchmarkConfig(trials={archetype: max(int(n), 1)}, seed=seed)
    cfg = BenchmarkConfig(**{**asdict(cfg), "trials": {archetype: max(int(n), 1)}, "seed": int(seed)})
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for i in range(int(n)):
        seeds, obj, (az, el), view, labels = make_scene(archetype, i, cfg)
        stem = f"{archetype}_{i:04d}"
        (out / f"{stem}.json").write_text(obj.dumps() + "\n", encoding="utf-8")
        write_ply(out / f"{stem}.ply", view)
        (out / f"{stem}.labels.json").write_text(json.dumps(labels.tolist()) + "\n", encoding="utf-8")
        items.append({"index": i, "object": f"{stem}.json", "view": f"{stem}.ply",
                      "labels": f"{stem}.labels.json", "seeds": seeds,
                      "azimuth": az, "elevation": el})
    manifest = {"version": 1, "archetype": archetype, "n": int(n), "seed": int(seed),
                "n_points": cfg.n_points, "items": items}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest
