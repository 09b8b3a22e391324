"""End-to-end experiment: data → pretrain → triggers → embed → attack → restore/blend → landscape → verify.

Every artifact of one run lands in its own directory::

    <out_dir>/<run_id>/
        config.ini  splits.json  metrics.csv  summary.json  manifest.json
        checkpoints/<name>.wmlb (+ .json sidecar)
        checkpoints/trajectory/<name>/epoch-NNN.wmlb
        triggers/trigger_set.wmlb
        verify/<name>.json
        landscape/grid.csv  landscape/trajectory.csv  landscape/landscape.json
        plots/*.svg

Single CLI stages build on the same :class:`Experiment`; with ``reuse=True`` models
already checkpointed in the run directory are loaded instead of retrained.
"""

from __future__ import annotations

import hashlib
import logging
import shutil
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .attacks import extract, finetune
from .data import LabeledDataset, SplitBundle, SynthSpec, load_idx, make_splits, synth_generate
from .embedding import embed, pretrain_clean
from .errors import PipelineStageError, RejectedInputError
from .landscape import (
    LandscapeGrid,
    Trajectory2D,
    filter_normalize,
    loss_grid,
    pca_directions,
    project_trajectory,
    random_direction,
)
from .models.config import ExperimentConfig, render_config
from .models.results import (
    AttackSummary,
    BlendSummary,
    ControlSummary,
    ExtractSummary,
    LandscapeSummary,
    RunSummary,
    VerifyResult,
)
from .models.trace import Phase, RunTrace, append_metrics_csv
from .nn import Model, ModelSpec, load_checkpoint, save_checkpoint
from .plots import render_plots
from .protocols import LrTier, attack_lr_for, blended_finetune, restore, restore_lr_for, verify_ownership
from .triggers import TriggerSet, load_trigger_set, make_trigger_set, save_trigger_set
from .utils import derive_seed, log_json_payload, save_json_payload

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
CHECKPOINT_SUFFIX = ".wmlb"


def chain_of(name: str) -> str:
    """Curve group of a model name: an attack and the retrain that follows it share one chain.

    Example:
        >>> chain_of("retrain-small"), chain_of("control-finetune-big"), chain_of("extract-retrain")
        ('attack-small', 'control-big', 'extract')
    """
    if name.startswith("control-"):
        return "control-" + name.rsplit("-", 1)[-1]
    for prefix in ("finetune-", "retrain-"):
        if name.startswith(prefix):
            return "attack-" + name.removeprefix(prefix)
    if name.startswith("extract"):
        return "extract"
    return name


def load_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset | None, LabeledDataset]:
    """Return ``(pool, test or None, out-of-distribution source)`` for a config."""
    d = config.data
    seed = config.experiment.seed
    if d.source == "idx":
        pool = load_idx(d.train_images, d.train_labels, num_classes=d.num_classes, name="train")  # type: ignore[arg-type]
        test = None
        if d.test_images and d.test_labels:
            test = load_idx(d.test_images, d.test_labels, num_classes=d.num_classes, name="test")
    else:
        pool = synth_generate(SynthSpec(num_classes=d.num_classes, per_class=d.per_class, image_size=d.image_size), derive_seed(seed, "data"))
        test = None
    if d.ood_images and d.ood_labels:
        ood = load_idx(d.ood_images, d.ood_labels, name="ood")
    else:
        size = pool.input_shape[0]
        ood = synth_generate(
            SynthSpec(num_classes=d.num_classes, per_class=d.ood_per_class, family="ood", image_size=max(size, 12)),
            derive_seed(seed, "ood"),
        )
    return pool, test, ood


@dataclass(slots=True)
class LandscapeOutcome:
    """Grid, optional trajectory and the summary written to ``landscape.json``."""

    grid: LandscapeGrid
    trajectory: Trajectory2D | None
    summary: LandscapeSummary


class Experiment:
    """One run of the lab, stage by stage.

    Stage methods are memoized: asking for the restored model of a tier trains the
    attack first if needed. Every training phase that actually runs appends its rows to
    ``metrics.csv`` and is kept in :attr:`traces`.
    """

    def __init__(self, config: ExperimentConfig, *, reuse: bool = False) -> None:
        """Bind the experiment to its run directory.

        Args:
            config: Validated experiment configuration.
            reuse: Load checkpoints already present in the run directory instead of retraining.
        """
        self.config = config
        self.reuse = reuse
        self.run_dir = config.run_dir
        self.traces: dict[str, RunTrace] = {}
        self.verifies: dict[str, VerifyResult] = {}
        self._models: dict[str, Model] = {}
        self._splits: SplitBundle | None = None
        self._ood: LabeledDataset | None = None
        self._triggers: TriggerSet | None = None
        self._trajectories: dict[str, tuple[list[NDArray[np.float64]], list[int]]] = {}

    # ---------- paths ----------
    @property
    def metrics_path(self) -> Path:
        """Per-run metrics CSV."""
        return self.run_dir / "metrics.csv"

    def checkpoint_path(self, name: str) -> Path:
        """Checkpoint file of model ``name``."""
        return self.run_dir / "checkpoints" / f"{name}{CHECKPOINT_SUFFIX}"

    def trajectory_dir(self, name: str) -> Path:
        """Directory of per-epoch snapshots of phase ``name``."""
        return self.run_dir / "checkpoints" / "trajectory" / name

    @property
    def trigger_path(self) -> Path:
        """Persisted trigger set."""
        return self.run_dir / "triggers" / f"trigger_set{CHECKPOINT_SUFFIX}"

    def _row_id(self, name: str) -> str:
        return f"{self.config.run_id}/{chain_of(name)}"

    @property
    def _workers(self) -> int:
        return self.config.experiment.workers

    @property
    def _wall(self) -> bool:
        return self.config.experiment.record_wall_time

    # ---------- bookkeeping ----------
    def reset(self) -> None:
        """Remove artifacts a fresh run rewrites by appending (metrics, trajectory snapshots)."""
        self.metrics_path.unlink(missing_ok=True)
        shutil.rmtree(self.run_dir / "checkpoints" / "trajectory", ignore_errors=True)

    def _landscape_phases(self) -> tuple[str, str] | None:
        ls = self.config.landscape
        if not ls.enabled:
            return None
        if ls.scenario == "extract":
            return "extract", "extract-retrain"
        return f"finetune-{ls.tier}", f"retrain-{ls.tier}"

    def _keeps_snapshots(self, name: str) -> bool:
        phases = self._landscape_phases()
        return phases is not None and name in phases

    def _record(self, name: str, trace: RunTrace) -> None:
        self.traces[name] = trace
        append_metrics_csv(self.metrics_path, trace.rows)
        if trace.snapshots:
            epochs = [row.epoch for row in trace.rows]
            self._trajectories[name] = (list(trace.snapshots), epochs)
            if self.config.landscape.save_trajectory:
                self._save_trajectory(name, trace, epochs)

    def _save_trajectory(self, name: str, trace: RunTrace, epochs: list[int]) -> None:
        spec = self._models[name].spec
        folder = self.trajectory_dir(name)
        shutil.rmtree(folder, ignore_errors=True)
        for epoch, vector in zip(epochs, trace.snapshots, strict=True):
            path = save_checkpoint(Model.unflatten(spec, vector), folder / f"epoch-{epoch:03d}{CHECKPOINT_SUFFIX}", {"phase": str(trace.phase), "epoch": epoch})
            trace.checkpoints.append(str(path.relative_to(self.run_dir)))

    def _model(self, name: str, build: Callable[[], tuple[Model, RunTrace]], metadata: dict[str, object] | None = None) -> Model:
        if name in self._models:
            return self._models[name]
        path = self.checkpoint_path(name)
        missing_trajectory = self._keeps_snapshots(name) and not self.trajectory_dir(name).exists()
        if self.reuse and path.exists() and not missing_trajectory:
            log.info("reusing checkpoint %s", path)
            self._models[name] = load_checkpoint(path)
            return self._models[name]
        model, trace = build()
        self._models[name] = model
        self._record(name, trace)
        save_checkpoint(model, path, {"run_id": self.config.run_id, "name": name, **(metadata or {})})
        return model

    # ---------- stages ----------
    def splits(self) -> SplitBundle:
        """Stage ``data``: load the pool and cut the four splits."""
        if self._splits is None:
            pool, test, ood = load_datasets(self.config)
            d = self.config.data
            self._splits = make_splits(
                pool,
                derive_seed(self.config.experiment.seed, "splits"),
                test_size=d.test_size,
                test=test,
                trigger_size=d.trigger_size,
                pretrain_ratio=d.pretrain_ratio,
            )
            self._ood = ood
            save_json_payload({"split_seed": self._splits.split_seed, "sizes": self._splits.sizes(), "source": pool.provenance}, self.run_dir / "splits.json")
            log.info("data: %s", self._splits.sizes())
        return self._splits

    @property
    def ood(self) -> LabeledDataset:
        """Out-of-distribution source for unrelated triggers."""
        self.splits()
        assert self._ood is not None
        return self._ood

    def spec(self) -> ModelSpec:
        """Victim architecture for the loaded data."""
        s = self.splits()
        return self.config.model.spec(s.pretrain.input_shape, s.pretrain.num_classes)

    def clean_model(self) -> Model | None:
        """Stage ``pretrain``: never-watermarked model, or ``None`` when disabled."""
        if not self.config.pretrain.enabled:
            return None
        s = self.splits()
        return self._model(
            "clean",
            lambda: pretrain_clean(
                self.spec(),
                s.pretrain,
                self.config.pretrain_config(),
                test_set=s.test,
                run_id=self._row_id("clean"),
                workers=self._workers,
                record_wall_time=self._wall,
            ),
        )

    def trigger_set(self) -> TriggerSet:
        """Stage ``triggers``: generate (FGSM needs the clean model) and persist the trigger set."""
        if self._triggers is not None:
            return self._triggers
        if self.reuse and self.trigger_path.exists():
            self._triggers = load_trigger_set(self.trigger_path)
            return self._triggers
        s = self.splits()
        t = self.config.triggers
        trigger = t.trigger()
        base = self.ood if trigger.kind == "unrelated" else s.trigger_base
        self._triggers = make_trigger_set(
            trigger,
            t.scheme(),
            base,
            num_classes=s.pretrain.num_classes,
            seed=self.config.experiment.seed,
            clean_model=self.clean_model() if trigger.kind == "fgsm" else None,
            count=self.config.data.trigger_size,
            input_shape=s.pretrain.input_shape,
        )
        save_trigger_set(self._triggers, self.trigger_path)
        return self._triggers

    def embedded(self) -> Model:
        """Stage ``embed``: the watermarked victim."""
        s = self.splits()
        e = self.config.embed
        ts = self.trigger_set()

        def build() -> tuple[Model, RunTrace]:
            init = self.clean_model() if e.init == "pretrained" else self.spec()
            assert init is not None
            return embed(
                init,
                s.pretrain,
                ts,
                e.embed_strategy(),
                self.config.embed_config(),
                test_set=s.test,
                run_id=self._row_id("embedded"),
                workers=self._workers,
                record_wall_time=self._wall,
            )

        return self._model("embedded", build, {"strategy": e.strategy, "trigger": ts.description})

    def attacked(self, tier: LrTier | str, *, control: bool = False) -> Model:
        """Stage ``attack``: fine-tune the victim (or, for the control, the clean model) at ``tier``."""
        tier = LrTier(tier)
        name = f"{'control-' if control else ''}finetune-{tier}"
        s = self.splits()
        ts = self.trigger_set()

        def build() -> tuple[Model, RunTrace]:
            start = self.clean_model() if control else self.embedded()
            if start is None:
                raise RejectedInputError("the control run needs the clean pretrain stage")
            return finetune(
                start,
                s.finetune,
                self.config.finetune_attack(tier),
                test_set=s.test,
                trigger_set=ts,
                run_id=self._row_id(name),
                keep_snapshots=self._keeps_snapshots(name),
                workers=self._workers,
                record_wall_time=self._wall,
            )

        return self._model(name, build, {"tier": str(tier), "lr": attack_lr_for(tier)})

    def restored(self, tier: LrTier | str, *, control: bool = False) -> Model:
        """Stage ``restore``: clean retraining after the ``tier`` attack."""
        tier = LrTier(tier)
        name = f"{'control-' if control else ''}retrain-{tier}"
        s = self.splits()
        ts = self.trigger_set()

        def build() -> tuple[Model, RunTrace]:
            return restore(
                self.attacked(tier, control=control),
                s.pretrain,
                self.config.restore_config(tier),
                ts,
                test_set=s.test,
                run_id=self._row_id(name),
                keep_snapshots=self._keeps_snapshots(name),
                workers=self._workers,
                record_wall_time=self._wall,
            )

        return self._model(name, build, {"tier": str(tier), "lr": restore_lr_for(tier)})

    def control_tier(self) -> LrTier:
        """Tier of the never-watermarked control: the first configured attack tier."""
        return self.config.attack.tiers[0]

    def blended(self) -> tuple[Model, Model]:
        """Stage ``blend``: blended fine-tune plus the plain fine-tune at the same lr."""
        s = self.splits()
        ts = self.trigger_set()
        blend = self._model(
            "blend",
            lambda: blended_finetune(
                self.embedded(),
                s.pretrain,
                s.finetune,
                self.config.blend_config(),
                test_set=s.test,
                trigger_set=ts,
                run_id=self._row_id("blend"),
                workers=self._workers,
                record_wall_time=self._wall,
            ),
        )
        plain = self._model(
            "blend-plain",
            lambda: finetune(
                self.embedded(),
                s.finetune,
                self.config.blend_plain_attack(),
                test_set=s.test,
                trigger_set=ts,
                run_id=self._row_id("blend-plain"),
                workers=self._workers,
                record_wall_time=self._wall,
            ),
        )
        return blend, plain

    def extracted(self) -> Model:
        """Stage ``extract``: surrogate trained on the victim's hard labels for the pretrain inputs."""
        s = self.splits()
        ts = self.trigger_set()
        surrogate = self.config.surrogate_spec(s.pretrain.input_shape, s.pretrain.num_classes)
        return self._model(
            "extract",
            lambda: extract(
                self.embedded(),
                surrogate,
                s.pretrain,
                self.config.extract_attack(surrogate),
                test_set=s.test,
                trigger_set=ts,
                run_id=self._row_id("extract"),
                keep_snapshots=self._keeps_snapshots("extract"),
                workers=self._workers,
                record_wall_time=self._wall,
            ),
        )

    def extract_restored(self) -> Model:
        """Clean retraining of the surrogate on ground-truth labels."""
        s = self.splits()
        tier = self.config.extract.retrain_tier
        return self._model(
            "extract-retrain",
            lambda: restore(
                self.extracted(),
                s.pretrain,
                self.config.restore_config(tier),
                self.trigger_set(),
                test_set=s.test,
                run_id=self._row_id("extract-retrain"),
                keep_snapshots=self._keeps_snapshots("extract-retrain"),
                workers=self._workers,
                record_wall_time=self._wall,
            ),
            {"tier": str(tier)},
        )

    def _trajectory(self, name: str) -> tuple[list[NDArray[np.float64]], list[int]]:
        if name in self._trajectories:
            return self._trajectories[name]
        folder = self.trajectory_dir(name)
        files = sorted(folder.glob(f"epoch-*{CHECKPOINT_SUFFIX}")) if folder.exists() else []
        if not files:
            raise RejectedInputError(f"no trajectory checkpoints for {name!r} under {folder}")
        vectors = [load_checkpoint(f).flatten().astype(np.float64) for f in files]
        epochs = [int(f.name.removesuffix(CHECKPOINT_SUFFIX).split("-")[1]) for f in files]
        self._trajectories[name] = (vectors, epochs)
        return self._trajectories[name]

    def landscape(self) -> LandscapeOutcome:
        """Stage ``landscape``: trigger-loss grid around the retrained model plus the projected path."""
        phases = self._landscape_phases()
        if phases is None:
            raise RejectedInputError("landscape stage is disabled")
        ls = self.config.landscape
        first, second = phases
        if ls.scenario == "extract":
            center = self.extract_restored()
        else:
            center = self.restored(ls.tier)
        trigger_data = self.trigger_set().as_dataset()
        out = self.run_dir / "landscape"

        trajectory: Trajectory2D | None = None
        explained: list[float] = []
        if ls.mode == "pca":
            va, ea = self._trajectory(first)
            vb, eb = self._trajectory(second)
            points = va + vb
            first_tag = Phase.EXTRACT if ls.scenario == "extract" else Phase.FINETUNE
            tags = [str(first_tag)] * len(va) + [str(Phase.RETRAIN)] * len(vb)
            final = center.flatten().astype(np.float64)
            basis = pca_directions(points, final)
            explained = [float(v) for v in basis.explained_variance]
            trajectory = project_trajectory(points, basis.d1, basis.d2, final, phases=tags, epochs=ea + eb)
            span = ls.span
            if ls.fit_trajectory and len(trajectory):
                reach = float(max(np.abs(trajectory.alpha).max(), np.abs(trajectory.beta).max()))
                span = max(span, 1.1 * reach)
            grid = loss_grid(center, basis.d1, basis.d2, trigger_data, span=span, resolution=ls.resolution, workers=self._workers, mode="pca")
            trajectory.to_csv(out / "trajectory.csv")
        else:
            seed = derive_seed(self.config.experiment.seed, "landscape")
            d1 = filter_normalize(random_direction(center, derive_seed(seed, "d1")), center, seed=derive_seed(seed, "d1"))
            d2 = filter_normalize(random_direction(center, derive_seed(seed, "d2")), center, seed=derive_seed(seed, "d2"))
            grid = loss_grid(center, d1, d2, trigger_data, span=ls.span, resolution=ls.resolution, workers=self._workers, mode="random")
        grid.to_csv(out / "grid.csv")

        attack_end = retrain_end = None
        if trajectory is not None:
            if (pt := trajectory.endpoint(trajectory.phases[0])) is not None:
                attack_end = grid.cell_loss(*pt)
            if (pt := trajectory.endpoint(str(Phase.RETRAIN))) is not None:
                retrain_end = grid.cell_loss(*pt)
        summary = LandscapeSummary(
            scenario=ls.scenario,
            mode=ls.mode,
            explained_variance=explained,
            attack_endpoint_loss=attack_end,
            retrain_endpoint_loss=retrain_end,
            center_loss=grid.center_loss,
        )
        payload = summary.model_dump(mode="json") | {
            "span": float(grid.alphas[-1]),
            "resolution": ls.resolution,
            "explained_total": float(sum(explained)),
        }
        save_json_payload(payload, out / "landscape.json")
        log.info("landscape (%s/%s): center loss %.4f, attack endpoint %s, retrain endpoint %s", ls.scenario, ls.mode, grid.center_loss, attack_end, retrain_end)
        return LandscapeOutcome(grid=grid, trajectory=trajectory, summary=summary)

    def verify(self, names: list[str] | None = None) -> dict[str, VerifyResult]:
        """Stage ``verify``: ownership test of every available model against the trigger set.

        Without ``names`` this covers the models built in this process plus any
        checkpoint found in the run directory.
        """
        ts = self.trigger_set()
        if names is None:
            on_disk = sorted(p.name.removesuffix(CHECKPOINT_SUFFIX) for p in (self.run_dir / "checkpoints").glob(f"*{CHECKPOINT_SUFFIX}"))
            names = sorted(set(self._models) | set(on_disk))
        for name in names:
            model = self._models.get(name)
            if model is None:
                model = load_checkpoint(self.checkpoint_path(name))
            trace = self.traces.get(name)
            restore_trace = trace if trace is not None and trace.phase is Phase.RETRAIN else None
            result = verify_ownership(model, ts, self.config.experiment.alpha, restore_trace, workers=self._workers)
            self.verifies[name] = result
            save_json_payload(result.model_dump(mode="json"), self.run_dir / "verify" / f"{name}.json")
        return self.verifies

    # ---------- summary ----------
    def summary(self, landscape: LandscapeSummary | None = None) -> RunSummary:
        """Assemble the run summary from trace rows and verify results only."""
        cfg = self.config
        embed_final = self.traces["embedded"].final
        clean = self.traces.get("clean")
        attacks: dict[str, AttackSummary] = {}
        for tier in cfg.attack.tiers:
            ft, rt = self.traces.get(f"finetune-{tier}"), self.traces.get(f"retrain-{tier}")
            if ft is None:
                continue
            attacks[str(tier)] = AttackSummary(
                tier=str(tier),
                attack_lr=attack_lr_for(tier),
                restore_lr=restore_lr_for(tier),
                post_attack_trigger_acc=ft.final.trigger_acc or 0.0,
                post_attack_test_acc=ft.final.test_acc,
                restore_max_trigger_acc=rt.max_trigger_acc() if rt else None,
                restoration_gain=rt.restoration_gain() if rt else None,
                verify_after_attack=self.verifies.get(f"finetune-{tier}"),
                verify_after_restore=self.verifies.get(f"retrain-{tier}"),
            )
        control = None
        ctl_name = f"control-retrain-{self.control_tier()}"
        if (ctl := self.traces.get(ctl_name)) is not None:
            control = ControlSummary(
                tier=str(self.control_tier()),
                trigger_acc=ctl.final.trigger_acc or 0.0,
                restoration_gain=ctl.restoration_gain(),
                verify=self.verifies.get(ctl_name),
            )
        blend = None
        if (bl := self.traces.get("blend")) is not None and (pl := self.traces.get("blend-plain")) is not None:
            blend = BlendSummary(
                lr=cfg.blend.lr,
                mix_interval=cfg.blend.mix_interval,
                blended_final_trigger_acc=bl.final.trigger_acc or 0.0,
                plain_final_trigger_acc=pl.final.trigger_acc or 0.0,
                blended_final_test_acc=bl.final.test_acc,
                plain_final_test_acc=pl.final.test_acc,
            )
        extract_summary = None
        if (ex := self.traces.get("extract")) is not None:
            rx = self.traces.get("extract-retrain")
            extract_summary = ExtractSummary(
                agreement=ex.final.agreement or 0.0,
                trigger_acc=ex.final.trigger_acc or 0.0,
                test_acc=ex.final.test_acc,
                retrain_max_trigger_acc=rx.max_trigger_acc() if rx else None,
                restoration_gain=rx.restoration_gain() if rx else None,
            )
        return RunSummary(
            run_id=cfg.run_id,
            seed=cfg.experiment.seed,
            model_kind=str(cfg.model.kind),
            trigger=cfg.triggers.type,
            labels=cfg.triggers.labels,
            strategy=cfg.embed.strategy,
            clean_test_acc=clean.final.test_acc if clean else None,
            clean_trigger_acc=self.verifies["clean"].trigger_acc if "clean" in self.verifies else None,
            embed_test_acc=embed_final.test_acc,
            embed_trigger_acc=embed_final.trigger_acc or 0.0,
            verify_embedded=self.verifies.get("embedded"),
            attacks=attacks,
            control=control,
            blend=blend,
            extract=extract_summary,
            landscape=landscape,
        )


def write_manifest(run_dir: Path, run_id: str) -> Path:
    """List every artifact of a run with its size and SHA-256."""
    files: dict[str, dict[str, object]] = {}
    for path in sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json"):
        data = path.read_bytes()
        files[path.relative_to(run_dir).as_posix()] = {"bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
    return save_json_payload({"schema": MANIFEST_SCHEMA_VERSION, "run_id": run_id, "files": files}, run_dir / "manifest.json")


@contextmanager
def _stage(name: str, run_id: str, **context: object) -> Iterator[None]:
    log.info("[%s] stage %s", run_id, name)
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc, {"run_id": run_id, **context}) from exc


def run_pipeline(config: ExperimentConfig) -> RunSummary:
    """Run every enabled stage of one experiment and write its artifact tree.

    Raises:
        PipelineStageError: Naming the failing stage, with the run id and stage context.
    """
    exp = Experiment(config)
    rid = config.run_id
    exp.run_dir.mkdir(parents=True, exist_ok=True)
    exp.reset()
    (exp.run_dir / "config.ini").write_text(render_config(config), encoding="utf-8")
    log_json_payload(log, "config", config.model_dump(mode="json"))

    with _stage("data", rid):
        exp.splits()
    with _stage("pretrain", rid):
        exp.clean_model()
    with _stage("triggers", rid, trigger=config.triggers.type):
        exp.trigger_set()
    with _stage("embed", rid, strategy=config.embed.strategy):
        exp.embedded()
    for tier in config.attack.tiers:
        with _stage("attack", rid, tier=str(tier)):
            exp.attacked(tier)
        with _stage("restore", rid, tier=str(tier)):
            exp.restored(tier)
    if config.restore.control and config.pretrain.enabled:
        with _stage("control", rid, tier=str(exp.control_tier())):
            exp.restored(exp.control_tier(), control=True)
    if config.blend.enabled:
        with _stage("blend", rid):
            exp.blended()
    if config.extract.enabled:
        with _stage("extract", rid):
            exp.extracted()
            exp.extract_restored()
    landscape: LandscapeOutcome | None = None
    if config.landscape.enabled:
        with _stage("landscape", rid, scenario=config.landscape.scenario, mode=config.landscape.mode):
            landscape = exp.landscape()
    with _stage("verify", rid):
        exp.verify()
    with _stage("summary", rid):
        summary = exp.summary(landscape.summary if landscape else None)
        save_json_payload(summary.model_dump(mode="json"), exp.run_dir / "summary.json")
        grids = [(landscape.grid, landscape.trajectory)] if landscape else []
        render_plots([row for trace in exp.traces.values() for row in trace.rows], grids, exp.run_dir / "plots")
        write_manifest(exp.run_dir, rid)
    log.info("[%s] done: %s", rid, exp.run_dir)
    return summary
