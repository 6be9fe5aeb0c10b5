"""
Run workspace: one output directory, one config, cached stage artefacts.

Each stage loads its artefact when it already exists on disk and computes
it otherwise, so CLI subcommands can be run one at a time or chained by the
full pipeline. Layout:

    <out>/scene/scene.npz        simulated fields, observations, sensor readings
    <out>/scene/snapshots/       snap_{t:05}.csv / .pgm exports
    <out>/split.csv              timestep,set
    <out>/models/cae.lada        autoencoder weights
    <out>/models/lstm.lada       LSTM weights + latent scaler
    <out>/latents.npz            encoded trajectory and observations
    <out>/tables/*.csv           every result table
    <out>/images/{mode}/         triptych_{t:05}.pgm
    <out>/manifest.txt           key=value run manifest
"""
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.app.core.config import ExperimentConfig
from src.app.core.errors import InputError, LadaError, StageError
from src.data import field_io
from src.data.dataset import SplitAssignment, split, target_windows, windows_by_segment
from src.data.scene import SensorSet, normalize, observe, simulate, to_channels
from src.engine.cae import CaeArchitecture, CaeModel, train_cae
from src.engine.nn.losses import loss_mse_mae
from src.engine.surrogate import LstmSurrogate, persistence_mse, train_surrogate

logger = logging.getLogger(__name__)


@dataclass
class SceneData:
    ppm: np.ndarray               # (T, H, W) simulated concentration
    fields: np.ndarray            # (T, C, H, W) normalised model input
    obs_timesteps: List[int]
    readings: np.ndarray          # (n_obs, n_sensors) ppm
    obs_fields: np.ndarray        # (n_obs, C, H, W) normalised observation fields

    @property
    def T(self) -> int:
        return len(self.fields)

    def observation(self, t: int) -> np.ndarray:
        return self.obs_fields[self.obs_timesteps.index(t)]


@dataclass
class LatentData:
    background: np.ndarray                 # (T, p) encoded model trajectory
    observed: Dict[int, np.ndarray]        # t -> encoded observation field


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


class RunWorkspace:
    def __init__(self, config: ExperimentConfig, out_dir=None, shared_scene: Optional[SceneData] = None):
        self.config = config
        self.root = Path(out_dir) if out_dir is not None else Path(config.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.timings: Dict[str, float] = {}
        self._scene = shared_scene
        self._split: Optional[SplitAssignment] = None
        self._cae: Optional[CaeModel] = None
        self._latents: Optional[LatentData] = None
        self._surrogate: Optional[LstmSurrogate] = None

    # ------------------------------------------
    # paths
    # ------------------------------------------
    @property
    def tables_dir(self) -> Path:
        return self.root / "tables"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def images_dir(self) -> Path:
        return self.root / "images"

    def table_path(self, name: str) -> Path:
        return self.tables_dir / f"{name}.csv"

    # ------------------------------------------
    # stage bookkeeping
    # ------------------------------------------
    @contextmanager
    def stage(self, name: str):
        logger.info(f"▶️ Stage '{name}' started")
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (LadaError, ValueError, OSError) as e:
            logger.error(f"❌ Stage '{name}' failed: {e}")
            raise StageError(name, e) from e
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start
        logger.info(f"✅ Stage '{name}' finished in {self.timings[name]:.1f}s")

    # ------------------------------------------
    # scene
    # ------------------------------------------
    def sensors(self) -> SensorSet:
        return SensorSet.from_settings(self.config.sensors, self.config.scene.shape)

    def scene(self, force: bool = False) -> SceneData:
        if self._scene is not None and not force:
            return self._scene
        path = self.root / "scene" / "scene.npz"
        if path.exists() and not force:
            data = field_io.load_arrays(path)
            self._scene = SceneData(data["ppm"], data["fields"], data["obs_timesteps"].astype(int).tolist(),
                                    data["readings"], data["obs_fields"])
            return self._scene

        cfg = self.config
        ppm = simulate(cfg.scene)
        normalised = normalize(ppm, cfg.scene.ambient_ppm, cfg.scene.initial_ppm)
        fields = np.stack([to_channels(f, cfg.channels) for f in normalised])
        timesteps = cfg.observations.resolve()
        rng = np.random.default_rng(derive_seed(cfg.scene.seed, 1))
        readings, obs_2d = observe(ppm, timesteps, self.sensors(), cfg.scene, rng)
        obs_fields = np.stack([to_channels(f, cfg.channels) for f in obs_2d])
        self._scene = SceneData(ppm, fields, timesteps, readings, obs_fields)
        field_io.save_arrays(path, ppm=ppm, fields=fields, obs_timesteps=np.array(timesteps),
                             readings=readings, obs_fields=obs_fields)
        return self._scene

    def export_scene(self) -> int:
        scene = self.scene()
        every = self.config.export.every
        count = field_io.export_snapshots(self.root / "scene" / "snapshots", scene.fields, every)
        for t, obs in zip(scene.obs_timesteps, scene.obs_fields):
            field_io.write_pgm(self.root / "scene" / "observations" / f"obs_{t:05}.pgm", obs)
        return count

    # ------------------------------------------
    # split
    # ------------------------------------------
    def split(self) -> SplitAssignment:
        if self._split is None:
            scene = self.scene()
            self._split = split(scene.T, self.config.split.jump, scene.obs_timesteps)
            self._split.save_csv(self.root / "split.csv")
        return self._split

    # ------------------------------------------
    # autoencoder
    # ------------------------------------------
    def cae_architecture(self) -> CaeArchitecture:
        return CaeArchitecture.from_settings(self.config.cae, self.scene().fields.shape[1:])

    def observation_style_fields(self, timesteps: List[int]) -> np.ndarray:
        """Sensor-interpolated fields at `timesteps`, built the same way as the assimilated observations."""
        cfg = self.config
        rng = np.random.default_rng(derive_seed(cfg.scene.seed, 4))
        _, obs_2d = observe(self.scene().ppm, timesteps, self.sensors(), cfg.scene, rng)
        return np.stack([to_channels(f, cfg.channels) for f in obs_2d])

    def cae(self, force: bool = False) -> CaeModel:
        if self._cae is not None and not force:
            return self._cae
        path = self.models_dir / "cae.lada"
        if path.exists() and not force:
            self._cae = CaeModel.load(path)
            return self._cae

        scene, assignment, settings = self.scene(), self.split(), self.config.cae
        train = scene.fields[list(assignment.train)]
        val = scene.fields[list(assignment.val)]
        if settings.observation_augment and len(train):
            extra = self.observation_style_fields(list(assignment.train)[::settings.observation_augment])
            logger.info(f"🧩 Adding {len(extra)} sensor-interpolated fields to the autoencoder training set")
            train = np.concatenate([train, extra])
        logger.info(f"🧠 Training autoencoder on {len(train)} fields (val {len(val)}), p={settings.latent_dim}")
        result = train_cae(self.cae_architecture(), train, val, settings.epochs, settings.batch, settings.lr,
                           derive_seed(self.config.seed, 2), settings.log_every)
        self._cae = result.model
        self._cae.save(path)
        self._latents = None
        (self.root / "latents.npz").unlink(missing_ok=True)
        self.tables_dir.mkdir(parents=True, exist_ok=True)
        result.history_frame().to_csv(self.table_path("cae_history"), index=False, float_format="%.17g")

        rows = []
        for name in ("train", "val", "test"):
            report = self._cae.evaluate(scene.fields[list(assignment.indices(name))])
            rows.append(f"{name},{report.mse!r},{report.mae!r}")
        report = self._cae.evaluate(scene.obs_fields)
        rows.append(f"observations,{report.mse!r},{report.mae!r}")
        self.table_path("cae_reconstruction").write_text("set,mse,mae\n" + "\n".join(rows) + "\n")
        return self._cae

    # ------------------------------------------
    # latents
    # ------------------------------------------
    def latents(self, force: bool = False) -> LatentData:
        if self._latents is not None and not force:
            return self._latents
        path = self.root / "latents.npz"
        if path.exists() and not force:
            data = field_io.load_arrays(path)
            self._latents = LatentData(data["background"], dict(zip(data["obs_timesteps"].astype(int).tolist(), data["observed"])))
            return self._latents

        scene, model = self.scene(), self.cae()
        background = model.encode_many(scene.fields)
        observed = model.encode_many(scene.obs_fields)
        self._latents = LatentData(background, dict(zip(scene.obs_timesteps, observed)))
        field_io.save_arrays(path, background=background, observed=observed, obs_timesteps=np.array(scene.obs_timesteps))
        return self._latents

    def sequence_samples(self, set_name: str, steps: Optional[int] = None):
        """Training/validation windows for the surrogate, built per `split.lstm_windowing`."""
        q = steps or self.config.lstm.steps
        indices = self.split().indices(set_name)
        background = self.latents().background
        if self.config.split.lstm_windowing == "segments":
            return windows_by_segment(background, indices, q)
        return target_windows(background, indices, q)

    # ------------------------------------------
    # surrogate
    # ------------------------------------------
    def surrogate(self, force: bool = False) -> LstmSurrogate:
        if self._surrogate is not None and not force:
            return self._surrogate
        path = self.models_dir / "lstm.lada"
        if path.exists() and not force:
            self._surrogate = LstmSurrogate.load(path)
            return self._surrogate

        settings = self.config.lstm
        train_samples = self.sequence_samples("train")
        val_samples = self.sequence_samples("val")
        if not train_samples:
            raise InputError(f"no LSTM training windows for q={settings.steps}; "
                             f"try split.lstm_windowing: targets or a larger jump")
        train_latents = self.latents().background[list(self.split().train)]
        logger.info(f"🔁 Training LSTM on {len(train_samples)} windows (val {len(val_samples)}), q={settings.steps}")
        self._surrogate, result = train_surrogate(
            train_samples, val_samples, self.config.latent_dim, settings.hidden, settings.steps, settings.activation,
            settings.epochs, settings.batch, settings.lr, derive_seed(self.config.seed, 3),
            scaler_latents=train_latents, log_every=settings.log_every, residual=settings.residual,
        )
        self._surrogate.save(path)
        self.tables_dir.mkdir(parents=True, exist_ok=True)
        result.history_frame().to_csv(self.table_path("lstm_history"), index=False, float_format="%.17g")

        lines = ["samples,lstm_mse,persistence_mse"]
        for name, samples in (("train", train_samples), ("val", val_samples)):
            if samples:
                lines.append(f"{name},{self._surrogate.evaluate(samples).mse!r},{persistence_mse(samples).mse!r}")
        self.table_path("lstm_forecast").write_text("\n".join(lines) + "\n")
        return self._surrogate

    # ------------------------------------------
    # manifest
    # ------------------------------------------
    def write_manifest(self, extra: Optional[Dict[str, object]] = None) -> Path:
        import pandas
        import scipy

        cfg = self.config
        entries = {
            "seed": cfg.seed,
            "config": cfg.source if cfg.source is not None else "defaults",
            "output_dir": self.root,
            "scene_seed": cfg.scene.seed,
            "grid": f"{cfg.scene.grid_rows}x{cfg.scene.grid_cols}",
            "snapshots": cfg.scene.steps,
            "channels": cfg.channels,
            "latent_dim": cfg.latent_dim,
            "lstm_steps": cfg.lstm.steps,
            "observation_timesteps": ",".join(str(t) for t in cfg.observations.resolve()),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
        }
        entries.update({f"stage_{name}_seconds": f"{secs:.3f}" for name, secs in self.timings.items()})
        entries.update(extra or {})
        path = self.root / "manifest.txt"
        path.write_text("".join(f"{k}={v}\n" for k, v in entries.items()))
        return path


def physical_mse(decoded: np.ndarray, reference: np.ndarray) -> float:
    return loss_mse_mae(np.asarray(decoded), np.asarray(reference)).mse
