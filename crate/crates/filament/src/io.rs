//! Run configuration, persistence and dataset export.
//!
//! A run lives in one directory holding `config.json`, `manifest.json` and the
//! stage outputs. Every produced file is listed in the manifest with its
//! SHA-256, so a rerun of the same configuration can be compared byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    fit_decay_rate, limit_tangent, rescaled_profile_compare, theorem_bounds_report, EnvelopeRegion, FilamentHistory,
    RateFit, ScatteringKernel, TailLimits, TheoremReport,
};
use crate::frame::CurveSnapshot;
use crate::grid::{ComplexField, GridSpec};
use crate::modes::{default_eps, default_xi_grid, integrate_linear_mode, log_grid, mode_growth_fit, GrowthReport, ModeState};
use crate::nls::{
    evolve, j_norm_series, scattering_profile, scattering_state, write_diagnostics, BasePointSample, DiagnosticRow,
    DtStage, EvolutionConfig, FieldState, OutputPlan, PerturbationSpec, Trajectory,
};
use crate::profile::{corner_angle_residual, extract_frame_limits, integrate_profile, SelfSimilarParams};
use crate::{invalid, Error, Result, C64};

pub const RUNS_DIR_ENV: &str = "FILAMENT_RUNS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Profile,
    Evolve,
    Reconstruct,
    Analyze,
    Modes,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Profile, Stage::Evolve, Stage::Reconstruct, Stage::Analyze, Stage::Modes];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Profile => "profile",
            Stage::Evolve => "evolve",
            Stage::Reconstruct => "reconstruct",
            Stage::Analyze => "analyze",
            Stage::Modes => "modes",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage '{s}'")))
    }
}

/// Parses a comma-separated stage list such as `evolve,analyze`.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut v = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<Stage>>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return invalid("empty stage list");
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSettings {
    /// Defaults to the parameter-dependent range.
    pub s_max: Option<f64>,
    pub step: Option<f64>,
    pub csv_stride: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self { s_max: None, step: None, csv_stride: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSettings {
    /// Physical times of the curve snapshots.
    pub times: Vec<f64>,
    pub x_max: f64,
    pub spacing: f64,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self { times: vec![1.0, 0.5, 0.2, 0.1], x_max: 4.0, spacing: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub tail_x_max: f64,
    pub tail_spacing: f64,
    /// Envelope sampling; times at or beyond `1/t_end` are kept.
    pub region: EnvelopeRegion,
    /// Scattering probes in evolution time; only those inside `[10, kernel_probe_max]` feed the t = 0 kernel.
    pub probes: Vec<f64>,
    pub kernel_probe_max: f64,
    pub limit_x_far: f64,
    pub limit_spacing: f64,
    pub rescaled_times: Vec<f64>,
    pub rescaled_s_max: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            tail_x_max: 200.0,
            tail_spacing: 0.05,
            region: EnvelopeRegion {
                times: vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
                distances: (2..=16).map(|k| 0.25 * k as f64).collect(),
            },
            probes: (0..=8).map(|k| 10f64.powf(1.0 + k as f64 / 4.0)).collect(),
            kernel_probe_max: 100.0,
            limit_x_far: 24.0,
            limit_spacing: 0.05,
            rescaled_times: vec![0.1, 0.01, 0.001],
            rescaled_s_max: 28.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSettings {
    pub delta: f64,
    pub t_end: f64,
    pub t_half: f64,
    /// Defaults to the standard logarithmic frequency grid.
    pub xi: Option<Vec<f64>>,
}

impl Default for ModeSettings {
    fn default() -> Self {
        Self { delta: 0.1, t_end: 2000.0, t_half: 1000.0, xi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub stability: f64,
    pub corner_angle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { stability: crate::asymptotics::STABILITY_TOLERANCE, corner_angle: 1e-3 }
    }
}

/// A full pipeline description; one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub a: f64,
    pub grid: GridSpec,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub dt_stages: Vec<DtStage>,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_smallness")]
    pub smallness: f64,
    #[serde(default = "default_base_stride")]
    pub base_stride: usize,
    #[serde(default = "default_diag_stride")]
    pub diag_stride: usize,
    #[serde(default)]
    pub profile: ProfileSettings,
    #[serde(default)]
    pub reconstruct: ReconstructSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub modes: ModeSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
}

fn default_smallness() -> f64 {
    0.1
}

fn default_base_stride() -> usize {
    5
}

fn default_diag_stride() -> usize {
    50
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            a: 1.0,
            grid: GridSpec::new(16384, 4096.0).expect("valid grid"),
            t_end: 1000.0,
            dt: 0.02,
            dt_stages: vec![DtStage { until: 10.0, dt: 0.01 }],
            perturbation: PerturbationSpec::gaussian(0.01, 1.25),
            gamma: 0.0,
            smallness: default_smallness(),
            base_stride: default_base_stride(),
            diag_stride: default_diag_stride(),
            profile: ProfileSettings::default(),
            reconstruct: ReconstructSettings::default(),
            analysis: AnalysisSettings::default(),
            modes: ModeSettings::default(),
            tolerances: Tolerances::default(),
            stages: all_stages(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.evolution().validate()?;
        if self.reconstruct.times.iter().any(|&t| !(t > 0.0 && t <= 1.0) || 1.0 / t > self.t_end * (1.0 + 1e-12)) {
            return invalid("snapshot times must lie in [1/t_end, 1]");
        }
        if !(self.reconstruct.spacing > 0.0 && self.reconstruct.x_max > 0.0) {
            return invalid("reconstruction range and spacing must be positive");
        }
        if self.stages.is_empty() {
            return invalid("no stages selected");
        }
        Ok(())
    }

    pub fn evolution(&self) -> EvolutionConfig {
        let mut cfg = EvolutionConfig::new(self.a, self.grid, self.t_end, self.dt, self.perturbation.clone());
        cfg.dt_stages = self.dt_stages.clone();
        cfg.gamma = self.gamma;
        cfg.smallness = self.smallness;
        cfg
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn resolved_run_id(&self) -> Result<String> {
        match &self.run_id {
            Some(id) => {
                check_run_id(id)?;
                Ok(id.clone())
            }
            None => Ok(format!("run-{}", &self.hash()?[..12])),
        }
    }

    /// Evolution times to record: envelope, snapshot, probe and rescaled times plus `τ = 1`.
    fn output_times(&self) -> Vec<f64> {
        let mut times = vec![1.0];
        let inv = |t: &f64| 1.0 / t;
        times.extend(self.reconstruct.times.iter().map(inv));
        times.extend(self.envelope_region().times.iter().map(inv));
        times.extend(self.rescaled_times().iter().map(inv));
        times.extend(self.analysis.probes.iter().copied().filter(|&t| t <= self.t_end));
        times.retain(|&t| t >= 1.0 && t <= self.t_end * (1.0 + 1e-12));
        times.sort_by(f64::total_cmp);
        times.dedup_by(|p, q| (*p - *q).abs() <= 1e-9 * p.abs());
        times
    }

    fn envelope_region(&self) -> EnvelopeRegion {
        let mut r = self.analysis.region.clone();
        r.times.retain(|&t| 1.0 / t <= self.t_end * (1.0 + 1e-12));
        r
    }

    fn rescaled_times(&self) -> Vec<f64> {
        self.analysis.rescaled_times.iter().copied().filter(|&t| 1.0 / t <= self.t_end * (1.0 + 1e-12)).collect()
    }
}

fn check_run_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.starts_with('.') {
        return invalid(format!("run id '{id}' must be a plain name"));
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub timestamp: u64,
    pub config_hash: String,
    pub a: f64,
    pub grid: GridSpec,
    pub time_range: (f64, f64),
    pub perturbation: PerturbationSpec,
    pub tolerances: Tolerances,
    pub module_versions: BTreeMap<String, String>,
    pub stages_requested: Vec<Stage>,
    pub stages_completed: Vec<Stage>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// `None` until the analysis stage has produced a theorem report.
    pub checks_passed: Option<bool>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    fn new(cfg: &RunConfig, run_id: &str) -> Result<Self> {
        let version = env!("CARGO_PKG_VERSION").to_string();
        let module_versions = ["grid", "profile", "nls", "modes", "frame", "asymptotics", "io"]
            .iter()
            .map(|m| (m.to_string(), version.clone()))
            .collect();
        Ok(Self {
            run_id: run_id.into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config_hash: cfg.hash()?,
            a: cfg.a,
            grid: cfg.grid,
            time_range: (1.0, cfg.t_end),
            perturbation: cfg.perturbation.clone(),
            tolerances: cfg.tolerances.clone(),
            module_versions,
            stages_requested: cfg.stages.clone(),
            stages_completed: Vec::new(),
            status: RunStatus::Incomplete,
            error: None,
            checks_passed: None,
            files: Vec::new(),
        })
    }

    pub fn file(&self, name: &str) -> Option<&FileRecord> {
        self.files.iter().find(|f| f.path == name)
    }
}

/// A file whose content no longer matches the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChecksumMismatch {
    pub path: String,
    pub expected: String,
    /// `None` when the file is missing.
    pub actual: Option<String>,
}

/// Handle on one run directory; every write goes through it.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join(MANIFEST).is_file() {
            return Err(Error::Run(format!("no run at {}", root.display())));
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Resolves a relative name inside the run directory; absolute paths and `..` are refused.
    pub fn resolve(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if name.is_empty() || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return invalid(format!("'{name}' is not a plain relative path"));
        }
        Ok(self.root.join(rel))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let path = self.resolve(name)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        f(&path)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_with(name, |p| Ok(std::fs::write(p, serde_json::to_string_pretty(value)?)?))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T> {
        let text = std::fs::read_to_string(self.resolve(name)?)
            .map_err(|e| Error::Run(format!("{name} is not available in {}: {e}", self.root.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        self.read_json(MANIFEST)
    }

    pub fn verify(&self) -> Result<Vec<ChecksumMismatch>> {
        let m = self.manifest()?;
        let mut bad = Vec::new();
        for f in &m.files {
            let actual = std::fs::read(self.resolve(&f.path)?).ok().map(|b| sha256_hex(&b));
            if actual.as_deref() != Some(f.sha256.as_str()) {
                bad.push(ChecksumMismatch { path: f.path.clone(), expected: f.sha256.clone(), actual });
            }
        }
        Ok(bad)
    }
}

const MANIFEST: &str = "manifest.json";
const CONFIG: &str = "config.json";
const TRAJECTORY: &str = "trajectory.json";
const CURVES: &str = "curves.json";
const RATES: &str = "rates.json";
const MODES: &str = "modes.json";
const REPORT: &str = "theorem_report.json";

/// Run directories under `root`, sorted by name.
pub fn list_runs(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().join(MANIFEST).is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

/// Opens `root/run_id`, or reports the runs that do exist.
pub fn open_run(root: &Path, run_id: &str) -> Result<RunDir> {
    check_run_id(run_id)?;
    RunDir::open(root.join(run_id)).map_err(|_| {
        let avail = list_runs(root);
        let listing = if avail.is_empty() { "none".to_string() } else { avail.join(", ") };
        Error::Run(format!("run '{run_id}' not found under {}; available runs: {listing}", root.display()))
    })
}

pub fn manifest(root: &Path, run_id: &str) -> Result<RunManifest> {
    open_run(root, run_id)?.manifest()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTrajectory {
    run_id: String,
    a: f64,
    steps: usize,
    states: Vec<FieldState>,
    diagnostics: Vec<DiagnosticRow>,
    base_point: Vec<BasePointSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCurves {
    run_id: String,
    snapshots: Vec<CurveSnapshot>,
}

/// A fitted rate tagged with the quantity it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRate {
    pub quantity: String,
    #[serde(flatten)]
    pub fit: RateFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredRates {
    run_id: String,
    rates: Vec<NamedRate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredModes {
    run_id: String,
    report: GrowthReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileSummary {
    run_id: String,
    a: f64,
    s_max: f64,
    step: f64,
    theta: f64,
    angle_residual: f64,
    equation_residual: f64,
    limits: crate::profile::AsymptoticFrameData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalysisSummary {
    run_id: String,
    tail_limits: TailLimits,
    scattering_gaps: Vec<(f64, f64)>,
    scattering_decreasing: bool,
    kernel_probe: Option<f64>,
    rescaled: Option<crate::asymptotics::RescaledReport>,
    warnings: Vec<String>,
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    dir: RunDir,
    manifest: RunManifest,
    trajectory: Option<Trajectory>,
    rates: Vec<NamedRate>,
}

impl Pipeline<'_> {
    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let rel = path
            .strip_prefix(self.dir.path())
            .map_err(|_| Error::Run("produced file outside the run directory".into()))?
            .to_string_lossy()
            .replace('\\', "/");
        let rec = FileRecord { path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 };
        match self.manifest.files.iter_mut().find(|f| f.path == rec.path) {
            Some(f) => *f = rec,
            None => self.manifest.files.push(rec),
        }
        Ok(())
    }

    fn save_manifest(&mut self) -> Result<()> {
        self.manifest.files.sort_by(|p, q| p.path.cmp(&q.path));
        self.dir.write_json(MANIFEST, &self.manifest)?;
        Ok(())
    }

    fn run_id(&self) -> String {
        self.manifest.run_id.clone()
    }

    fn trajectory(&mut self) -> Result<&Trajectory> {
        if self.trajectory.is_none() {
            let stored: StoredTrajectory = self.dir.read_json(TRAJECTORY).map_err(|_| {
                Error::Run("this stage needs the evolve output; run the evolve stage first".into())
            })?;
            self.trajectory = Some(Trajectory {
                a: stored.a,
                states: stored.states,
                diagnostics: stored.diagnostics,
                base_point: stored.base_point,
                steps: stored.steps,
            });
        }
        Ok(self.trajectory.as_ref().expect("loaded"))
    }

    fn profile(&mut self) -> Result<()> {
        let params = SelfSimilarParams::new(self.cfg.a)?;
        let s_max = self.cfg.profile.s_max.unwrap_or_else(|| params.default_s_max());
        let step = self.cfg.profile.step.unwrap_or_else(|| SelfSimilarParams::default_step(s_max));
        let sol = integrate_profile(params, s_max, step)?;
        let limits = extract_frame_limits(&sol)?;
        let p = self.dir.resolve("profile.csv")?;
        sol.write_csv(&p, self.cfg.profile.csv_stride)?;
        self.record(&p)?;
        let summary = ProfileSummary {
            run_id: self.run_id(),
            a: self.cfg.a,
            s_max,
            step,
            theta: limits.theta,
            angle_residual: corner_angle_residual(&limits, self.cfg.a),
            equation_residual: sol.equation_residual(),
            limits,
        };
        let p = self.dir.write_json("profile.json", &summary)?;
        self.record(&p)?;
        if s_max >= 200.0 {
            let samples: Vec<(f64, f64)> = log_grid(20.0, 200.0, 40)
                .into_iter()
                .map(|s| Ok((s, (sol.eval(s.min(sol.s_max()))?.t - limits.a_plus).norm())))
                .collect::<Result<_>>()?;
            if let Ok(fit) = fit_decay_rate(&samples) {
                self.rates.push(NamedRate { quantity: "profile_tangent_decay".into(), fit });
            }
        }
        Ok(())
    }

    fn evolve(&mut self) -> Result<()> {
        let plan =
            OutputPlan { times: self.cfg.output_times(), diag_stride: self.cfg.diag_stride, base_stride: self.cfg.base_stride };
        let traj = evolve(&self.cfg.evolution(), &plan)?;
        let stored = StoredTrajectory {
            run_id: self.run_id(),
            a: traj.a,
            steps: traj.steps,
            states: traj.states.clone(),
            diagnostics: traj.diagnostics.clone(),
            base_point: traj.base_point.clone(),
        };
        let p = self.dir.write_json(TRAJECTORY, &stored)?;
        self.record(&p)?;
        let p = self.dir.resolve("diagnostics.csv")?;
        write_diagnostics(&traj.diagnostics, &p)?;
        self.record(&p)?;
        self.trajectory = Some(traj);
        Ok(())
    }

    fn reconstruct(&mut self) -> Result<()> {
        let settings = self.cfg.reconstruct.clone();
        let run_id = self.run_id();
        let traj = self.trajectory()?;
        let hist = FilamentHistory::new(traj)?;
        let mut snapshots = Vec::new();
        for &t in &settings.times {
            let cover = hist.evaluator(t)?.coverage();
            let x_max = settings.x_max.min(0.999 * cover);
            let k = (x_max / settings.spacing).floor() as i64;
            let xs: Vec<f64> = (-k..=k).map(|i| i as f64 * settings.spacing).collect();
            snapshots.push(hist.snapshot(t, &xs)?);
        }
        let p = self.dir.write_json(CURVES, &StoredCurves { run_id, snapshots: snapshots.clone() })?;
        self.record(&p)?;
        let p = self.dir.resolve("curves.csv")?;
        CurveSnapshot::write_csv(&snapshots, &p)?;
        self.record(&p)
    }

    fn analyze(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let run_id = self.run_id();
        let traj = self.trajectory()?;
        let t_end = cfg.t_end;
        let mut rates = Vec::new();
        let mut warnings = Vec::new();

        let probes: Vec<f64> = cfg.analysis.probes.iter().copied().filter(|&t| t >= 10.0 && t <= t_end).collect();
        let (gaps, decreasing) = if probes.len() >= 2 {
            let est = scattering_state(traj, &probes)?;
            if let Some(fit) = est.fit {
                rates.push(NamedRate { quantity: "scattering_gap".into(), fit });
            }
            (est.gaps, est.decreasing)
        } else {
            warnings.push("fewer than two scattering probes inside the run".into());
            (Vec::new(), true)
        };
        let window = if t_end >= 100.0 { Some((10.0, t_end)) } else { None };
        if let Some(fit) = j_norm_series(traj, window).fit {
            rates.push(NamedRate { quantity: "j_norm_growth".into(), fit });
        }

        let kernel_probes: Vec<f64> = probes.iter().copied().filter(|&t| t <= cfg.analysis.kernel_probe_max * (1.0 + 1e-12)).collect();
        let (f_plus, kernel_probe): (ComplexField, Option<f64>) = match kernel_probes.last() {
            Some(&t) => (scattering_profile(traj.state_at(t)?, traj.a)?, Some(t)),
            None => {
                let last = traj.states.last().ok_or_else(|| Error::Run("trajectory has no states".into()))?;
                warnings.push(format!("t = 0 kernel built from the state at t = {}", last.t));
                (scattering_profile(last, traj.a)?, Some(last.t))
            }
        };

        let hist = FilamentHistory::new(traj)?;
        let limits = hist.tail_limits(cfg.analysis.tail_x_max, cfg.analysis.tail_spacing)?;
        if limits.low_confidence {
            warnings.push("tail limits flagged low-confidence".into());
        }
        let kernel = ScatteringKernel { f_plus: &f_plus, a: traj.a };
        let k = (cfg.analysis.limit_x_far / cfg.analysis.limit_spacing).floor() as i64 - 1;
        let mut xs: Vec<f64> = (1..=k).flat_map(|i| [i as f64 * cfg.analysis.limit_spacing, -(i as f64) * cfg.analysis.limit_spacing]).collect();
        xs.sort_by(f64::total_cmp);
        let curve = limit_tangent(&kernel, &limits, &xs, cfg.analysis.limit_x_far)?;
        let mut report: TheoremReport = theorem_bounds_report(&hist, &limits, &cfg.envelope_region(), &curve)?;
        report.run_id = Some(run_id.clone());

        let rescaled_times = cfg.rescaled_times();
        let rescaled = if rescaled_times.is_empty() {
            None
        } else {
            let s_max = cfg.analysis.rescaled_s_max;
            let sol = integrate_profile(SelfSimilarParams::new(traj.a)?, s_max + 2.0, 1e-3)?;
            match rescaled_profile_compare(traj, &sol, &rescaled_times, s_max, 0.05) {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("rescaled comparison skipped: {e}"));
                    None
                }
            }
        };

        let limit_rows: Vec<serde_json::Value> = curve
            .iter()
            .map(|s| serde_json::json!({ "x": s.x, "tangent": s.tangent, "tangent_x": s.tangent_x }))
            .collect();
        let summary = AnalysisSummary {
            run_id: run_id.clone(),
            tail_limits: limits,
            scattering_gaps: gaps,
            scattering_decreasing: decreasing,
            kernel_probe,
            rescaled,
            warnings,
        };
        self.rates.extend(rates);
        let p = self.dir.write_json("analysis.json", &summary)?;
        self.record(&p)?;
        let p = self.dir.write_json("limit_tangent.json", &serde_json::json!({ "run_id": run_id, "samples": limit_rows }))?;
        self.record(&p)?;
        let p = self.dir.write_json(REPORT, &report)?;
        self.record(&p)?;
        self.manifest.checks_passed = Some(report.all_pass());
        Ok(())
    }

    fn modes(&mut self) -> Result<()> {
        let m = &self.cfg.modes;
        let a = self.cfg.a;
        let outputs: Vec<f64> = log_grid(1.0, m.t_end, 40).into_iter().filter(|&t| t > 1.0).collect();
        let xis = m.xi.clone().unwrap_or_else(default_xi_grid);
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let mut trajs = Vec::new();
        for xi in xis {
            for init in [ModeState::new(xi, 1.0, one, zero), ModeState::new(xi, 1.0, zero, one)] {
                trajs.push(integrate_linear_mode(a, init, &outputs)?);
            }
        }
        let report = mode_growth_fit(&trajs, m.delta, default_eps(a), m.t_half)?;
        let p = self.dir.resolve("modes.csv")?;
        report.write_csv(&p)?;
        self.record(&p)?;
        let p = self.dir.write_json(MODES, &StoredModes { run_id: self.run_id(), report })?;
        self.record(&p)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Profile => self.profile(),
            Stage::Evolve => self.evolve(),
            Stage::Reconstruct => self.reconstruct(),
            Stage::Analyze => self.analyze(),
            Stage::Modes => self.modes(),
        }
    }
}

/// Runs the selected stages of `cfg` in `run_dir` (default: `runs_root()/run_id`).
///
/// On a stage failure the manifest is written with status `incomplete` and the error.
pub fn run_pipeline(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let run_id = cfg.resolved_run_id()?;
    let dir = RunDir::create(run_dir.map_or_else(|| runs_root().join(&run_id), Path::to_path_buf))?;
    let mut manifest = RunManifest::new(cfg, &run_id)?;
    // keep outputs of earlier invocations in the same directory
    if let Ok(prev) = dir.manifest() {
        if prev.config_hash_matches(cfg)? {
            manifest.files = prev.files;
            manifest.stages_completed = prev.stages_completed;
            manifest.checks_passed = prev.checks_passed;
        }
    }
    let mut p = Pipeline { cfg, dir, manifest, trajectory: None, rates: Vec::new() };
    if let Ok(prev) = p.dir.read_json::<StoredRates>(RATES) {
        p.rates = prev.rates;
    }
    let cfg_path = p.dir.write_with(CONFIG, |path| Ok(std::fs::write(path, cfg.to_json()?)?))?;
    p.record(&cfg_path)?;
    let mut stages = cfg.stages.clone();
    stages.sort();
    for stage in stages {
        if let Err(e) = p.run_stage(stage) {
            p.manifest.status = RunStatus::Incomplete;
            p.manifest.error = Some(format!("stage {} failed: {e}", stage.name()));
            p.save_manifest()?;
            return Err(Error::Run(format!("stage {} failed: {e}", stage.name())));
        }
        p.manifest.stages_completed.retain(|s| *s != stage);
        p.manifest.stages_completed.push(stage);
        p.manifest.stages_completed.sort();
    }
    if !p.rates.is_empty() || cfg.stages.iter().any(|s| matches!(s, Stage::Profile | Stage::Analyze)) {
        p.rates.sort_by(|x, y| x.quantity.cmp(&y.quantity));
        p.rates.dedup_by(|x, y| x.quantity == y.quantity);
        let stored = StoredRates { run_id: p.run_id(), rates: p.rates.clone() };
        let path = p.dir.write_json(RATES, &stored)?;
        p.record(&path)?;
    }
    p.manifest.status = RunStatus::Complete;
    p.manifest.error = None;
    p.save_manifest()?;
    Ok(p.manifest)
}

impl RunManifest {
    fn config_hash_matches(&self, cfg: &RunConfig) -> Result<bool> {
        let mut other = cfg.clone();
        other.stages = self.stages_requested.clone();
        Ok(other.hash()? == self.config_hash || cfg.hash()? == self.config_hash || self.same_physics(cfg))
    }

    fn same_physics(&self, cfg: &RunConfig) -> bool {
        self.a == cfg.a && self.grid == cfg.grid && self.time_range == (1.0, cfg.t_end) && self.perturbation == cfg.perturbation
    }
}

/// Theorem report of a finished run.
pub fn theorem_report(dir: &RunDir) -> Result<TheoremReport> {
    dir.read_json(REPORT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Curves,
    Frames,
    Rates,
    Modes,
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curves" => Ok(Dataset::Curves),
            "frames" => Ok(Dataset::Frames),
            "rates" => Ok(Dataset::Rates),
            "modes" => Ok(Dataset::Modes),
            other => invalid(format!("unknown dataset '{other}' (expected curves, frames, rates or modes)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => invalid(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

/// Column headers of the CSV exports.
pub const CURVES_HEADER: &str = "t,x,chi_x,chi_y,chi_z,Tx,Ty,Tz,e1x,e1y,e1z,e2x,e2y,e2z";
pub const FRAMES_HEADER: &str = "t,x,Tx,Ty,Tz,e1x,e1y,e1z,e2x,e2y,e2z";
pub const RATES_HEADER: &str = "quantity,exponent,constant,residual,window_lo,window_hi,samples";

/// Writes `exports/<what>.<format>` inside the run directory and returns its path.
pub fn export_dataset(dir: &RunDir, what: Dataset, format: Format) -> Result<PathBuf> {
    let name = format!(
        "exports/{}.{}",
        match what {
            Dataset::Curves => "curves",
            Dataset::Frames => "frames",
            Dataset::Rates => "rates",
            Dataset::Modes => "modes",
        },
        match format {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    );
    match (what, format) {
        (Dataset::Curves, Format::Csv) => {
            let c: StoredCurves = dir.read_json(CURVES)?;
            dir.write_with(&name, |p| CurveSnapshot::write_csv(&c.snapshots, p))
        }
        (Dataset::Curves, Format::Json) => {
            let c: StoredCurves = dir.read_json(CURVES)?;
            dir.write_json(&name, &c.snapshots)
        }
        (Dataset::Frames, fmt) => {
            let c: StoredCurves = dir.read_json(CURVES)?;
            match fmt {
                Format::Csv => dir.write_with(&name, |p| {
                    let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
                    writeln!(w, "{FRAMES_HEADER}")?;
                    for s in &c.snapshots {
                        for (x, f) in s.xs.iter().zip(&s.frames) {
                            write!(w, "{},{}", s.t, x)?;
                            for v in [f.tangent, f.e1, f.e2] {
                                write!(w, ",{},{},{}", v.x, v.y, v.z)?;
                            }
                            writeln!(w)?;
                        }
                    }
                    Ok(w.flush()?)
                }),
                Format::Json => {
                    let rows: Vec<serde_json::Value> = c
                        .snapshots
                        .iter()
                        .map(|s| serde_json::json!({ "t": s.t, "xs": s.xs, "frames": s.frames }))
                        .collect();
                    dir.write_json(&name, &rows)
                }
            }
        }
        (Dataset::Rates, fmt) => {
            let r: StoredRates = dir.read_json(RATES)?;
            match fmt {
                Format::Json => dir.write_json(&name, &r.rates),
                Format::Csv => dir.write_with(&name, |p| {
                    let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
                    writeln!(w, "{RATES_HEADER}")?;
                    for n in &r.rates {
                        let f = &n.fit;
                        writeln!(w, "{},{},{},{},{},{},{}", n.quantity, f.exponent, f.constant, f.residual, f.window.0, f.window.1, f.samples)?;
                    }
                    Ok(w.flush()?)
                }),
            }
        }
        (Dataset::Modes, fmt) => {
            let m: StoredModes = dir.read_json(MODES)?;
            match fmt {
                Format::Json => dir.write_json(&name, &m.report),
                Format::Csv => dir.write_with(&name, |p| m.report.write_csv(p)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"{"run_id": null, "a": 1.0, "grid": {"n_points": 1024, "half_length": 128.0},
            "t_end": 10.0, "dt": 0.01, "perturbation": {"family": "gaussian-bump", "amplitude": 0.0, "width": 1.0, "center": 0.0}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.stages, Stage::ALL.to_vec());
        assert_eq!(cfg.base_stride, 5);
        let times = cfg.output_times();
        assert_eq!(times.first(), Some(&1.0));
        assert!(times.iter().all(|&t| t <= 10.0));
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json().unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn stage_lists() {
        assert_eq!(parse_stages("analyze, evolve").unwrap(), vec![Stage::Evolve, Stage::Analyze]);
        assert!(parse_stages("evolve,plot").is_err());
        assert!(parse_stages("").is_err());
    }

    #[test]
    fn run_dir_refuses_escapes() {
        let tmp = tempfile::tempdir().unwrap();
        let d = RunDir::create(tmp.path().join("r")).unwrap();
        assert!(d.resolve("../x").is_err());
        assert!(d.resolve("/etc/passwd").is_err());
        assert!(d.resolve("a/../../b").is_err());
        assert!(d.resolve("exports/curves.csv").is_ok());
        assert!(check_run_id("../up").is_err());
        assert!(check_run_id("run-01").is_ok());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.perturbation.amplitude = 0.02;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
