//! Experiment configuration: one TOML file per case, with command-line
//! overrides addressed by dotted key.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use vsense_core::identify::{InputKind, NewmarkParams};
use vsense_core::model::{BeamSpec, DofLabel};
use vsense_core::signals::ForceProfile;

/// A configuration problem, tied to the key that caused it.
#[derive(Debug, thiserror::Error)]
#[error("config key `{key}`: {msg}")]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(key: &str, msg: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub model: ModelSection,
    pub partition: PartitionSection,
    #[serde(default)]
    pub reduction: ReductionSection,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub regularization: RegularizationSection,
    #[serde(default)]
    pub excitation: ExcitationSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub akf: AkfSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSection {
    /// Cantilever beam; omitted fields take the default strip geometry.
    Beam {
        length: Option<f64>,
        width: Option<f64>,
        thickness: Option<f64>,
        youngs_modulus: Option<f64>,
        density: Option<f64>,
        n_elements: Option<usize>,
    },
    /// Spring-mass chain.
    Chain {
        masses: Vec<f64>,
        stiffnesses: Vec<f64>,
        #[serde(default = "yes")]
        grounded: bool,
    },
    /// Mass and stiffness from Matrix Market files.
    Matrices {
        m: PathBuf,
        k: PathBuf,
        labels: Option<PathBuf>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// Master DOFs kept by the reduction; empty means identify on the full model.
    #[serde(default)]
    pub masters: Vec<String>,
    pub measured: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    /// Rayleigh mass coefficient.
    #[serde(default)]
    pub damping_a: f64,
    /// Rayleigh stiffness coefficient.
    #[serde(default)]
    pub damping_b: f64,
}

fn default_modes() -> usize {
    20
}

impl Default for ReductionSection {
    fn default() -> Self {
        Self {
            n_modes: default_modes(),
            damping_a: 0.0,
            damping_b: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "quarter")]
    pub beta: f64,
    #[serde(default = "half")]
    pub delta: f64,
    pub dt: f64,
    #[serde(default = "default_input")]
    pub input: InputKind,
}

fn quarter() -> f64 {
    0.25
}

fn half() -> f64 {
    0.5
}

fn default_input() -> InputKind {
    InputKind::Acceleration
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    /// Fixed α; when absent `identify` uses the value stored by `calibrate`.
    pub alpha: Option<f64>,
    /// Grid bounds relative to the squared operator norm.
    #[serde(default = "grid_lo")]
    pub grid_lo: f64,
    #[serde(default = "grid_hi")]
    pub grid_hi: f64,
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    #[serde(default = "calibration_samples")]
    pub calibration_samples: usize,
    /// Measurement record for calibration; defaults to the simulated one.
    pub calibration: Option<PathBuf>,
}

fn grid_lo() -> f64 {
    1e-12
}

fn grid_hi() -> f64 {
    1e2
}

fn grid_points() -> usize {
    50
}

fn calibration_samples() -> usize {
    1000
}

impl Default for RegularizationSection {
    fn default() -> Self {
        Self {
            alpha: None,
            grid_lo: grid_lo(),
            grid_hi: grid_hi(),
            grid_points: grid_points(),
            calibration_samples: calibration_samples(),
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub forces: Vec<ForceSpec>,
}

fn default_samples() -> usize {
    1000
}

impl Default for ExcitationSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            forces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    pub label: String,
    /// `f1x`, `f1y`, `f2x`, `f2y` or `random`.
    pub profile: String,
    #[serde(default = "one")]
    pub scale: f64,
    /// Frequency band in Hz, random profile only.
    pub band: Option<[f64; 2]>,
    /// RMS in newtons, random profile only.
    pub rms: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// A parsed excitation channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    Profile(ForceProfile),
    Random { lo: f64, hi: f64, rms: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Noise standard deviation as a fraction of each channel's std.
    #[serde(default)]
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AkfSection {
    /// Peak force used to size the force random walk.
    pub max_force: Option<f64>,
    /// Sensor noise standard deviation.
    pub noise_std: Option<f64>,
    pub process_noise_force: Option<f64>,
    pub process_noise_state: Option<f64>,
    pub measurement_noise: Option<f64>,
    pub initial_covariance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// FDE band in Hz; defaults to the full one-sided spectrum.
    pub band: Option<[f64; 2]>,
    /// Output directory of the run to score; defaults to `<out>/identify`.
    pub estimate: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "one_repeat")]
    pub repeats: usize,
}

fn one_repeat() -> usize {
    1
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { repeats: 1 }
    }
}

/// Applies `key.path=value` to a parsed table. The value is read as a TOML
/// value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(key, "empty key segment"));
    }
    let mut cur = table;
    for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(&parts[..=depth].join("."), "not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses a table, reporting the full key path of any type error.
    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let value = toml::Value::Table(table);
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::new(
                if key == "." { "<root>" } else { &key },
                e.inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies overrides and resolves relative paths against
    /// the directory holding the file.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg = Self::from_table(table)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let ModelSection::Matrices { m, k, labels } = &mut self.model {
            fix(m);
            fix(k);
            if let Some(l) = labels {
                fix(l);
            }
        }
        if let Some(p) = &mut self.regularization.calibration {
            fix(p);
        }
        if let Some(p) = &mut self.metrics.estimate {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let ModelSection::Beam { .. } = self.model {
            self.beam_spec()?;
        }
        self.newmark()?;
        let masters = labels("partition.masters", &self.partition.masters)?;
        let measured = labels("partition.measured", &self.partition.measured)?;
        if measured.is_empty() {
            return Err(ConfigError::new(
                "partition.measured",
                "at least one measured DOF is required",
            ));
        }
        if !masters.is_empty() {
            if let Some(l) = measured.iter().find(|l| !masters.contains(l)) {
                return Err(ConfigError::new(
                    "partition.measured",
                    format!("`{l}` is not among partition.masters"),
                ));
            }
        }
        let r = &self.reduction;
        for (key, v) in [
            ("reduction.damping_a", r.damping_a),
            ("reduction.damping_b", r.damping_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(
                    key,
                    format!("must be non-negative, got {v}"),
                ));
            }
        }
        let g = &self.regularization;
        if let Some(a) = g.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(ConfigError::new(
                    "regularization.alpha",
                    format!("must be non-negative, got {a}"),
                ));
            }
        }
        if !(g.grid_lo > 0.0 && g.grid_hi > g.grid_lo && g.grid_hi.is_finite()) {
            return Err(ConfigError::new(
                "regularization.grid_lo",
                format!(
                    "need 0 < grid_lo < grid_hi, got {} and {}",
                    g.grid_lo, g.grid_hi
                ),
            ));
        }
        if g.grid_points == 0 || g.grid_points == 2 {
            return Err(ConfigError::new(
                "regularization.grid_points",
                "must be 1 or at least 3",
            ));
        }
        if self.excitation.samples < 2 {
            return Err(ConfigError::new(
                "excitation.samples",
                "need at least two samples",
            ));
        }
        for (i, f) in self.excitation.forces.iter().enumerate() {
            self.excitation(i)?;
            f.label.parse::<DofLabel>().map_err(|e| {
                ConfigError::new(&format!("excitation.forces[{i}].label"), e.to_string())
            })?;
        }
        if !(self.noise.fraction >= 0.0 && self.noise.fraction.is_finite()) {
            return Err(ConfigError::new(
                "noise.fraction",
                format!("must be non-negative, got {}", self.noise.fraction),
            ));
        }
        if let Some([lo, hi]) = self.metrics.band {
            if !(lo >= 0.0 && hi > lo) {
                return Err(ConfigError::new(
                    "metrics.band",
                    format!("need 0 <= lo < hi, got [{lo}, {hi}]"),
                ));
            }
        }
        if self.bench.repeats == 0 {
            return Err(ConfigError::new("bench.repeats", "must be at least 1"));
        }
        Ok(())
    }

    pub fn beam_spec(&self) -> Result<BeamSpec, ConfigError> {
        let ModelSection::Beam {
            length,
            width,
            thickness,
            youngs_modulus,
            density,
            n_elements,
        } = &self.model
        else {
            return Err(ConfigError::new("model.kind", "not a beam model"));
        };
        let d = BeamSpec::default();
        let spec = BeamSpec {
            length: length.unwrap_or(d.length),
            width: width.unwrap_or(d.width),
            thickness: thickness.unwrap_or(d.thickness),
            youngs_modulus: youngs_modulus.unwrap_or(d.youngs_modulus),
            density: density.unwrap_or(d.density),
            n_elements: n_elements.unwrap_or(d.n_elements),
            clamped_end: d.clamped_end,
        };
        spec.validate()
            .map_err(|e| ConfigError::new("model", e.to_string()))?;
        Ok(spec)
    }

    pub fn newmark(&self) -> Result<NewmarkParams, ConfigError> {
        let i = &self.integrator;
        let params = NewmarkParams {
            beta: i.beta,
            delta: i.delta,
            dt: i.dt,
        };
        params.validate().map_err(|e| {
            let key = if !(i.dt > 0.0 && i.dt.is_finite()) {
                "integrator.dt"
            } else {
                "integrator.beta"
            };
            ConfigError::new(key, e.to_string())
        })?;
        Ok(params)
    }

    pub fn masters(&self) -> Vec<DofLabel> {
        labels("partition.masters", &self.partition.masters).expect("validated")
    }

    pub fn measured(&self) -> Vec<DofLabel> {
        labels("partition.measured", &self.partition.measured).expect("validated")
    }

    pub fn is_reduced(&self) -> bool {
        !self.partition.masters.is_empty()
    }

    pub fn excitation(&self, i: usize) -> Result<Excitation, ConfigError> {
        let f = &self.excitation.forces[i];
        let key = |k: &str| format!("excitation.forces[{i}].{k}");
        if f.profile.eq_ignore_ascii_case("random") {
            let [lo, hi] = f
                .band
                .ok_or_else(|| ConfigError::new(&key("band"), "required for the random profile"))?;
            let rms = f
                .rms
                .ok_or_else(|| ConfigError::new(&key("rms"), "required for the random profile"))?;
            if !(rms > 0.0 && rms.is_finite()) {
                return Err(ConfigError::new(
                    &key("rms"),
                    format!("must be positive, got {rms}"),
                ));
            }
            return Ok(Excitation::Random { lo, hi, rms });
        }
        ForceProfile::from_str(&f.profile)
            .map(Excitation::Profile)
            .map_err(|e| ConfigError::new(&key("profile"), e.to_string()))
    }

    pub fn full_model_dir(&self) -> PathBuf {
        self.out.join("full_model")
    }

    pub fn reduced_model_dir(&self) -> PathBuf {
        self.out.join("reduced_model")
    }

    pub fn measurements_path(&self) -> PathBuf {
        self.out.join("measurements.csv")
    }

    pub fn alpha_path(&self) -> PathBuf {
        self.out.join("alpha.toml")
    }
}

fn labels(key: &str, raw: &[String]) -> Result<Vec<DofLabel>, ConfigError> {
    raw.iter()
        .map(|s| {
            s.parse::<DofLabel>()
                .map_err(|e| ConfigError::new(key, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
        [model]
        kind = "chain"
        masses = [1.0, 2.0, 1.5]
        stiffnesses = [100.0, 80.0, 60.0]

        [partition]
        measured = ["2:x"]

        [integrator]
        dt = 0.01
    "#;

    fn table(text: &str) -> toml::Table {
        text.parse().unwrap()
    }

    #[test]
    fn minimal_chain_config_takes_defaults() {
        let cfg = RunConfig::from_table(table(CHAIN)).unwrap();
        assert_eq!(cfg.integrator.beta, 0.25);
        assert_eq!(cfg.integrator.input, InputKind::Acceleration);
        assert_eq!(cfg.reduction.n_modes, 20);
        assert_eq!(cfg.regularization.grid_points, 50);
        assert!(!cfg.is_reduced());
        assert_eq!(cfg.measured(), vec![DofLabel::new(2, "x")]);
    }

    #[test]
    fn type_error_names_nested_key() {
        let mut t = table(CHAIN);
        apply_override(&mut t, "integrator.dt=\"fast\"").unwrap();
        let err = RunConfig::from_table(t).unwrap_err();
        assert_eq!(err.key, "integrator.dt");
    }

    #[test]
    fn unknown_key_is_reported() {
        let mut t = table(CHAIN);
        apply_override(&mut t, "noise.sigma=0.1").unwrap();
        let err = RunConfig::from_table(t).unwrap_err();
        assert!(err.key.starts_with("noise"), "{err}");
        assert!(err.msg.contains("sigma"), "{err}");
    }

    #[test]
    fn overrides_parse_toml_values_and_fall_back_to_strings() {
        let mut t = table(CHAIN);
        apply_override(&mut t, "regularization.alpha=1e-3").unwrap();
        apply_override(&mut t, "integrator.input=displacement").unwrap();
        apply_override(&mut t, "partition.measured=[\"0:x\"]").unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.regularization.alpha, Some(1e-3));
        assert_eq!(cfg.integrator.input, InputKind::Displacement);
        assert_eq!(cfg.measured(), vec![DofLabel::new(0, "x")]);
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut t = table(CHAIN);
        assert!(apply_override(&mut t, "seed").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        assert_eq!(
            apply_override(&mut t, "integrator.dt.x=1").unwrap_err().key,
            "integrator.dt"
        );
    }

    #[test]
    fn measured_outside_masters_is_rejected() {
        let mut t = table(CHAIN);
        apply_override(&mut t, "partition.masters=[\"0:x\", \"1:x\"]").unwrap();
        let err = RunConfig::from_table(t).unwrap_err();
        assert_eq!(err.key, "partition.measured");
    }

    #[test]
    fn semantic_errors_name_their_key() {
        for (assignment, key) in [
            ("integrator.dt=-1.0", "integrator.dt"),
            ("noise.fraction=-0.1", "noise.fraction"),
            ("regularization.grid_points=2", "regularization.grid_points"),
            ("regularization.alpha=-1.0", "regularization.alpha"),
            ("reduction.damping_b=-1.0", "reduction.damping_b"),
            ("bench.repeats=0", "bench.repeats"),
            ("partition.measured=[\"x\"]", "partition.measured"),
        ] {
            let mut t = table(CHAIN);
            apply_override(&mut t, assignment).unwrap();
            let err = RunConfig::from_table(t).unwrap_err();
            assert_eq!(err.key, key, "{assignment}: {err}");
        }
    }

    #[test]
    fn random_force_needs_band_and_rms() {
        let text = format!(
            "{CHAIN}\n[[excitation.forces]]\nlabel = \"2:x\"\nprofile = \"random\"\nrms = 1.0\n"
        );
        let err = RunConfig::from_table(table(&text)).unwrap_err();
        assert_eq!(err.key, "excitation.forces[0].band");
        let text = format!("{CHAIN}\n[[excitation.forces]]\nlabel = \"2:x\"\nprofile = \"f3z\"\n");
        let err = RunConfig::from_table(table(&text)).unwrap_err();
        assert_eq!(err.key, "excitation.forces[0].profile");
    }

    #[test]
    fn beam_fields_default_individually() {
        let text = r#"
            [model]
            kind = "beam"
            thickness = 0.01

            [partition]
            masters = ["25:z", "50:z"]
            measured = ["50:z"]

            [integrator]
            dt = 1e-4
        "#;
        let cfg = RunConfig::from_table(table(text)).unwrap();
        let spec = cfg.beam_spec().unwrap();
        assert_eq!(spec.thickness, 0.01);
        assert_eq!(spec.length, BeamSpec::default().length);
        assert!(cfg.is_reduced());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig::from_table(table(CHAIN)).unwrap();
        cfg.resolve_paths(Path::new("/cases/a"));
        assert_eq!(cfg.out, PathBuf::from("/cases/a/out"));
    }
}
