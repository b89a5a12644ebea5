//! Experiment configuration: TOML schema, defaults, `key=value` overrides,
//! validation, the resolved echo and its hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::SceneGrid;
use crate::dielectric::{BumpSpec, NominalSpectrum};
use crate::propagation::{ArrayGeometry, FrequencyPlan, MediumChannels};
use crate::relaxation_field::{LogTauGrid, MaternParams, Smoothness};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumConfig {
    pub eps_inf: f64,
    /// Centre of the nominal relaxation bump, seconds.
    pub center_tau: f64,
    /// Bump width in u = ln τ units.
    pub width: f64,
    /// Static increment Σ w ḡ = ε_s − ε∞.
    pub strength: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        let b = BumpSpec::default();
        Self {
            eps_inf: b.eps_inf,
            center_tau: b.center_tau,
            width: b.width,
            strength: b.strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub sigma_g: f64,
    pub nu: f64,
    /// Base correlation scale on the u-axis.
    pub ell: f64,
    /// Multiplier on `ell`.
    pub ell_scale: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub points: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            sigma_g: 0.03,
            nu: 1.5,
            ell: 1.0,
            ell_scale: 1.0,
            tau_min: 1e-10,
            tau_max: 1e-7,
            points: 128,
        }
    }
}

impl FieldConfig {
    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.sigma_g, self.nu, self.ell * self.ell_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub channels: usize,
    pub f0: f64,
    pub delta_f: f64,
    /// Coding coefficients n_m; linear 0..M−1 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coding: Option<Vec<f64>>,
    /// Element spacing in nominal-medium wavelengths at f0.
    pub spacing_wavelengths: f64,
    /// Explicit channel positions (m); overrides the uniform layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    /// Per-channel gains G_m; all ones when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            channels: 10,
            f0: 1e9,
            delta_f: 2e6,
            coding: None,
            spacing_wavelengths: 0.5,
            positions: None,
            gains: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneLayout {
    Polar,
    Cartesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPatch {
    Center,
    EdgeLeft,
    EdgeRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub layout: SceneLayout,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub n_theta: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub n_z: usize,
    pub sigma_beta_sq: f64,
    pub target: TargetPatch,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            layout: SceneLayout::Polar,
            theta_min_deg: -30.0,
            theta_max_deg: 30.0,
            n_theta: 5,
            r_min: 0.1,
            r_max: 0.4,
            n_r: 5,
            x_min: -0.2,
            x_max: 0.2,
            n_x: 5,
            z_min: 0.1,
            z_max: 0.4,
            n_z: 5,
            sigma_beta_sq: 1.0,
            target: TargetPatch::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_mc: 2000,
            seed: 20260315,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub permittivity_covariance: f64,
    pub wavenumber_covariance: f64,
    pub wavenumber_linearization: f64,
    pub local_covariance: f64,
    pub steering_linearization: f64,
    pub rmed: f64,
    pub rc: f64,
    pub hermitian_residual: f64,
    /// Lower bound on λ_min / λ_max.
    pub min_eigenvalue: f64,
    pub r_eff_gap: f64,
    pub eta_gap: f64,
    pub p_rho_gap: f64,
    pub closure: f64,
    pub kl_r_eff_gap: f64,
    /// Passing metrics with less relative slack than this are flagged.
    pub near_threshold_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            permittivity_covariance: 0.05,
            wavenumber_covariance: 0.05,
            wavenumber_linearization: 0.05,
            local_covariance: 0.08,
            steering_linearization: 0.08,
            rmed: 0.08,
            rc: 0.08,
            hermitian_residual: 1e-12,
            min_eigenvalue: -1e-10,
            r_eff_gap: 0.05,
            eta_gap: 0.01,
            p_rho_gap: 0.0,
            closure: 1e-12,
            kl_r_eff_gap: 1e-10,
            near_threshold_slack: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalConfig {
    /// Largest truncation order; the full grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub sigmas: Vec<f64>,
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub nus: Vec<f64>,
    pub ell_scales: Vec<f64>,
    pub matern_sigmas: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.01, 0.03, 0.05],
            counts: vec![200, 500, 1000, 2000],
            seeds: (20260315..20260320).collect(),
            nus: vec![0.5, 1.5, 2.5],
            ell_scales: vec![0.5, 1.0, 2.0],
            matern_sigmas: vec![0.03, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rho: f64,
    pub medium: MediumConfig,
    pub field: FieldConfig,
    pub system: SystemConfig,
    pub scene: SceneConfig,
    pub mc: McConfig,
    pub thresholds: Thresholds,
    pub modal: ModalConfig,
    pub scan: ScanConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rho: 0.9,
            medium: MediumConfig::default(),
            field: FieldConfig::default(),
            system: SystemConfig::default(),
            scene: SceneConfig::default(),
            mc: McConfig::default(),
            thresholds: Thresholds::default(),
            modal: ModalConfig::default(),
            scan: ScanConfig::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(field, format!("must be > 0 (got {v})")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parse TOML text, apply `key=value` overrides, validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fully resolved config as TOML; loading it back yields `self`.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the resolved echo.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.echo()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho", format!("must lie in (0, 1) (got {})", self.rho)));
        }
        let m = &self.medium;
        if !(m.eps_inf >= 1.0) {
            return Err(Error::config("medium.eps_inf", format!("NominalSpectrum invariant violated: eps_inf must be >= 1 (got {})", m.eps_inf)));
        }
        positive("medium.center_tau", m.center_tau)?;
        positive("medium.width", m.width)?;
        if !(m.strength >= 0.0) {
            return Err(Error::config("medium.strength", "must be >= 0"));
        }

        let f = &self.field;
        self.field.matern()?;
        Smoothness::from_nu(f.nu)?;
        positive("field.ell_scale", f.ell_scale)?;
        positive("field.tau_min", f.tau_min)?;
        if !(f.tau_max > f.tau_min) {
            return Err(Error::config("field.tau_max", "must exceed field.tau_min"));
        }
        if f.points < 2 {
            return Err(Error::config("field.points", "LogTauGrid invariant violated: need at least 2 points"));
        }

        let s = &self.system;
        if s.channels == 0 {
            return Err(Error::config("system.channels", "must be >= 1"));
        }
        positive("system.f0", s.f0)?;
        positive("system.spacing_wavelengths", s.spacing_wavelengths)?;
        for (name, v) in [("system.coding", &s.coding), ("system.positions", &s.positions), ("system.gains", &s.gains)] {
            if let Some(v) = v {
                if v.len() != s.channels {
                    return Err(Error::config(name, format!("expected {} entries, found {}", s.channels, v.len())));
                }
            }
        }

        let sc = &self.scene;
        match sc.layout {
            SceneLayout::Polar => {
                positive("scene.r_min", sc.r_min)?;
                if sc.n_theta == 0 || sc.n_r == 0 {
                    return Err(Error::config("scene.n_theta", "SceneGrid invariant violated: grid sizes must be >= 1"));
                }
            }
            SceneLayout::Cartesian => {
                positive("scene.z_min", sc.z_min)?;
                if sc.n_x == 0 || sc.n_z == 0 {
                    return Err(Error::config("scene.n_x", "SceneGrid invariant violated: grid sizes must be >= 1"));
                }
            }
        }
        if !(sc.sigma_beta_sq >= 0.0) {
            return Err(Error::config("scene.sigma_beta_sq", "must be >= 0"));
        }

        if self.mc.n_mc < 2 {
            return Err(Error::config("mc.n_mc", format!("ExperimentConfig invariant violated: n_mc must be >= 2 (got {})", self.mc.n_mc)));
        }

        let t = &self.thresholds;
        for (name, v) in [
            ("thresholds.permittivity_covariance", t.permittivity_covariance),
            ("thresholds.wavenumber_covariance", t.wavenumber_covariance),
            ("thresholds.wavenumber_linearization", t.wavenumber_linearization),
            ("thresholds.local_covariance", t.local_covariance),
            ("thresholds.steering_linearization", t.steering_linearization),
            ("thresholds.rmed", t.rmed),
            ("thresholds.rc", t.rc),
            ("thresholds.hermitian_residual", t.hermitian_residual),
            ("thresholds.r_eff_gap", t.r_eff_gap),
            ("thresholds.eta_gap", t.eta_gap),
            ("thresholds.closure", t.closure),
            ("thresholds.kl_r_eff_gap", t.kl_r_eff_gap),
        ] {
            positive(name, v)?;
        }
        if !(t.p_rho_gap >= 0.0) {
            return Err(Error::config("thresholds.p_rho_gap", "must be >= 0"));
        }
        if !(t.min_eigenvalue <= 0.0) {
            return Err(Error::config("thresholds.min_eigenvalue", "must be <= 0"));
        }
        if !(t.near_threshold_slack >= 0.0) {
            return Err(Error::config("thresholds.near_threshold_slack", "must be >= 0"));
        }
        if self.modal.max_order == Some(0) {
            return Err(Error::config("modal.max_order", "must be >= 1"));
        }
        if self.scan.counts.iter().any(|&n| n < 2) {
            return Err(Error::config("scan.counts", "every count must be >= 2"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<LogTauGrid> {
        LogTauGrid::from_tau_range(self.field.tau_min, self.field.tau_max, self.field.points)
    }

    pub fn spectrum(&self, grid: &LogTauGrid) -> Result<NominalSpectrum> {
        NominalSpectrum::gaussian_bump(
            grid,
            &BumpSpec {
                eps_inf: self.medium.eps_inf,
                center_tau: self.medium.center_tau,
                width: self.medium.width,
                strength: self.medium.strength,
            },
        )
    }

    pub fn plan(&self) -> Result<FrequencyPlan> {
        match &self.system.coding {
            Some(c) => FrequencyPlan::new(self.system.f0, self.system.delta_f, c.clone()),
            None => FrequencyPlan::linear(self.system.f0, self.system.delta_f, self.system.channels),
        }
    }

    /// Array geometry; the default spacing uses the nominal medium at f0.
    pub fn geometry(&self, spectrum: &NominalSpectrum, grid: &LogTauGrid) -> Result<ArrayGeometry> {
        match &self.system.positions {
            Some(p) => ArrayGeometry::new(p.clone()),
            None => {
                let eps = crate::dielectric::nominal_permittivity(spectrum, grid, 2.0 * std::f64::consts::PI * self.system.f0)?;
                ArrayGeometry::uniform_in_medium(self.system.channels, self.system.f0, eps, self.system.spacing_wavelengths)
            }
        }
    }

    pub fn medium_channels(&self, spectrum: &NominalSpectrum, grid: &LogTauGrid) -> Result<MediumChannels> {
        MediumChannels::new(&self.plan()?, spectrum, grid)
    }

    pub fn gains(&self) -> Vec<f64> {
        self.system.gains.clone().unwrap_or_else(|| vec![1.0; self.system.channels])
    }

    pub fn scene_grid(&self) -> Result<SceneGrid> {
        let s = &self.scene;
        let gains = self.gains();
        match s.layout {
            SceneLayout::Polar => SceneGrid::polar(
                (s.theta_min_deg.to_radians(), s.theta_max_deg.to_radians()),
                s.n_theta,
                (s.r_min, s.r_max),
                s.n_r,
                s.sigma_beta_sq,
                &gains,
            ),
            SceneLayout::Cartesian => {
                SceneGrid::cartesian((s.x_min, s.x_max), s.n_x, (s.z_min, s.z_max), s.n_z, s.sigma_beta_sq, &gains)
            }
        }
    }

    pub fn target_index(&self, scene: &SceneGrid) -> usize {
        match self.scene.target {
            TargetPatch::Center => scene.center(),
            TargetPatch::EdgeLeft => scene.edge_left(),
            TargetPatch::EdgeRight => scene.edge_right(),
        }
    }
}

/// Apply `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::ConfigParse(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::ConfigParse(format!("override `{spec}` has an empty key")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::ConfigParse(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
