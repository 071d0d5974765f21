//! Experiment configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags. The resolved value is echoed into every output.

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    /// Worker threads; 0 means one per logical processor.
    pub workers: usize,
    pub out: String,
    /// Overrides the primary tolerance of the selected command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub problem: ProblemSection,
    pub connect: ConnectSection,
    pub phi: PhiSection,
    pub holder: HolderSection,
    pub weakkam: WeakKamSection,
    pub central: CentralSection,
    pub parabolic: ParabolicSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub bodies: usize,
    pub dim: usize,
    pub kappa: f64,
    /// Empty means unit masses.
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectSection {
    pub radius: f64,
    pub horizon: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiSection {
    pub radius: f64,
    pub samples: usize,
    pub nodes: usize,
    /// Fixed horizon; absent means the free-time potential.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub scales: Vec<f64>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakKamSection {
    /// `collinear` (two bodies on a line) or `planar` (centre-fixed planar pair).
    pub reduced: String,
    pub oracle: String,
    /// `backward` or `forward`.
    pub semigroup: String,
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
    pub exclusion: f64,
    /// Eikonal constant `2 g k` of the planar reduction.
    pub eikonal_constant: f64,
    /// Coarse spacing `h`; the run also uses `h / 2`.
    pub spacing: f64,
    pub step: f64,
    pub phi_nodes: usize,
    pub max_iter: usize,
    pub defect_ratio: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralSection {
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParabolicSection {
    pub horizon: f64,
    pub nodes: usize,
    pub samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            workers: 0,
            out: "wkam-out".into(),
            tol: None,
            problem: ProblemSection::default(),
            connect: ConnectSection::default(),
            phi: PhiSection::default(),
            holder: HolderSection::default(),
            weakkam: WeakKamSection::default(),
            central: CentralSection::default(),
            parabolic: ParabolicSection::default(),
        }
    }
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { bodies: 3, dim: 2, kappa: 0.5, masses: Vec::new() }
    }
}

impl Default for ConnectSection {
    fn default() -> Self {
        Self { radius: 1.0, horizon: 2.0, samples: 100 }
    }
}

impl Default for PhiSection {
    fn default() -> Self {
        Self { radius: 1.0, samples: 4, nodes: 64, horizon: None }
    }
}

impl Default for HolderSection {
    fn default() -> Self {
        Self { scales: vec![0.25, 0.5, 1.0, 2.0, 4.0], nodes: 64 }
    }
}

impl Default for WeakKamSection {
    fn default() -> Self {
        Self {
            reduced: "collinear".into(),
            oracle: "u_minus".into(),
            semigroup: "backward".into(),
            lower: 0.2,
            upper: 20.0,
            half_width: 2.0,
            exclusion: 0.2,
            eikonal_constant: 0.25,
            spacing: 0.2,
            step: 0.5,
            phi_nodes: 16,
            max_iter: 2000,
            defect_ratio: 1.8,
            pairs: 40,
        }
    }
}

impl Default for CentralSection {
    fn default() -> Self {
        Self { restarts: 8 }
    }
}

impl Default for ParabolicSection {
    fn default() -> Self {
        Self { horizon: 1.0, nodes: 2000, samples: 200 }
    }
}

/// Tolerance defaults, used when `tol` is absent.
pub const DEFAULT_CONNECT_TOL: f64 = 0.0;
pub const DEFAULT_PHI_TOL: f64 = 1e-9;
pub const DEFAULT_HOLDER_TOL: f64 = 0.05;
pub const DEFAULT_WEAKKAM_TOL: f64 = 1e-4;
pub const DEFAULT_CENTRAL_TOL: f64 = 1e-8;
pub const DEFAULT_PARABOLIC_TOL: f64 = 1e-3;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    pub fn masses(&self) -> Vec<f64> {
        if self.problem.masses.is_empty() {
            vec![1.0; self.problem.bodies]
        } else {
            self.problem.masses.clone()
        }
    }

    /// Rejects every configuration the selected command cannot run.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        let p = &self.problem;
        if !(p.kappa > 0.0 && p.kappa < 1.0) {
            return usage(format!("kappa must lie in (0, 1), got {}", p.kappa));
        }
        if p.bodies < 2 || p.dim < 1 {
            return usage(format!("need at least two bodies in dimension >= 1, got {} in {}", p.bodies, p.dim));
        }
        if !p.masses.is_empty() && p.masses.len() != p.bodies {
            return usage(format!("{} masses given for {} bodies", p.masses.len(), p.bodies));
        }
        if let Some(m) = p.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return usage(format!("masses must be positive and finite, got {m}"));
        }
        if let Some(t) = self.tol {
            if !(t.is_finite() && t >= 0.0) {
                return usage(format!("tol must be finite and non-negative, got {t}"));
            }
        }
        let positive = |name: &str, v: f64| -> Result<(), CliError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let at_least = |name: &str, v: usize, min: usize| -> Result<(), CliError> {
            if v >= min {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{name} must be at least {min}, got {v}")))
            }
        };
        match self.command.as_str() {
            "connect" => {
                positive("connect.radius", self.connect.radius)?;
                positive("connect.horizon", self.connect.horizon)?;
                at_least("connect.samples", self.connect.samples, 1)?;
            }
            "phi" => {
                positive("phi.radius", self.phi.radius)?;
                if let Some(t) = self.phi.horizon {
                    positive("phi.horizon", t)?;
                }
                at_least("phi.samples", self.phi.samples, 1)?;
                at_least("phi.nodes", self.phi.nodes, 8)?;
            }
            "holder" => {
                if self.holder.scales.len() < 2 {
                    return usage("holder.scales needs at least two scales".into());
                }
                for &s in &self.holder.scales {
                    positive("holder.scales", s)?;
                }
                at_least("holder.nodes", self.holder.nodes, 8)?;
            }
            "weakkam" => {
                let w = &self.weakkam;
                if !matches!(w.reduced.as_str(), "collinear" | "planar") {
                    return usage(format!("weakkam.reduced must be collinear or planar, got {}", w.reduced));
                }
                if !matches!(w.semigroup.as_str(), "backward" | "forward") {
                    return usage(format!("weakkam.semigroup must be backward or forward, got {}", w.semigroup));
                }
                let oracle: wkam_core::weak_kam::KeplerOracle =
                    w.oracle.parse().map_err(|e| CliError::Usage(format!("weakkam.oracle: {e}")))?;
                let planar_oracle = oracle.kind() == wkam_core::weak_kam::ReducedKind::PlanarKeplerCenterfix;
                if planar_oracle != (w.reduced == "planar") {
                    return usage(format!("oracle {} does not belong to the {} reduction", w.oracle, w.reduced));
                }
                positive("weakkam.spacing", w.spacing)?;
                positive("weakkam.step", w.step)?;
                positive("weakkam.defect_ratio", w.defect_ratio)?;
                at_least("weakkam.phi_nodes", w.phi_nodes, 8)?;
                at_least("weakkam.max_iter", w.max_iter, 1)?;
                at_least("weakkam.pairs", w.pairs, 1)?;
                if w.reduced == "collinear" {
                    positive("weakkam.lower", w.lower)?;
                    if !(w.upper > w.lower) {
                        return usage(format!("weakkam.upper {} must exceed lower {}", w.upper, w.lower));
                    }
                } else {
                    positive("weakkam.half_width", w.half_width)?;
                    positive("weakkam.exclusion", w.exclusion)?;
                    positive("weakkam.eikonal_constant", w.eikonal_constant)?;
                }
            }
            "central" => at_least("central.restarts", self.central.restarts, 1)?,
            "parabolic" => {
                positive("parabolic.horizon", self.parabolic.horizon)?;
                at_least("parabolic.nodes", self.parabolic.nodes, 1)?;
                at_least("parabolic.samples", self.parabolic.samples, 1)?;
            }
            other => return usage(format!("unknown command {other:?}")),
        }
        Ok(())
    }
}
