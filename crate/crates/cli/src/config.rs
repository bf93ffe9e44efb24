//! Scenario configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::MatrixJson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CrossedModuleKind {
    #[default]
    #[serde(rename = "GL_ADJ")]
    GlAdj,
    #[serde(rename = "CENTRAL")]
    Central,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Lowest `m` levels spaced ½ below a gap, two slow seeded drives.
    SeededSmooth { strength: f64 },
    /// `diag(levels + drift·sin t)`.
    Commuting { levels: Vec<f64>, drift: Vec<f64> },
    /// `R(t)H₀R(t)†`, `R = exp(−iθK)`, `θ = rate·t + accel·t²`.
    Rotating { h0: MatrixJson, k: MatrixJson, rate: f64, accel: f64 },
    /// `H₀ + tanh((t − t0)/tau)·H₁`.
    AvoidedCrossing { h0: MatrixJson, h1: MatrixJson, t0: f64, tau: f64 },
    /// Natural cubic spline through the rows.
    Table { times: Vec<f64>, matrices: Vec<MatrixJson> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefectSpec {
    /// Multiply `g^ik` by `value`.
    G { i: Vec<usize>, k: Vec<usize>, value: MatrixJson },
    /// Multiply every off-diagonal `h^ij` by `value`.
    H { value: MatrixJson },
    /// Corrupt `η` in one chart.
    Eta { chart: Vec<usize>, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldSpec {
    Zero,
    #[default]
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub duration: f64,
    pub steps: usize,
    /// Extra step counts for a convergence fit; empty skips it.
    pub refinements: Vec<usize>,
    pub samples: usize,
    pub holonomy_steps: usize,
    pub resolution: usize,
    pub surface_levels: Vec<usize>,
    pub cartan_levels: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            duration: 6.0,
            steps: 20_000,
            refinements: Vec::new(),
            samples: 200,
            holonomy_steps: 1024,
            resolution: 8,
            surface_levels: vec![4, 8, 16],
            cartan_levels: vec![10, 20, 40, 80],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub reconstruction: f64,
    pub unitarity: f64,
    pub idempotency: f64,
    pub crossed_module: f64,
    pub identity: f64,
    pub two_transition: f64,
    pub wave_operator: f64,
    pub gluing: f64,
    pub curving_gluing: f64,
    pub boundary: f64,
    pub surface: f64,
    pub order_target: f64,
    pub order_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            reconstruction: 1e-5,
            unitarity: 1e-9,
            idempotency: 1e-9,
            crossed_module: 1e-10,
            identity: 1e-9,
            two_transition: 1e-12,
            wave_operator: 1e-9,
            gluing: 1e-7,
            curving_gluing: 1e-4,
            boundary: 1e-8,
            surface: 1e-6,
            order_target: 3.0,
            order_band: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub report: String,
    pub trace: String,
    pub convergence: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { report: "report.json".into(), trace: "trace.csv".into(), convergence: "convergence.csv".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub crossed_module: CrossedModuleKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Band indices at `t = 0`; defaults to the lowest `m`.
    #[serde(default)]
    pub band: Option<Vec<usize>>,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default)]
    pub defect: Option<DefectSpec>,
    /// Pseudosurface file, relative to the config file.
    #[serde(default)]
    pub pseudosurface: Option<PathBuf>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(p) = &cfg.pseudosurface {
            if p.is_relative() {
                cfg.pseudosurface = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.m == 0 {
            return Err("n and m must be positive".into());
        }
        if self.m > self.n {
            return Err(format!("m = {} exceeds n = {}", self.m, self.n));
        }
        let t = &self.tolerances;
        let named = [
            ("reconstruction", t.reconstruction),
            ("unitarity", t.unitarity),
            ("idempotency", t.idempotency),
            ("crossed_module", t.crossed_module),
            ("identity", t.identity),
            ("two_transition", t.two_transition),
            ("wave_operator", t.wave_operator),
            ("gluing", t.gluing),
            ("curving_gluing", t.curving_gluing),
            ("boundary", t.boundary),
            ("surface", t.surface),
            ("order_band", t.order_band),
        ];
        if let Some((k, v)) = named.iter().find(|(_, v)| v.is_nan() || *v <= 0.0) {
            return Err(format!("tolerance {k} must be positive, got {v}"));
        }
        if let Some(b) = &self.band {
            if b.len() != self.m || b.iter().any(|&k| k >= self.n) {
                return Err(format!("band {b:?} must list {} indices below {}", self.m, self.n));
            }
        }
        if self.grid.duration.is_nan() || self.grid.duration <= 0.0 || self.grid.steps < 4 {
            return Err("grid needs duration > 0 and steps ≥ 4".into());
        }
        Ok(())
    }

    pub fn band(&self) -> Vec<usize> {
        self.band.clone().unwrap_or_else(|| (0..self.m).collect())
    }
}
