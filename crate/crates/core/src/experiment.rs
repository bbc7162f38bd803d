//! Experiment configurations and the driver that turns one into artifacts on
//! disk: CSV tables and traces, JSON operator and projection files, and a
//! manifest.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advect::{integrate, time_step};
use crate::analysis::{
    assemble_global, conservation_metric, fill_eoc, l2_error, max_cfl, spectrum, spectrum_tensor,
    write_convergence_csv, write_energy_csv, write_spectrum_csv, ConvergenceRow, EnergySample, MaxCflReport,
    SpectrumReport,
};
use crate::error::{Result, SbpError};
use crate::glue::{
    build_projection, build_reduced_projection, intermediate_grid, kozdon_wilcox_check, Face, GluePolicy,
    KozdonWilcoxReport, LmReport, ProjectionFile,
};
use crate::mesh::{Mesh, MeshPattern, MeshSpec, OperatorRegistry, ProjectionDegree};
use crate::sbp1d::{
    verify_sbp, CertificateReport, ConstructionReport, OperatorFile, OperatorKind, SbpTolerances,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Converge,
    Conserve,
    Spectrum,
    MaxCfl,
    BuildOperator,
    BuildProjection,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Converge => "converge",
            ExperimentKind::Conserve => "conserve",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::MaxCfl => "max-cfl",
            ExperimentKind::BuildOperator => "build-operator",
            ExperimentKind::BuildProjection => "build-projection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `2 + sin(2πx) + cos(2πy)`
    #[default]
    SineCos,
    /// `3` for `x ≤ 0.3`, else `1`.
    StepX,
}

impl InitialCondition {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            InitialCondition::SineCos => 2.0 + (2.0 * PI * x).sin() + (2.0 * PI * y).cos(),
            InitialCondition::StepX => {
                if x <= 0.3 {
                    3.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Exact periodic solution `u0(x − β_x t, y − β_y t)`.
    pub fn exact(self, beta: [f64; 2], t: f64) -> impl Fn(f64, f64) -> f64 {
        move |x, y| self.eval((x - beta[0] * t).rem_euclid(1.0), (y - beta[1] * t).rem_euclid(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    pub p: usize,
    /// Node count; only read by `build-operator`.
    #[serde(default, rename = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub pattern: MeshPattern,
    /// Inclusive range of levels `d`; level `d` has `2^d x 2^d` elements.
    pub levels: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CflSearch {
    pub bounds: [f64; 2],
    pub tolerance: f64,
}

impl Default for CflSearch {
    fn default() -> Self {
        Self {
            bounds: [0.1, 10.0],
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    /// Kronecker sum on uniform meshes, dense otherwise.
    #[default]
    Auto,
    Dense,
    Tensor,
}

fn default_glue() -> GluePolicy {
    GluePolicy::GaussMinimal
}
fn one() -> f64 {
    1.0
}
fn unit_speeds() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_t() -> f64 {
    0.1
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub mesh: Option<MeshConfig>,
    /// Node counts of the two faces for `build-projection`.
    #[serde(default)]
    pub faces: Option<[usize; 2]>,
    #[serde(default = "default_glue")]
    pub glue: GluePolicy,
    #[serde(default)]
    pub projection: ProjectionDegree,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "unit_speeds")]
    pub beta: [f64; 2],
    #[serde(default = "one")]
    pub cfl: f64,
    #[serde(default = "default_t")]
    pub t_final: f64,
    #[serde(default)]
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub cfl_search: CflSearch,
    #[serde(default)]
    pub spectrum_method: SpectrumMethod,
    /// Record every `trace_stride`-th step of the energy trace.
    #[serde(default = "one_usize")]
    pub trace_stride: usize,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| SbpError::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SbpError::Configuration(m));
        if !(1..=4).contains(&self.operator.p) {
            return Err(SbpError::UnsupportedDegree(self.operator.p));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.beta.iter().any(|b| !b.is_finite()) || self.beta.iter().all(|&b| b == 0.0) {
            return bad(format!("wave speeds must be finite and not both zero, got {:?}", self.beta));
        }
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return bad(format!("cfl must be positive, got {}", self.cfl));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be >= 0, got {}", self.t_final));
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be >= 1".into());
        }
        let s = self.cfl_search;
        if !(s.bounds[0] > 0.0 && s.bounds[1] > s.bounds[0] && s.tolerance > 0.0) {
            return bad(format!("invalid cfl_search {s:?}"));
        }
        match self.experiment {
            ExperimentKind::BuildOperator => {
                if self.operator.n.is_none() {
                    return bad("build-operator needs operator.N".into());
                }
            }
            ExperimentKind::BuildProjection => {
                if self.faces.is_none() {
                    return bad("build-projection needs faces [N_L, N_R]".into());
                }
            }
            _ => {
                let Some(mesh) = &self.mesh else {
                    return bad(format!("{} needs a mesh", self.experiment.name()));
                };
                if mesh.levels[0] > mesh.levels[1] || mesh.levels[1] > 12 {
                    return bad(format!("invalid level range {:?}", mesh.levels));
                }
            }
        }
        Ok(())
    }

    pub fn mesh_spec(&self, level: u32) -> Result<MeshSpec> {
        let mesh = self
            .mesh
            .as_ref()
            .ok_or_else(|| SbpError::Configuration("experiment has no mesh".into()))?;
        Ok(MeshSpec {
            pattern: mesh.pattern.clone(),
            nx: 1 << level,
            ny: 1 << level,
            kind: self.operator.kind,
            p: self.operator.p,
            glue: self.glue.clone(),
            projection: self.projection,
            sigma: self.sigma,
            beta: self.beta,
        }
        .at_level(level))
    }

    fn levels(&self) -> Vec<u32> {
        self.mesh.as_ref().map_or(Vec::new(), |m| (m.levels[0]..=m.levels[1]).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorCertificate {
    pub certificate: CertificateReport,
    pub construction: Option<ConstructionReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingRecord {
    pub key: String,
    pub degree: usize,
    pub glue_nodes: usize,
    pub identity: bool,
    pub optimization: Option<LmReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConserveSummary {
    pub dofs: usize,
    pub dt: f64,
    pub steps: usize,
    pub mass_initial: f64,
    pub mass_drift_final: f64,
    pub mass_drift_max: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// `max_t |E(t)/E(0) − 1|`.
    pub energy_max_relative_deviation: f64,
    /// Number of steps over which the energy grew.
    pub energy_increases: usize,
    pub energy_max_relative_increase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxCflLevel {
    pub level: u32,
    pub dofs: usize,
    pub method: SpectrumMethod,
    pub report: MaxCflReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionSummary {
    pub degree: usize,
    pub glue_nodes: usize,
    pub condition_residuals: [(f64, f64); 2],
    pub kozdon_wilcox: [KozdonWilcoxReport; 2],
    pub optimization: Option<LmReport>,
}

/// Result payload of one experiment.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Outcome {
    Converge { rows: Vec<ConvergenceRow> },
    Conserve(ConserveSummary),
    Spectrum { method: SpectrumMethod, report: SpectrumReport },
    MaxCfl { levels: Vec<MaxCflLevel>, max_cfl: f64 },
    BuildOperator { certificate: CertificateReport, file: PathBuf },
    BuildProjection(ProjectionSummary),
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Seconds since the Unix epoch when the run finished.
    pub timestamp: u64,
    pub tolerances: ManifestTolerances,
    pub operators: Vec<OperatorCertificate>,
    pub couplings: Vec<CouplingRecord>,
    pub artifacts: Vec<String>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestTolerances {
    pub sbp: SbpTolerances,
    pub projection_feasibility: f64,
    pub conforming_match: f64,
    pub rk_stability_slack: f64,
    pub schur_residual: f64,
}

impl Default for ManifestTolerances {
    fn default() -> Self {
        Self {
            sbp: SbpTolerances::default(),
            projection_feasibility: 1e-8,
            conforming_match: 1e-13,
            rk_stability_slack: 1e-12,
            schur_residual: 1e-8,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn converge(cfg: &ExperimentConfig, reg: &OperatorRegistry, parallel: bool) -> Result<Vec<ConvergenceRow>> {
    let run_level = |level: u32| -> Result<ConvergenceRow> {
        let mesh = Mesh::build(&cfg.mesh_spec(level)?, reg)?;
        let ic = cfg.initial_condition;
        let mut u = mesh.sample(|x, y| ic.eval(x, y));
        integrate(&mesh, &mut u, cfg.t_final, cfg.cfl, |_, _| {})?;
        Ok(ConvergenceRow {
            level,
            dofs: mesh.dofs(),
            l2_error: l2_error(&mesh, &u, ic.exact(cfg.beta, cfg.t_final)),
            eoc: None,
        })
    };
    let levels = cfg.levels();
    let mut rows = if parallel {
        levels.into_par_iter().map(run_level).collect::<Result<Vec<_>>>()?
    } else {
        levels.into_iter().map(run_level).collect::<Result<Vec<_>>>()?
    };
    fill_eoc(&mut rows);
    Ok(rows)
}

/// Long-time run on the finest configured level with an energy and mass trace.
pub fn conserve(cfg: &ExperimentConfig, reg: &OperatorRegistry) -> Result<(ConserveSummary, Vec<EnergySample>)> {
    let level = *cfg.levels().last().expect("validated mesh");
    let mesh = Mesh::build(&cfg.mesh_spec(level)?, reg)?;
    let ic = cfg.initial_condition;
    let u0 = mesh.sample(|x, y| ic.eval(x, y));
    let mut u = u0.clone();
    let (m0, e0) = (mesh.mass(&u0), mesh.energy(&u0));
    let mut trace = Vec::new();
    let mut steps = 0usize;
    let mut drift_max: f64 = 0.0;
    let mut dev_max: f64 = 0.0;
    let mut incr_max: f64 = 0.0;
    let mut increases = 0;
    let mut prev = e0;
    integrate(&mesh, &mut u, cfg.t_final, cfg.cfl, |t, v| {
        let (m, e) = (mesh.mass(v), mesh.energy(v));
        drift_max = drift_max.max((m - m0).abs());
        dev_max = dev_max.max((e / e0 - 1.0).abs());
        if e > prev {
            increases += 1;
            incr_max = incr_max.max((e - prev) / e0);
        }
        prev = e;
        if steps.is_multiple_of(cfg.trace_stride) || t == cfg.t_final {
            trace.push(EnergySample { t, energy: e, mass: m });
        }
        steps += 1;
    })?;
    let summary = ConserveSummary {
        dofs: mesh.dofs(),
        dt: time_step(&mesh, cfg.cfl)?,
        steps: steps - 1,
        mass_initial: m0,
        mass_drift_final: conservation_metric(&mesh, &u0, &u),
        mass_drift_max: drift_max,
        energy_initial: e0,
        energy_final: mesh.energy(&u),
        energy_max_relative_deviation: dev_max,
        energy_increases: increases,
        energy_max_relative_increase: incr_max,
    };
    Ok((summary, trace))
}

fn mesh_spectrum(mesh: &Mesh, method: SpectrumMethod) -> Result<(SpectrumMethod, SpectrumReport)> {
    let uniform = matches!(mesh.spec.pattern, MeshPattern::Uniform { .. });
    match method {
        SpectrumMethod::Tensor => Ok((method, spectrum_tensor(mesh)?)),
        SpectrumMethod::Dense => Ok((method, spectrum(&assemble_global(mesh))?)),
        SpectrumMethod::Auto if uniform => Ok((SpectrumMethod::Tensor, spectrum_tensor(mesh)?)),
        SpectrumMethod::Auto => Ok((SpectrumMethod::Dense, spectrum(&assemble_global(mesh))?)),
    }
}

fn build_operator_file(cfg: &ExperimentConfig, reg: &OperatorRegistry, out: &Path) -> Result<Outcome> {
    let n = cfg.operator.n.expect("validated");
    let op = reg.operator(cfg.operator.kind, cfg.operator.p, n)?;
    let path = out.join("operator.json");
    OperatorFile::from_operator(&op).write(&path)?;
    // re-read and re-certify what was written
    let back = OperatorFile::read(&path)?.to_operator()?;
    let certificate = verify_sbp(&back, SbpTolerances::default());
    if !certificate.passed() {
        return Err(SbpError::Internal("operator file failed re-certification".into()));
    }
    Ok(Outcome::BuildOperator {
        certificate,
        file: PathBuf::from("operator.json"),
    })
}

fn build_projection_file(cfg: &ExperimentConfig, reg: &OperatorRegistry, out: &Path) -> Result<Outcome> {
    let [nl, nr] = cfg.faces.expect("validated");
    let (kind, p) = (cfg.operator.kind, cfg.operator.p);
    let (left, right) = (reg.operator(kind, p, nl)?, reg.operator(kind, p, nr)?);
    let degree = match cfg.projection {
        ProjectionDegree::Full => p,
        ProjectionDegree::Reduced => p - 1,
    };
    let inter = intermediate_grid(&cfg.glue, &left, &right, degree, |n| {
        reg.operator(OperatorKind::DegreePreserving, p, n)
    })?;
    let pair = match cfg.projection {
        ProjectionDegree::Full => build_projection(Face::of(&left), Face::of(&right), &inter, p)?,
        ProjectionDegree::Reduced => build_reduced_projection(Face::of(&left), Face::of(&right), &inter, p)?,
    };
    ProjectionFile::from_pair(&pair).write(&out.join("projection.json"))?;
    Ok(Outcome::BuildProjection(ProjectionSummary {
        degree: pair.degree,
        glue_nodes: pair.inter.len(),
        condition_residuals: pair.condition_residuals(),
        kozdon_wilcox: [
            kozdon_wilcox_check(&pair, left.h_diag()),
            kozdon_wilcox_check(&pair.swapped(), right.h_diag()),
        ],
        optimization: pair.optimization.clone(),
    }))
}

/// Caps the global worker pool at `threads`. Must run before any parallel
/// work starts.
pub fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| SbpError::Configuration(format!("cannot size thread pool: {e}")))
}

/// Runs `cfg`, writing artifacts and `manifest.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let reg = OperatorRegistry::new();
    let mut artifacts = Vec::new();
    let outcome = match cfg.experiment {
        ExperimentKind::Converge => {
            let rows = converge(cfg, &reg, parallel)?;
            write_convergence_csv(&mut create(&out.join("convergence.csv"))?, &rows)?;
            artifacts.push("convergence.csv".to_string());
            Outcome::Converge { rows }
        }
        ExperimentKind::Conserve => {
            let (summary, trace) = conserve(cfg, &reg)?;
            write_energy_csv(&mut create(&out.join("energy.csv"))?, &trace)?;
            artifacts.push("energy.csv".to_string());
            Outcome::Conserve(summary)
        }
        ExperimentKind::Spectrum => {
            let level = *cfg.levels().last().expect("validated mesh");
            let mesh = Mesh::build(&cfg.mesh_spec(level)?, &reg)?;
            let (method, report) = mesh_spectrum(&mesh, cfg.spectrum_method)?;
            write_spectrum_csv(&mut create(&out.join("spectrum.csv"))?, &report.eigenvalues)?;
            artifacts.push("spectrum.csv".to_string());
            Outcome::Spectrum { method, report }
        }
        ExperimentKind::MaxCfl => {
            let run_level = |level: u32| -> Result<MaxCflLevel> {
                let mesh = Mesh::build(&cfg.mesh_spec(level)?, &reg)?;
                let (method, sp) = mesh_spectrum(&mesh, cfg.spectrum_method)?;
                Ok(MaxCflLevel {
                    level,
                    dofs: mesh.dofs(),
                    method,
                    report: max_cfl(&mesh, &sp, cfg.cfl_search.bounds, cfg.cfl_search.tolerance)?,
                })
            };
            let levels = if parallel {
                cfg.levels().into_par_iter().map(run_level).collect::<Result<Vec<_>>>()?
            } else {
                cfg.levels().into_iter().map(run_level).collect::<Result<Vec<_>>>()?
            };
            let max_cfl = levels.iter().map(|l| l.report.max_cfl).fold(f64::INFINITY, f64::min);
            Outcome::MaxCfl { levels, max_cfl }
        }
        ExperimentKind::BuildOperator => {
            artifacts.push("operator.json".to_string());
            build_operator_file(cfg, &reg, out)?
        }
        ExperimentKind::BuildProjection => {
            artifacts.push("projection.json".to_string());
            build_projection_file(cfg, &reg, out)?
        }
    };
    let operators = reg
        .operators()
        .iter()
        .map(|op| OperatorCertificate {
            certificate: verify_sbp(op, SbpTolerances::default()),
            construction: op.report().cloned(),
        })
        .collect();
    let couplings = reg
        .couplings()
        .into_iter()
        .map(|(key, c)| CouplingRecord {
            key,
            degree: c.pair.degree,
            glue_nodes: c.pair.inter.len(),
            identity: c.pair.is_identity(),
            optimization: c.pair.optimization.clone(),
        })
        .collect();
    let manifest = Manifest {
        tool: "sbp-dp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        tolerances: ManifestTolerances::default(),
        operators,
        couplings,
        artifacts,
        outcome,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment":"converge","operator":{"kind":"classical","p":2},"mesh":{"pattern":{"type":"uniform","n":10},"levels":[1,1]},"bogus":1}"#,
        )
        .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn defaults_and_hash() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"converge","operator":{"kind":"degree_preserving","p":3},"mesh":{"pattern":{"type":"uniform","n":22},"levels":[1,4]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.glue, GluePolicy::GaussMinimal);
        assert_eq!((cfg.sigma, cfg.cfl, cfg.t_final), (1.0, 1.0, 0.1));
        assert_eq!(cfg.hash().len(), 64);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn missing_mesh_is_a_validation_error() {
        let err = ExperimentConfig::from_json(r#"{"experiment":"spectrum","operator":{"kind":"classical","p":2}}"#)
            .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn step_is_closed_on_the_left() {
        assert_eq!(InitialCondition::StepX.eval(0.3, 0.0), 3.0);
        assert_eq!(InitialCondition::StepX.eval(0.3 + 1e-15, 0.0), 1.0);
        let ex = InitialCondition::SineCos.exact([1.0, 1.0], 0.25);
        assert!((ex(0.1, 0.2) - InitialCondition::SineCos.eval(0.85, 0.95)).abs() < 1e-14);
    }
}
