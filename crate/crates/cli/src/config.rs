//! Run configuration: a single TOML file with defaults for every section.
//! The effective configuration (after defaults) is echoed into the output
//! directory so runs can be reproduced from it.

use agca::bench::{CoarseningMode, RhsSign};
use agca::fem::EvalMode;
use agca::solvers::{KrylovConfig, VCycleConfig};
use agca::stokes::StokesSolveConfig;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    pub levels: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            nx: 8,
            ny: 8,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// "poisson" or a sinker family "1".."6".
    pub family: String,
    pub dr: f64,
    pub omega: f64,
    pub n_sinkers: usize,
    pub eval_mode: EvalMode,
    pub rhs_sign: RhsSign,
    /// Coefficient family used by the scalar validation problem
    /// (`family = "poisson"`).
    pub coeff_family: usize,
    /// Family 6 with the literal product of ball indicators.
    pub xi6_literal_product: bool,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            family: "1".into(),
            dr: 1e4,
            omega: 200.0,
            n_sinkers: 4,
            eval_mode: EvalMode::Analytic,
            rhs_sign: RhsSign::Upward,
            coeff_family: 2,
            xi6_literal_product: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseningSection {
    pub mode: CoarseningMode,
    pub nu: f64,
}

impl Default for CoarseningSection {
    fn default() -> Self {
        CoarseningSection {
            mode: CoarseningMode::Agca,
            nu: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    pub cheby_order: usize,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub min_level: usize,
    pub coarse_tol: f64,
    /// Inner Z-solve tolerance; unset derives `max(1e-6, tol / 100)`.
    pub z_tol: Option<f64>,
    pub flip_schur_sign: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-6,
            restart: 30,
            max_iter: 500,
            cheby_order: 3,
            pre_smooth: 2,
            post_smooth: 2,
            min_level: 0,
            coarse_tol: 1e-8,
            z_tol: None,
            flip_schur_sign: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Also dump the solution fields as CSV.
    pub solution_csv: bool,
    /// Write wall times as 0 for byte-reproducible CSVs.
    pub zero_timings: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            solution_csv: false,
            zero_timings: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub family: usize,
    pub dr: Vec<f64>,
    pub omega: Vec<f64>,
    pub n_sinkers: Vec<usize>,
    pub eval_modes: Vec<EvalMode>,
    pub modes: Vec<CoarseningMode>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            family: 2,
            dr: vec![1.0, 1e2, 1e4, 1e6, 1e8],
            omega: vec![200.0],
            n_sinkers: vec![1],
            eval_modes: vec![EvalMode::Analytic],
            modes: vec![CoarseningMode::Dca, CoarseningMode::Agca],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuSweepSection {
    pub nus: Vec<f64>,
}

impl Default for NuSweepSection {
    fn default() -> Self {
        NuSweepSection {
            nus: vec![0.1, 1.0, 10.0, 1e2, 1e3, f64::INFINITY],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CagcaSection {
    pub family: usize,
    pub macro_sizes: Vec<usize>,
}

impl Default for CagcaSection {
    fn default() -> Self {
        CagcaSection {
            family: 4,
            macro_sizes: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryModelSection {
    pub n_fill_in: f64,
    pub n_restart: usize,
    pub c_agca: f64,
}

impl Default for MemoryModelSection {
    fn default() -> Self {
        MemoryModelSection {
            n_fill_in: 1.0,
            n_restart: 30,
            c_agca: 1.0,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub problem: ProblemSection,
    pub coarsening: CoarseningSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
    pub nu_sweep: NuSweepSection,
    pub cagca: CagcaSection,
    pub memory_model: MemoryModelSection,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            bail!("mesh.nx and mesh.ny must be positive");
        }
        if self.mesh.levels == 0 {
            bail!("mesh.levels must be at least 1");
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            bail!("solver.tol must be in (0, 1), got {}", self.solver.tol);
        }
        if !(2..=4).contains(&self.solver.cheby_order) {
            bail!(
                "solver.cheby_order must be in [2, 4], got {}",
                self.solver.cheby_order
            );
        }
        if self.solver.min_level >= self.mesh.levels {
            bail!(
                "solver.min_level {} must be below mesh.levels {}",
                self.solver.min_level,
                self.mesh.levels
            );
        }
        match self.problem.family.as_str() {
            "poisson" => {
                if !(1..=6).contains(&self.problem.coeff_family) {
                    bail!(
                        "problem.coeff_family must be 1..=6, got {}",
                        self.problem.coeff_family
                    );
                }
            }
            f => {
                let n: usize = f
                    .parse()
                    .map_err(|_| anyhow::anyhow!("problem.family must be \"poisson\" or \"1\"..\"6\", got {f:?}"))?;
                if !(1..=6).contains(&n) {
                    bail!("problem.family must be \"poisson\" or \"1\"..\"6\", got {f:?}");
                }
            }
        }
        if self.problem.dr < 1.0 {
            bail!("problem.dr must be >= 1, got {}", self.problem.dr);
        }
        Ok(())
    }

    /// Sinker family index of the configured problem; the scalar validation
    /// problem borrows `coeff_family` for its coefficient.
    pub fn family_index(&self) -> usize {
        match self.problem.family.as_str() {
            "poisson" => self.problem.coeff_family,
            f => f.parse().expect("validated family"),
        }
    }

    pub fn is_poisson(&self) -> bool {
        self.problem.family == "poisson"
    }

    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            restart: self.solver.restart,
            floor: 1e-13,
        }
    }

    pub fn vcycle(&self) -> VCycleConfig {
        VCycleConfig {
            pre_smooth: self.solver.pre_smooth,
            post_smooth: self.solver.post_smooth,
            cheby_order: self.solver.cheby_order,
            coarse_tol: self.solver.coarse_tol,
            min_level: self.solver.min_level,
        }
    }

    pub fn stokes_cfg(&self) -> StokesSolveConfig {
        StokesSolveConfig {
            krylov: self.krylov(),
            vcycle: self.vcycle(),
            z_tol: self.solver.z_tol,
            flip_schur_sign: self.solver.flip_schur_sign,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
