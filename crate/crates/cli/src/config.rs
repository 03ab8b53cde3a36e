//! Experiment configuration: a hand-editable TOML file describing one
//! problem, the multigrid setup knobs, the iteration controls, and the
//! solve method. Unknown keys are rejected so typos fail loudly, and every
//! omitted key takes the documented default, which the emitted reports echo
//! back fully resolved.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use aggmg_core::dg::{ProblemKind, ProblemSpec};
use aggmg_core::hierarchy::SetupConfig;
use aggmg_core::solver::CycleConfig;

/// How the assembled system is driven to the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Stationary multigrid cycling.
    Mg,
    /// Conjugate gradients preconditioned by one V-cycle.
    Pcg,
    /// Restarted GMRES preconditioned by one V-cycle.
    Pgmres,
    /// Restarted GMRES preconditioned by the block-diagonal inverse only —
    /// the single-level baseline the multigrid runs are compared against.
    BlockJacobiGmres,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Mg => "mg",
            Method::Pcg => "pcg",
            Method::Pgmres => "pgmres",
            Method::BlockJacobiGmres => "block_jacobi_gmres",
        }
    }
}

/// The `[problem]` section: which PDE on which mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub dimension: usize,
    /// Refinement level M: `2^M` elements along each axis.
    pub refinement: u32,
    /// Polynomial degree p.
    pub degree: usize,
    /// Diffusion coefficient override; the kind's default when omitted.
    pub diffusion: Option<f64>,
    /// Péclet number shorthand for convection–diffusion: `0` means pure
    /// diffusion (velocity off), `inf` pure convection, anything else sets
    /// the diffusion to `2/Pe` on the width-2 box. Mutually exclusive with
    /// `diffusion`.
    pub peclet: Option<f64>,
    /// Interior-penalty coefficient override.
    pub penalty: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            kind: ProblemKind::PoissonIp,
            dimension: 3,
            refinement: 3,
            degree: 1,
            diffusion: None,
            peclet: None,
            penalty: None,
        }
    }
}

impl ProblemConfig {
    /// Expand into the assembler's problem description.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let (d, m, p) = (self.dimension, self.refinement, self.degree);
        let mut spec = match self.kind {
            ProblemKind::PoissonIp => ProblemSpec::poisson_ip(d, m, p),
            ProblemKind::PoissonLdg => ProblemSpec::poisson_ldg(d, m, p),
            ProblemKind::Convection => ProblemSpec::convection(d, m, p),
            ProblemKind::ConvectionDiffusion => {
                ProblemSpec::convection_diffusion(d, m, p, self.diffusion.unwrap_or(1.0))
            }
        };
        if let Some(pe) = self.peclet {
            if self.kind != ProblemKind::ConvectionDiffusion {
                bail!("peclet only applies to kind = \"convection_diffusion\"");
            }
            if self.diffusion.is_some() {
                bail!("set either diffusion or peclet, not both");
            }
            if pe == 0.0 {
                spec.velocity = vec![0.0; d];
                spec.diffusion = 1.0;
            } else if pe.is_infinite() && pe > 0.0 {
                spec.diffusion = 0.0;
            } else if pe > 0.0 && pe.is_finite() {
                spec.diffusion = 2.0 / pe;
            } else {
                bail!("peclet must be nonnegative, got {pe}");
            }
        } else if let Some(mu) = self.diffusion {
            spec.diffusion = mu;
        }
        if let Some(s) = self.penalty {
            spec.penalty = Some(s);
        }
        Ok(spec)
    }
}

/// One experiment: problem, setup, cycling, method, seed, output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Seed for every random draw in the setup; copied into `setup.seed`
    /// when the config is resolved.
    pub seed: u64,
    /// Output directory; overridden by `--out`, defaults to the working
    /// directory.
    pub out: Option<String>,
    pub problem: ProblemConfig,
    pub setup: SetupConfig,
    pub cycle: CycleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Mg,
            seed: 0,
            out: None,
            problem: ProblemConfig::default(),
            setup: SetupConfig::default(),
            cycle: CycleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Materialize every default and fold in the command-line overrides, so
    /// the echoed config describes the run completely.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.setup.seed = self.seed;
        if let Some(dir) = out {
            self.out = Some(dir.display().to_string());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.problem.dimension) {
            bail!("dimension must be 1, 2 or 3, got {}", self.problem.dimension);
        }
        self.problem.problem_spec()?;
        self.setup
            .validate()
            .context("invalid [setup] section")?;
        self.cycle
            .validate()
            .context("invalid [cycle] section")?;
        Ok(())
    }
}
