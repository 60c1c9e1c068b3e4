//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpSpec};
use crate::pde::ProblemSpec;
use crate::sampler::Regularizer;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemChoice {
    Supervised,
    Poisson,
    Helmholtz { kx: f64, ky: f64 },
    Burgers { nu: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemChoice,
    pub n_balls: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub coverage_factor: f64,
    /// Nodes per axis of the closed evaluation grid.
    pub eval_grid: usize,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemChoice::Helmholtz { kx: 4.0, ky: 1.0 },
            n_balls: 5,
            hidden: vec![10, 10],
            activation: Activation::Tanh,
            coverage_factor: 1.05,
            eval_grid: 129,
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        match self.problem {
            ProblemChoice::Supervised => Ok(ProblemSpec::supervised_fit()),
            ProblemChoice::Poisson => Ok(ProblemSpec::poisson()),
            ProblemChoice::Helmholtz { kx, ky } => ProblemSpec::helmholtz(kx, ky),
            ProblemChoice::Burgers { nu } => ProblemSpec::burgers(nu),
        }
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(2, self.hidden.clone(), 1, self.activation)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `key = value` lines; `#` starts a comment. Coefficients given
    /// before or after `problem` apply to it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut problem_name: Option<(usize, String)> = None;
        let (mut kx, mut ky, mut nu) = (4.0, 1.0, 0.01 / std::f64::consts::PI);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |message: String| Error::Config { line, message };
            let num = || value.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
            let count = || value.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            let t = &mut cfg.train;
            match key {
                "problem" => problem_name = Some((line, value.to_string())),
                "kx" => kx = num()?,
                "ky" => ky = num()?,
                "nu" => nu = num()?,
                "balls" => cfg.n_balls = count()?,
                "hidden" => {
                    cfg.hidden = value
                        .split(',')
                        .map(|w| w.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(format!("hidden: {e}")))?
                }
                "activation" => {
                    cfg.activation =
                        Activation::parse(value).ok_or_else(|| err(format!("unknown activation {value:?}")))?
                }
                "coverage_factor" => cfg.coverage_factor = num()?,
                "eval_grid" => cfg.eval_grid = count()?,
                "out" => cfg.out_dir = PathBuf::from(value),
                "outer_iterations" => t.outer_iterations = count()?,
                "n_interior" => t.n_interior = count()?,
                "n_boundary" => t.n_boundary = count()?,
                "ascent_inner_steps" => t.ascent_inner_steps = count()?,
                "beta" => t.beta = if value == "auto" { None } else { Some(num()?) },
                "regularizer" => {
                    t.regularizer =
                        Regularizer::parse(value).ok_or_else(|| err(format!("unknown regularizer {value:?}")))?
                }
                "lr0" => t.lr0 = num()?,
                "lr_decay" => t.lr_decay = num()?,
                "n_mc" => t.n_mc = count()?,
                "eta0" => t.eta0 = num()?,
                "eta_min" => t.eta_min = num()?,
                "eta_max" => t.eta_max = num()?,
                "max_lm_solves" => t.max_lm_solves = count()?,
                "dense_threshold" => t.solver.dense_threshold = count()?,
                "cg_tol" => t.solver.cg_tol = num()?,
                "resample_every" => t.resample_every = count()?,
                "batch_interior" => t.batch_interior = Some(count()?),
                "batch_boundary" => t.batch_boundary = Some(count()?),
                "n_holdout" => t.n_holdout = count()?,
                "kl_cells" => t.kl_cells = count()?,
                "log_every" => t.log_every = count()?,
                "record_wall_time" => {
                    t.record_wall_time = value.parse().map_err(|e| err(format!("{key}: {e}")))?
                }
                "seed" => t.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if let Some((line, name)) = problem_name {
            cfg.problem = match name.as_str() {
                "supervised" => ProblemChoice::Supervised,
                "poisson" => ProblemChoice::Poisson,
                "helmholtz" => ProblemChoice::Helmholtz { kx, ky },
                "burgers" => ProblemChoice::Burgers { nu },
                other => return Err(Error::Config { line, message: format!("unknown problem `{other}`") }),
            };
        } else if let ProblemChoice::Helmholtz { .. } = cfg.problem {
            cfg.problem = ProblemChoice::Helmholtz { kx, ky };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: &str| Err(Error::Config { line: 0, message: message.into() });
        if self.n_balls == 0 {
            return bad("balls must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.coverage_factor >= 1.0) {
            return bad("coverage_factor must be at least 1");
        }
        if self.eval_grid < 2 {
            return bad("eval_grid must be at least 2");
        }
        self.train.validate().map_err(|e| Error::Config { line: 0, message: e.to_string() })
    }
}
