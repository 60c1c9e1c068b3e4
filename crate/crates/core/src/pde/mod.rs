//! Problem definitions, residual operators and reference solutions.

mod burgers;
mod grid_io;
mod helmholtz;

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{DomainBox, PointSet, TensorGrid};
use crate::mlp::DerivativeBundle;
use crate::rng::stream_rng;

pub use burgers::{burgers_reference, burgers_reference_at};
pub use grid_io::{read_grid_csv, write_grid_csv};
pub use helmholtz::{helmholtz_reference, helmholtz_richardson, FdSolution, REFERENCE_CELLS};

/// Boundary membership tolerance on box faces.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemKind {
    /// Least-squares fit of `sin(4x) sin(y)`.
    SupervisedFit,
    /// `Δu = f` with manufactured solution `sin(πx) sin(πy)`.
    Poisson,
    /// `Δu + k_x k_y u = −k_x k_y sin(k_x x) sin(k_y y)`, zero Dirichlet data.
    Helmholtz { kx: f64, ky: f64 },
    /// `u_t + u u_x − ν u_xx = 0` on `(x, t)`, `u(x, 0) = −sin(πx)`, `u(±1, t) = 0`.
    Burgers { nu: f64 },
}

impl ProblemKind {
    /// Whether the interior residual uses spatial derivatives of the field.
    pub fn needs_derivatives(&self) -> bool {
        !matches!(self, Self::SupervisedFit)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SupervisedFit => "supervised",
            Self::Poisson => "poisson",
            Self::Helmholtz { .. } => "helmholtz",
            Self::Burgers { .. } => "burgers",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub domain: DomainBox,
    pub kind: ProblemKind,
}

/// Residual components at one point and their linearization in the bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualEval {
    pub value: Vec<f64>,
    /// One cotangent per residual component: `∂r_c/∂(value, grad, hess)`.
    pub cotangents: Vec<DerivativeBundle>,
}

impl ProblemSpec {
    pub fn new(domain: DomainBox, kind: ProblemKind) -> Result<Self> {
        let ok = match kind {
            ProblemKind::Helmholtz { kx, ky } => kx > 0.0 && ky > 0.0,
            ProblemKind::Burgers { nu } => nu > 0.0,
            _ => true,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("bad coefficients for {kind:?}")));
        }
        if domain.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: domain.dim() });
        }
        Ok(Self { domain, kind })
    }

    pub fn supervised_fit() -> Self {
        Self { domain: DomainBox::unit(2), kind: ProblemKind::SupervisedFit }
    }

    pub fn poisson() -> Self {
        Self { domain: DomainBox::unit(2), kind: ProblemKind::Poisson }
    }

    pub fn helmholtz(kx: f64, ky: f64) -> Result<Self> {
        Self::new(DomainBox::unit(2), ProblemKind::Helmholtz { kx, ky })
    }

    pub fn burgers(nu: f64) -> Result<Self> {
        Self::new(DomainBox::new(vec![-1.0, 0.0], vec![1.0, 1.0])?, ProblemKind::Burgers { nu })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Right-hand side `f` of the interior equation (the target for a fit).
    pub fn forcing(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::SupervisedFit => (4.0 * x[0]).sin() * x[1].sin(),
            ProblemKind::Poisson => -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
            ProblemKind::Helmholtz { kx, ky } => -kx * ky * (kx * x[0]).sin() * (ky * x[1]).sin(),
            ProblemKind::Burgers { .. } => 0.0,
        }
    }

    /// Closed-form solution, where one exists.
    pub fn exact(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            ProblemKind::SupervisedFit => Some(self.forcing(x)),
            ProblemKind::Poisson => Some((PI * x[0]).sin() * (PI * x[1]).sin()),
            _ => None,
        }
    }

    /// Faces carrying boundary data, as `(axis, upper)`. Burgers constrains
    /// both spatial faces and the initial-time face.
    pub fn constrained_faces(&self) -> Vec<(usize, bool)> {
        match self.kind {
            ProblemKind::Burgers { .. } => vec![(0, false), (0, true), (1, false)],
            _ => (0..self.dim()).flat_map(|k| [(k, false), (k, true)]).collect(),
        }
    }

    pub fn on_constrained_boundary(&self, x: &[f64]) -> bool {
        self.constrained_faces()
            .iter()
            .any(|&(k, upper)| self.domain.on_face(x, k, upper, BOUNDARY_TOL))
    }

    /// Interior residual `R u − f` from the network bundle at `x`.
    pub fn residual(&self, bundle: &DerivativeBundle, x: &[f64]) -> Result<ResidualEval> {
        let d = self.dim();
        check_dim(d, x.len())?;
        check_dim(d, bundle.input_dim)?;
        if bundle.output_dim != 1 {
            return Err(Error::KindMismatch(format!(
                "{} expects a scalar field, got {} outputs",
                self.kind.name(),
                bundle.output_dim
            )));
        }
        let u = bundle.value[0];
        let mut cot = DerivativeBundle::zeros(d, 1);
        let value = match self.kind {
            ProblemKind::SupervisedFit => {
                cot.value[0] = 1.0;
                u - self.forcing(x)
            }
            ProblemKind::Poisson => {
                for k in 0..d {
                    *cot.hess_mut(0, k, k) = 1.0;
                }
                bundle.laplacian(0) - self.forcing(x)
            }
            ProblemKind::Helmholtz { kx, ky } => {
                cot.value[0] = kx * ky;
                for k in 0..d {
                    *cot.hess_mut(0, k, k) = 1.0;
                }
                bundle.laplacian(0) + kx * ky * u - self.forcing(x)
            }
            ProblemKind::Burgers { nu } => {
                let ux = bundle.grad_at(0, 0);
                let ut = bundle.grad_at(0, 1);
                let uxx = bundle.hess_at(0, 0, 0);
                cot.value[0] = ux;
                *cot.grad_mut(0, 0) = u;
                *cot.grad_mut(0, 1) = 1.0;
                *cot.hess_mut(0, 0, 0) = -nu;
                ut + u * ux - nu * uxx
            }
        };
        Ok(ResidualEval { value: vec![value], cotangents: vec![cot] })
    }

    /// Prescribed value `g` on the constrained boundary.
    pub fn boundary_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if !self.on_constrained_boundary(x) {
            return Err(Error::NotOnBoundary { point: x.to_vec() });
        }
        Ok(match self.kind {
            ProblemKind::SupervisedFit => self.forcing(x),
            ProblemKind::Poisson | ProblemKind::Helmholtz { .. } => 0.0,
            ProblemKind::Burgers { .. } => {
                let spatial = self.domain.on_face(x, 0, false, BOUNDARY_TOL)
                    || self.domain.on_face(x, 0, true, BOUNDARY_TOL);
                if spatial {
                    0.0
                } else {
                    -(PI * x[0]).sin()
                }
            }
        })
    }

    pub fn boundary_residual(&self, value: f64, x: &[f64]) -> Result<f64> {
        Ok(value - self.boundary_value(x)?)
    }

    /// `n` points on the constrained faces, each face chosen with probability
    /// proportional to its measure. Point `i` uses its own random stream.
    pub fn sample_boundary(&self, n: usize, seed: u64) -> PointSet {
        let faces = self.constrained_faces();
        let measures: Vec<f64> = faces.iter().map(|&(k, _)| self.domain.face_measure(k)).collect();
        let total: f64 = measures.iter().sum();
        let d = self.dim();
        let coords: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let mut pick = rng.gen::<f64>() * total;
                let mut f = faces.len() - 1;
                for (j, m) in measures.iter().enumerate() {
                    if pick < *m {
                        f = j;
                        break;
                    }
                    pick -= m;
                }
                let (k, upper) = faces[f];
                let mut x = vec![0.0; d];
                self.domain.sample_face(&mut rng, k, upper, &mut x);
                x
            })
            .collect();
        PointSet::from_flat(d, coords).expect("whole points")
    }

    /// Reference values on a closed tensor grid with `n` nodes per axis.
    ///
    /// Helmholtz requires `n − 1` to divide [`REFERENCE_CELLS`].
    pub fn reference_grid(&self, n: usize) -> Result<(PointSet, Vec<f64>)> {
        if n < 2 {
            return Err(Error::InvalidArgument("reference grid needs at least 2 nodes per axis".into()));
        }
        let points = TensorGrid::closed(&self.domain, &[n, n]).points();
        let values = match self.kind {
            ProblemKind::SupervisedFit | ProblemKind::Poisson => {
                points.iter().map(|x| self.exact(x).expect("closed form")).collect()
            }
            ProblemKind::Helmholtz { .. } => helmholtz_richardson(self, REFERENCE_CELLS, n)?,
            ProblemKind::Burgers { .. } => burgers_reference(self, &points)?,
        };
        Ok((points, values))
    }

    /// [`Self::reference_grid`] backed by a CSV cache in `dir`.
    pub fn cached_reference_grid(&self, n: usize, dir: &Path) -> Result<(PointSet, Vec<f64>, bool)> {
        let path = dir.join(self.cache_name(n));
        if path.exists() {
            let (points, values) = read_grid_csv(&path)?;
            if points.len() == n * n {
                return Ok((points, values, true));
            }
        }
        let (points, values) = self.reference_grid(n)?;
        std::fs::create_dir_all(dir)?;
        write_grid_csv(&path, self.axis_names(), &points, &values)?;
        Ok((points, values, false))
    }

    pub fn axis_names(&self) -> [&'static str; 2] {
        match self.kind {
            ProblemKind::Burgers { .. } => ["x", "t"],
            _ => ["x", "y"],
        }
    }

    fn cache_name(&self, n: usize) -> String {
        let coeffs = match self.kind {
            ProblemKind::Helmholtz { kx, ky } => format!("_kx{kx:e}_ky{ky:e}"),
            ProblemKind::Burgers { nu } => format!("_nu{nu:e}"),
            _ => String::new(),
        };
        format!("{}{coeffs}_n{n}.csv", self.kind.name())
    }
}

/// `‖pred − reference‖₂ / ‖reference‖₂`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_dim(reference.len(), pred.len())?;
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroReferenceNorm);
    }
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((num / den).sqrt())
}
