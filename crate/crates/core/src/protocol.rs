//! Adaptive deadzone protocol.
//!
//! Each agent `i` runs
//!
//! ```text
//! ρ̇ᵢ = ζᵢᵀ P B Bᵀ P ζᵢ   if ζᵢᵀ P ζᵢ ≥ d
//! ρ̇ᵢ = 0               if ζᵢᵀ P ζᵢ < d
//! uᵢ = −ρᵢ Bᵀ P ζᵢ
//! ```
//!
//! where `P` solves the Riccati equation for `(A, B)` and `0 < d < δ̄` with
//! `δ̄ = δ² λ_min(P)`. Nothing here depends on the graph or the agent count.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::LaplacianMatrix;
use crate::linalg::{min_eigenvalue_sym, solve_care, AgentModel, LinalgError};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("deadzone threshold d = {d} must satisfy 0 < d < δ̄ = δ²·λ_min(P) = {delta_bar}")]
    DeadzoneOutOfRange { d: f64, delta_bar: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Target coherency level `δ`, ellipsoid level `δ̄` and deadzone threshold `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceSpec {
    pub delta: f64,
    pub delta_bar: f64,
    pub d: f64,
}

impl CoherenceSpec {
    /// Smallest `δ` compatible with a given `d`, i.e. the `δ` with `δ̄ = d`.
    pub fn implied_min_delta(d: f64, lambda_min_p: f64) -> f64 {
        (d / lambda_min_p).sqrt()
    }
}

/// Builds the coherence spec for `P`; `d` defaults to `δ̄ / 2`.
pub fn make_spec(
    delta: f64,
    p: &DMatrix<f64>,
    d: Option<f64>,
) -> Result<CoherenceSpec, ProtocolError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(ProtocolError::Argument(format!(
            "coherency level δ = {delta} must be positive"
        )));
    }
    let lambda_min = min_eigenvalue_sym(p)?;
    if lambda_min <= 0.0 {
        return Err(ProtocolError::Argument(format!(
            "P is not positive definite (λ_min = {lambda_min})"
        )));
    }
    let delta_bar = delta * delta * lambda_min;
    let d = d.unwrap_or(delta_bar / 2.0);
    if !(d > 0.0 && d < delta_bar) {
        return Err(ProtocolError::DeadzoneOutOfRange { d, delta_bar });
    }
    Ok(CoherenceSpec {
        delta,
        delta_bar,
        d,
    })
}

/// `P` together with the cached products used on every evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    p: DMatrix<f64>,
    btp: DMatrix<f64>,
    pbbtp: DMatrix<f64>,
    spec: CoherenceSpec,
}

impl ProtocolParams {
    pub fn new(
        p: DMatrix<f64>,
        b: &DMatrix<f64>,
        spec: CoherenceSpec,
    ) -> Result<Self, ProtocolError> {
        if !p.is_square() || p.nrows() != b.nrows() {
            return Err(ProtocolError::Argument(format!(
                "P is {:?} but B is {:?}",
                p.shape(),
                b.shape()
            )));
        }
        let btp = b.transpose() * &p;
        let pbbtp = btp.transpose() * &btp;
        Ok(Self {
            p,
            btp,
            pbbtp,
            spec,
        })
    }

    /// Solves the Riccati equation for the model and fixes the thresholds.
    ///
    /// With only `d` given, `δ` is chosen so that `δ̄ = 2d`.
    pub fn design(
        model: &AgentModel,
        delta: Option<f64>,
        d: Option<f64>,
    ) -> Result<Self, ProtocolError> {
        let care = solve_care(model.a(), model.b())?;
        let delta = match (delta, d) {
            (Some(delta), _) => delta,
            (None, Some(d)) => {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(ProtocolError::Argument(format!(
                        "deadzone threshold d = {d} must be positive"
                    )));
                }
                (2.0 * d / min_eigenvalue_sym(&care.p)?).sqrt()
            }
            (None, None) => return Err(ProtocolError::Argument("need delta, d, or both".into())),
        };
        let spec = make_spec(delta, &care.p, d)?;
        Self::new(care.p, model.b(), spec)
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    /// `BᵀP`, m×n.
    pub fn btp(&self) -> &DMatrix<f64> {
        &self.btp
    }
    /// `PBBᵀP`, n×n.
    pub fn pbbtp(&self) -> &DMatrix<f64> {
        &self.pbbtp
    }
    pub fn spec(&self) -> &CoherenceSpec {
        &self.spec
    }
    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.btp.nrows()
    }

    /// `zᵀ P z` for an n-vector given as a slice.
    pub fn quadratic(&self, z: &[f64]) -> f64 {
        quad_form(&self.p, z)
    }
}

pub(crate) fn quad_form(m: &DMatrix<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * z[j];
        }
        acc += z[i] * row;
    }
    acc
}

/// `ζ = (L ⊗ I_n) x` for the stacked state `x`.
pub fn zeta(
    l: &LaplacianMatrix,
    x: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>, ProtocolError> {
    let agents = l.n_nodes();
    if n == 0 || x.len() != agents * n {
        return Err(ProtocolError::Argument(format!(
            "stacked state has length {}, expected {agents}·{n}",
            x.len()
        )));
    }
    let mut out = DVector::zeros(x.len());
    zeta_into(&l.sparse_rows(), x.as_slice(), n, out.as_mut_slice());
    Ok(out)
}

/// Sparse kernel behind [`zeta`]; `rows` comes from [`LaplacianMatrix::sparse_rows`].
pub(crate) fn zeta_into(rows: &[Vec<(usize, f64)>], x: &[f64], n: usize, out: &mut [f64]) {
    for (i, row) in rows.iter().enumerate() {
        let zi = &mut out[i * n..(i + 1) * n];
        zi.fill(0.0);
        for &(j, lij) in row {
            let xj = &x[j * n..(j + 1) * n];
            for (z, v) in zi.iter_mut().zip(xj) {
                *z += lij * v;
            }
        }
    }
}

/// Gain adaptation rate for one agent; zero inside the deadzone.
pub fn rho_dot(zeta_i: &[f64], params: &ProtocolParams) -> f64 {
    if params.quadratic(zeta_i) >= params.spec.d {
        quad_form(&params.pbbtp, zeta_i).max(0.0)
    } else {
        0.0
    }
}

/// `uᵢ = −ρᵢ BᵀP ζᵢ`.
pub fn control(rho_i: f64, zeta_i: &[f64], params: &ProtocolParams) -> DVector<f64> {
    let mut u = DVector::zeros(params.input_dim());
    control_into(rho_i, zeta_i, params, u.as_mut_slice());
    u
}

pub(crate) fn control_into(rho_i: f64, zeta_i: &[f64], params: &ProtocolParams, out: &mut [f64]) {
    let btp = &params.btp;
    for (k, uk) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, z) in zeta_i.iter().enumerate() {
            acc += btp[(k, j)] * z;
        }
        *uk = 0.0 - rho_i * acc;
    }
}
