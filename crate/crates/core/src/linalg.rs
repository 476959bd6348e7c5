//! Small dense numerics: the continuous algebraic Riccati equation
//! `AᵀP + PA − PBBᵀP + Q = 0`, stabilizability, image containment and
//! symmetric eigenvalues.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(
        "(A, B) is not stabilizable: PBH rank of [A - λI, B] at λ = {re:.6} + {im:.6}i is {rank} < {n}"
    )]
    NotStabilizable {
        re: f64,
        im: f64,
        rank: usize,
        n: usize,
    },
    #[error(
        "disturbance is not input-additive (im E ⊄ im B): least-squares residual {residual:.3e}"
    )]
    NotInputAdditive { residual: f64 },
    #[error("Riccati iteration did not converge: last residual {residual:.3e}")]
    NoConvergence { residual: f64 },
    #[error("eigenvalue computation did not converge")]
    EigenNoConvergence,
}

/// Linear agent model `ẋ = Ax + Bu + Ew` with the factor `X` such that `E = BX`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    e: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl AgentModel {
    /// Checks dimensions and that the disturbance enters through the input channels.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(LinalgError::Argument(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(LinalgError::Argument(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if e.nrows() != n || e.ncols() == 0 {
            return Err(LinalgError::Argument(format!(
                "E must be {n}xw with w >= 1, got {}x{}",
                e.nrows(),
                e.ncols()
            )));
        }
        let x = image_containment(&e, &b)?;
        Ok(Self { a, b, e, x })
    }

    /// The triple integrator with input and disturbance on the last state.
    pub fn triple_integrator() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        Self::new(a, b.clone(), b).expect("triple integrator is well formed")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }
    /// `X` with `E = BX`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }
}

/// Stabilizing solution of the Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub residual_norm: f64,
}

/// Rank tolerance for the PBH test, relative to the largest singular value.
const PBH_RANK_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-10;
const CARE_RESIDUAL_TOL: f64 = 1e-8;

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let btp = b.transpose() * p;
    a.transpose() * p + p * a - btp.transpose() * &btp + q
}

/// Solves `AᵀP + PA − PBBᵀP + I = 0` for the stabilizing `P > 0`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<RiccatiSolution, LinalgError> {
    solve_care_weighted(a, b, &DMatrix::identity(a.nrows(), a.nrows()))
}

/// Solves `AᵀP + PA − PBBᵀP + Q = 0` for a symmetric positive definite `Q`.
///
/// The differential Riccati equation is integrated from `P(0) = I` with an
/// adaptive Dormand–Prince scheme until it is stationary, then the result is
/// polished with Newton–Kleinman steps.
pub fn solve_care_weighted(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<RiccatiSolution, LinalgError> {
    let n = a.nrows();
    if n == 0 || !a.is_square() || b.nrows() != n || b.ncols() == 0 || q.shape() != (n, n) {
        return Err(LinalgError::Argument(format!(
            "inconsistent CARE dimensions: A {:?}, B {:?}, Q {:?}",
            a.shape(),
            b.shape(),
            q.shape()
        )));
    }
    if min_eigenvalue_sym(q)? <= 0.0 {
        return Err(LinalgError::Argument("Q must be positive definite".into()));
    }
    if let Some(err) = pbh_violation(a, b)? {
        return Err(err);
    }
    let s = b * b.transpose();
    let scale = 1.0_f64.max(q.norm());

    let mut p = integrate_dre(a, &s, q, scale);
    if !is_hurwitz(&(a - &s * &p))? {
        // Newton needs a stabilizing start; the flow has not reached one.
        let residual = care_residual(a, b, q, &p).norm();
        return Err(LinalgError::NoConvergence { residual });
    }

    let mut residual = care_residual(a, b, q, &p).norm();
    for _ in 0..50 {
        let closed = a - &s * &p;
        let rhs = q + &p * &s * &p;
        let next = match solve_lyapunov(&closed, &rhs) {
            Some(x) => symmetrize(&x),
            None => break,
        };
        let next_residual = care_residual(a, b, q, &next).norm();
        if !next_residual.is_finite() || next_residual >= residual {
            if next_residual < residual {
                p = next;
                residual = next_residual;
            }
            break;
        }
        p = next;
        residual = next_residual;
        if residual <= 1e-14 * scale {
            break;
        }
    }

    let tol = CARE_RESIDUAL_TOL * scale.max((&p * &s * &p).norm());
    if !(residual <= tol) || min_eigenvalue_sym(&p)? <= 0.0 || !is_hurwitz(&(a - &s * &p))? {
        return Err(LinalgError::NoConvergence { residual });
    }
    Ok(RiccatiSolution {
        p,
        residual_norm: residual,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn dre_rhs(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a - p * s * p + q
}

/// Dormand–Prince 5(4) integration of the differential Riccati equation.
fn integrate_dre(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    // fifth-order weights are row 6 of A; these are the embedded fourth-order ones
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    const RTOL: f64 = 1e-9;
    const ATOL: f64 = 1e-12;
    const MAX_STEPS: usize = 200_000;
    const MAX_TIME: f64 = 1e6;

    let n = a.nrows();
    let mut p = DMatrix::identity(n, n);
    let mut t = 0.0;
    let mut h = 1e-2;
    let mut k: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); 7];
    k[0] = dre_rhs(a, s, q, &p);
    for _ in 0..MAX_STEPS {
        if k[0].norm() <= 1e-6 * scale.max(p.norm()) || t > MAX_TIME {
            break;
        }
        for stage in 1..7 {
            let mut y = p.clone();
            for (j, kj) in k.iter().enumerate().take(stage) {
                if A[stage][j] != 0.0 {
                    y += kj * (h * A[stage][j]);
                }
            }
            k[stage] = dre_rhs(a, s, q, &y);
        }
        let mut p5 = p.clone();
        for j in 0..6 {
            p5 += &k[j] * (h * A[6][j]);
        }
        let mut p4 = p.clone();
        for j in 0..7 {
            p4 += &k[j] * (h * B4[j]);
        }
        let err = (&p5 - &p4)
            .iter()
            .zip(p5.iter())
            .map(|(e, y)| (e / (ATOL + RTOL * y.abs())).powi(2))
            .sum::<f64>()
            .sqrt()
            / (n as f64);
        if !err.is_finite() {
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            t += h;
            p = symmetrize(&p5);
            // first-same-as-last property
            k[0] = dre_rhs(a, s, q, &p);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    p
}

/// Solves `FᵀX + XF + C = 0` through the Kronecker form; `None` when singular.
pub fn solve_lyapunov(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ft = f.transpose();
    // column-major vec(FᵀX + XF) = (I ⊗ Fᵀ + Fᵀ ⊗ I) vec(X)
    let op = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Argument(
            "eigenvalues need a square matrix".into(),
        ));
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(LinalgError::EigenNoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// All eigenvalues strictly in the open left half plane.
pub fn is_hurwitz(m: &DMatrix<f64>) -> Result<bool, LinalgError> {
    Ok(eigenvalues(m)?.iter().all(|l| l.re < 0.0))
}

/// First PBH failure, if any, among the eigenvalues of `A` with `Re λ ≥ 0`.
fn pbh_violation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Option<LinalgError>, LinalgError> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(LinalgError::Argument(format!(
            "inconsistent dimensions: A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    // eigenvalues of defective blocks are only resolved to about eps^(1/n)
    let margin = 1e-9 * 1.0_f64.max(a.norm());
    for lambda in eigenvalues(a)? {
        if lambda.re < -margin {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            m[(i, i)] -= lambda;
            for j in 0..b.ncols() {
                m[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = SVD::try_new(m, false, false, f64::EPSILON, 10_000)
            .ok_or(LinalgError::EigenNoConvergence)?
            .singular_values;
        let largest = sv.max();
        let rank = sv.iter().filter(|&&s| s > PBH_RANK_TOL * largest).count();
        if rank < n {
            return Ok(Some(LinalgError::NotStabilizable {
                re: lambda.re,
                im: lambda.im,
                rank,
                n,
            }));
        }
    }
    Ok(None)
}

/// PBH test: `rank [A − λI, B] = n` for every eigenvalue with `Re λ ≥ 0`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool, LinalgError> {
    Ok(pbh_violation(a, b)?.is_none())
}

/// Least-squares `X` with `BX = E`, refused when the residual is not negligible.
pub fn image_containment(e: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if e.nrows() != b.nrows() {
        return Err(LinalgError::Argument(format!(
            "E has {} rows but B has {}",
            e.nrows(),
            b.nrows()
        )));
    }
    let svd = SVD::new(b.clone(), true, true);
    let cutoff = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let x = svd
        .solve(e, cutoff)
        .map_err(|msg| LinalgError::Argument(msg.to_string()))?;
    let residual = (b * &x - e).norm();
    if residual > 1e-9 * 1.0_f64.max(e.norm()) {
        return Err(LinalgError::NotInputAdditive { residual });
    }
    Ok(x)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(LinalgError::Argument(
            "expected a nonempty square matrix".into(),
        ));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * 1.0_f64.max(m.amax()) {
        return Err(LinalgError::Argument(format!(
            "matrix is not symmetric (max |M - Mᵀ| = {asym:.3e})"
        )));
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 10_000)
        .ok_or(LinalgError::EigenNoConvergence)?;
    Ok(eig.eigenvalues.min())
}
