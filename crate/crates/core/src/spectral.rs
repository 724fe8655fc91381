//! Spectral quantities and positive-definiteness certificates for signed Laplacians.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::signed_graph::{comparison_matrix, BalanceVerdict, LaplacianBlocks};

/// Smallest eigenvalue accepted as "positive definite".
pub const TOL_PD: f64 = 1e-9;
/// Relative singular-value threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-10;
const RESTARTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix must be square and non-empty")]
    Shape,
    #[error("component is not strongly connected")]
    NotStronglyConnected,
    #[error("left null space of the comparison matrix has dimension {0}, expected 1")]
    NullSpaceDimension(usize),
    #[error("left null vector is not entrywise positive")]
    NotPositive,
    #[error("gauge does not satisfy G L G = M(L) (max deviation {0:.3e})")]
    NotBalanced(f64),
    #[error("balance gap {0:.3e} is not positive")]
    GapNotPositive(f64),
    #[error("balance gap is undefined for a single-node component")]
    SingleNode,
    #[error("matrix is not eligible for a diagonal stabilizer: {0}")]
    NotEligible(String),
    #[error("stabilizer search exhausted its budget (best lambda_min {0:.3e})")]
    SearchExhausted(f64),
    #[error("follower block L_F is singular")]
    SingularFollowerBlock,
    #[error("containment row {row} has weight sum {sum} > 1")]
    RowSumBound { row: usize, sum: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("certificate requires {0}")]
    Precondition(String),
    #[error("certificate matrix is not positive definite (lambda_min {0:.3e})")]
    CertificateFailed(f64),
}

fn strongly_connected_pattern(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in 0..n {
                let entry = if forward { a[(w, v)] } else { a[(v, w)] };
                if w != v && entry != 0.0 && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

fn sym_eigenvalues(s: &DMatrix<f64>) -> DVector<f64> {
    let sym = (s + s.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
}

fn lambda_min(s: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(s).min()
}

fn lambda_max(s: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(s).max()
}

/// All eigenvalues of a general real matrix.
///
/// The QR iteration is bounded; when it stalls (exactly structured inputs such
/// as nilpotent blocks can do that) it is retried on orthogonally similar
/// matrices. Entries are NaN if every attempt fails.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = a.nrows();
    let mut ev = schur_eigenvalues(a.clone()).unwrap_or_else(|| {
        (1..=4)
            .find_map(|k| {
                let q = DMatrix::from_fn(n, n, |i, j| ((k * (i + 1) * (j + 2)) as f64).sin()).qr().q();
                schur_eigenvalues(q.transpose() * a * &q)
            })
            .unwrap_or_else(|| vec![Complex::new(f64::NAN, f64::NAN); n])
    });
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

fn schur_eigenvalues(a: DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let schur = a.try_schur(f64::EPSILON, 10_000)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronData {
    pub p: Vec<f64>,
}

impl PerronData {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p)
    }

    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.vector())
    }
}

/// Positive left null vector of `M(L)` for the Laplacian of a strong component,
/// normalised to sum to one.
pub fn left_positive_vector(l: &DMatrix<f64>) -> Result<PerronData, SpectralError> {
    if !l.is_square() || l.nrows() == 0 {
        return Err(SpectralError::Shape);
    }
    let n = l.nrows();
    if n == 1 {
        return Ok(PerronData { p: vec![1.0] });
    }
    if !strongly_connected_pattern(l) {
        return Err(SpectralError::NotStronglyConnected);
    }
    let mt = comparison_matrix(l).transpose();
    let sv = mt.clone().singular_values();
    let smax = sv.max();
    let null_dim = sv.iter().filter(|&&s| s <= RANK_TOL * smax).count();
    if null_dim != 1 {
        return Err(SpectralError::NullSpaceDimension(null_dim));
    }

    // Columns of M(L)^T sum to zero, so any n-1 rows carry full rank and the
    // normalisation row closes the system.
    let mut bordered = mt;
    bordered.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let p = bordered.lu().solve(&rhs).ok_or(SpectralError::NullSpaceDimension(2))?;
    if p.iter().any(|&x| x <= 0.0) {
        return Err(SpectralError::NotPositive);
    }
    let sum = p.sum();
    Ok(PerronData { p: p.iter().map(|x| x / sum).collect() })
}

/// Max-norm of `G L G - M(L)`.
pub fn gauge_deviation(l: &DMatrix<f64>, gauge: &[f64]) -> f64 {
    let m = comparison_matrix(l);
    let n = l.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((gauge[i] * l[(i, j)] * gauge[j] - m[(i, j)]).abs());
        }
    }
    worst
}

/// Orthonormal basis (as columns) of the complement of `v`, via one Householder reflection.
fn orthogonal_complement(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let u = v / v.norm();
    let mut e1 = DVector::zeros(n);
    e1[0] = 1.0;
    // Reflect u onto -sign(u0) e1 for stability.
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let w = &u + &e1 * s;
    let w = &w / w.norm();
    let h = DMatrix::identity(n, n) - &w * w.transpose() * 2.0;
    h.columns(1, n - 1).into_owned()
}

/// `a(L) = min { x' Lbar x / x' P x : x' G p = 0, x != 0 }` with `Lbar = (PL + L'P)/2`.
pub fn balance_gap(l: &DMatrix<f64>, gauge: &[f64], perron: &PerronData) -> Result<f64, SpectralError> {
    let n = l.nrows();
    if !l.is_square() || n == 0 || gauge.len() != n || perron.p.len() != n {
        return Err(SpectralError::Shape);
    }
    if n == 1 {
        return Err(SpectralError::SingleNode);
    }
    let dev = gauge_deviation(l, gauge);
    if dev > 1e-12 * l.amax().max(1.0) {
        return Err(SpectralError::NotBalanced(dev));
    }
    let p = perron.diag();
    let lbar = (&p * l + l.transpose() * &p) * 0.5;
    let gp = DVector::from_iterator(n, gauge.iter().zip(&perron.p).map(|(g, p)| g * p));
    let q = orthogonal_complement(&gp);
    let a = q.transpose() * &lbar * &q;
    let b = q.transpose() * &p * &q;
    let chol = b.cholesky().ok_or(SpectralError::NotPositive)?;
    let linv = chol.l().try_inverse().ok_or(SpectralError::NotPositive)?;
    let reduced = &linv * a * linv.transpose();
    let gap = lambda_min(&reduced);
    if gap <= TOL_PD {
        return Err(SpectralError::GapNotPositive(gap));
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalStabilizer {
    /// Positive diagonal, normalised to `max = 1`.
    pub diag: Vec<f64>,
    /// Smallest eigenvalue of `D A + A' D`.
    pub lambda_min: f64,
}

impl DiagonalStabilizer {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag))
    }
}

fn stabilizer_objective(a: &DMatrix<f64>, logd: &DVector<f64>) -> f64 {
    let dmax = logd.max();
    let d = DMatrix::from_diagonal(&logd.map(|y| (y - dmax).exp()));
    lambda_min(&(&d * a + a.transpose() * &d))
}

fn coordinate_ascent(a: &DMatrix<f64>, start: DVector<f64>, budget: usize) -> (DVector<f64>, f64) {
    let n = start.len();
    let mut y = start;
    let mut best = stabilizer_objective(a, &y);
    let mut step = 1.0;
    let mut evals = 1;
    while evals < budget && step > 1e-6 {
        let mut improved = false;
        for i in 0..n {
            for dir in [1.0, -1.0] {
                y[i] += dir * step;
                let f = stabilizer_objective(a, &y);
                evals += 1;
                if f > best {
                    best = f;
                    improved = true;
                    break;
                }
                y[i] -= dir * step;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (y, best)
}

fn stabilizer_eligibility(a: &DMatrix<f64>) -> Result<(), SpectralError> {
    let n = a.nrows();
    if (0..n).any(|i| a[(i, i)] <= 0.0) {
        return Err(SpectralError::NotEligible("diagonal entries must be positive".into()));
    }
    let m = comparison_matrix(a);
    let scale = a.amax().max(1.0);
    let ev_m = eigenvalues(&m);
    if ev_m.iter().any(|z| !z.re.is_finite()) {
        return Err(SpectralError::NotEligible("eigenvalue iteration did not converge".into()));
    }
    let min_re_m = ev_m.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min_re_m > RANK_TOL * scale {
        return Ok(()); // nonsingular H-matrix
    }
    let laplacian_like = (0..n).all(|i| m.row(i).sum().abs() <= 1e-12 * scale);
    let min_re_a = eigenvalues(a).iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if laplacian_like && strongly_connected_pattern(a) && min_re_a > RANK_TOL * scale {
        return Ok(()); // Laplacian of a structurally unbalanced strong component
    }
    Err(SpectralError::NotEligible(format!(
        "comparison matrix min Re(eig) = {min_re_m:.3e}, matrix min Re(eig) = {min_re_a:.3e}"
    )))
}

/// Positive diagonal `D` with `D A + A' D` positive definite.
///
/// Searches over `log D` by coordinate ascent on `lambda_min`, first from the
/// identity, then from the comparison-matrix construction `D = diag(y ./ x)`
/// with `M(A) x = 1`, `M(A)' y = 1` (when `M(A)` is invertible), then from
/// seeded random starts.
pub fn diagonal_stabilizer(a: &DMatrix<f64>, seed: u64) -> Result<DiagonalStabilizer, SpectralError> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(SpectralError::Shape);
    }
    stabilizer_eligibility(a)?;
    let n = a.nrows();
    let budget = 200 * n;

    let mut starts = vec![DVector::zeros(n)];
    let m = comparison_matrix(a);
    let ones = DVector::from_element(n, 1.0);
    if let (Some(x), Some(y)) = (m.clone().lu().solve(&ones), m.transpose().lu().solve(&ones)) {
        if x.iter().chain(y.iter()).all(|&v| v > 0.0) {
            starts.push(DVector::from_iterator(n, (0..n).map(|i| (y[i] / x[i]).ln())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        starts.push(DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0)));
    }

    let mut best = f64::NEG_INFINITY;
    for start in starts {
        let (y, f) = coordinate_ascent(a, start, budget);
        best = best.max(f);
        if f >= TOL_PD {
            let dmax = y.max();
            let diag: Vec<f64> = y.iter().map(|v| (v - dmax).exp()).collect();
            let d = DMatrix::from_diagonal(&DVector::from_column_slice(&diag));
            let lambda_min = lambda_min(&(&d * a + a.transpose() * &d));
            if lambda_min >= TOL_PD {
                return Ok(DiagonalStabilizer { diag, lambda_min });
            }
        }
    }
    Err(SpectralError::SearchExhausted(best))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentWeights {
    /// Per closed strong component: the gauge used (identity for unbalanced ones).
    pub gauges: Vec<Vec<f64>>,
    /// Per closed strong component: whether it is structurally balanced.
    pub balanced: Vec<bool>,
    /// Follower rows by component columns: `varpi_k = -L_F^{-1} L_FLk G_k 1`.
    #[serde(serialize_with = "serialize_rows")]
    pub varpi: DMatrix<f64>,
}

impl ContainmentWeights {
    /// `zeta` for graphs with a single closed strong component.
    pub fn zeta(&self) -> Option<DVector<f64>> {
        (self.varpi.ncols() == 1).then(|| self.varpi.column(0).into_owned())
    }

    pub fn row_abs_sums(&self) -> Vec<f64> {
        self.varpi.row_iter().map(|r| r.iter().map(|x| x.abs()).sum()).collect()
    }
}

pub fn containment_weights(
    blocks: &LaplacianBlocks,
    balance: &[BalanceVerdict],
) -> Result<ContainmentWeights, SpectralError> {
    let m = blocks.csc_ranges.len();
    if balance.len() != m {
        return Err(SpectralError::Shape);
    }
    let mut gauges = Vec::with_capacity(m);
    let mut balanced = Vec::with_capacity(m);
    for (k, verdict) in balance.iter().enumerate() {
        let size = blocks.csc_ranges[k].len();
        match verdict.gauge_f64() {
            Some(g) if verdict.balanced => {
                gauges.push(g);
                balanced.push(true);
            }
            _ => {
                gauges.push(vec![1.0; size]);
                balanced.push(false);
            }
        }
    }

    let nf = blocks.follower_count();
    let mut varpi = DMatrix::zeros(nf, m);
    if nf > 0 {
        let lu = blocks.l_f.clone().lu();
        if !lu.is_invertible() {
            return Err(SpectralError::SingularFollowerBlock);
        }
        for k in 0..m {
            let g1 = DVector::from_column_slice(&gauges[k]);
            let col = lu.solve(&(&blocks.l_flk[k] * g1)).ok_or(SpectralError::SingularFollowerBlock)?;
            varpi.set_column(k, &(-col));
        }
    }
    let weights = ContainmentWeights { gauges, balanced, varpi };
    for (row, sum) in weights.row_abs_sums().into_iter().enumerate() {
        if sum > 1.0 + 1e-9 {
            return Err(SpectralError::RowSumBound { row, sum });
        }
    }
    Ok(weights)
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(ser)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdCheck {
    pub positive_definite: bool,
    pub lambda_min: f64,
}

pub fn is_positive_definite(s: &DMatrix<f64>) -> Result<PdCheck, SpectralError> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(SpectralError::Shape);
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY_TOL * s.amax().max(1.0) {
        return Err(SpectralError::Asymmetric(asym));
    }
    let lambda_min = lambda_min(s);
    Ok(PdCheck { positive_definite: lambda_min > TOL_PD, lambda_min })
}

/// Block test for `[[S1, S2'], [S2, S3]] > 0` through `S3 > 0` and
/// `S1 - S2' S3^{-1} S2 > 0`.
pub fn schur_positive_definite(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    s3: &DMatrix<f64>,
) -> Result<bool, SpectralError> {
    if s2.nrows() != s3.nrows() || s2.ncols() != s1.nrows() {
        return Err(SpectralError::Shape);
    }
    if !is_positive_definite(s3)?.positive_definite {
        return Ok(false);
    }
    let inv = s3.clone().cholesky().ok_or(SpectralError::Shape)?.inverse();
    let schur = s1 - s2.transpose() * inv * s2;
    let schur = (&schur + schur.transpose()) * 0.5;
    Ok(is_positive_definite(&schur)?.positive_definite)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub balanced_leaders: bool,
    /// `a(L_L)` when the leader block is balanced.
    pub gap: Option<f64>,
    pub leader_weights: Vec<f64>,
    pub follower_weights: Vec<f64>,
    /// Upper bound on the follower coupling scalar.
    pub rho_bound: f64,
    /// Chosen coupling (half the bound).
    pub rho: f64,
    pub lambda_min: f64,
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    #[serde(skip)]
    parts: CertificateParts,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct CertificateParts {
    top_left: DMatrix<f64>,
    coupling: DMatrix<f64>,
    follower_sym: DMatrix<f64>,
}

impl Certificate {
    /// The block matrix for an arbitrary coupling `rho`.
    pub fn matrix_at(&self, rho: f64) -> DMatrix<f64> {
        assemble_certificate(&self.parts, rho)
    }
}

fn assemble_certificate(parts: &CertificateParts, rho: f64) -> DMatrix<f64> {
    let k = parts.top_left.nrows();
    let f = parts.follower_sym.nrows();
    let mut out = DMatrix::zeros(k + f, k + f);
    out.view_mut((0, 0), (k, k)).copy_from(&parts.top_left);
    out.view_mut((0, k), (k, f)).copy_from(&(&parts.coupling * rho));
    out.view_mut((k, 0), (f, k)).copy_from(&(parts.coupling.transpose() * rho));
    out.view_mut((k, k), (f, f)).copy_from(&(&parts.follower_sym * rho));
    out
}

/// Block Lyapunov certificate for a quasi-strongly connected graph with
/// `K >= 2` leaders.
///
/// Balanced leaders: `[[2 a Xi_L, r L_FL' Xi_F], [r Xi_F L_FL, r S]]` with
/// `Xi_L = diag(nu)`, `S = Xi_F L_F + L_F' Xi_F`.
/// Unbalanced leaders: the top-left block is `Xi~_L L_L + L_L' Xi~_L`.
pub fn quasi_strong_certificate(
    blocks: &LaplacianBlocks,
    leader_balance: &BalanceVerdict,
    seed: u64,
) -> Result<Certificate, SpectralError> {
    if blocks.csc_ranges.len() != 1 {
        return Err(SpectralError::Precondition("exactly one closed strong component".into()));
    }
    let k = blocks.leader_count();
    if k < 2 {
        return Err(SpectralError::Precondition("K >= 2".into()));
    }
    if blocks.follower_count() == 0 {
        return Err(SpectralError::Precondition("at least one follower".into()));
    }
    let l_l = &blocks.l_l;
    let xi_f = diagonal_stabilizer(&blocks.l_f, seed)?;
    let xf = xi_f.matrix();
    let s = &xf * &blocks.l_f + blocks.l_f.transpose() * &xf;
    let s_inv = s.clone().cholesky().ok_or(SpectralError::CertificateFailed(lambda_min(&s)))?.inverse();
    let coupling_t = &xf * &blocks.l_fl; // Xi_F L_FL
    let m = coupling_t.transpose() * &s_inv * &coupling_t;
    let m_max = lambda_max(&m);
    if m_max <= 0.0 {
        return Err(SpectralError::Precondition("a leader-to-follower edge".into()));
    }

    let (balanced_leaders, gap, leader_weights, top_left, rho_bound) = match leader_balance.gauge_f64() {
        Some(gauge) if leader_balance.balanced => {
            let nu = left_positive_vector(l_l)?;
            let a = balance_gap(l_l, &gauge, &nu)?;
            let min_nu = nu.p.iter().copied().fold(f64::INFINITY, f64::min);
            let top = nu.diag() * (2.0 * a);
            (true, Some(a), nu.p.clone(), top, 2.0 * a * min_nu / m_max)
        }
        _ => {
            let st = diagonal_stabilizer(l_l, seed.wrapping_add(1))?;
            let xl = st.matrix();
            let top = &xl * l_l + l_l.transpose() * &xl;
            let bound = lambda_min(&top) / m_max;
            (false, None, st.diag, top, bound)
        }
    };

    let parts = CertificateParts {
        top_left,
        coupling: coupling_t.transpose(),
        follower_sym: s,
    };
    let rho = 0.5 * rho_bound;
    let matrix = assemble_certificate(&parts, rho);
    let check = is_positive_definite(&matrix)?;
    if !check.positive_definite {
        return Err(SpectralError::CertificateFailed(check.lambda_min));
    }
    Ok(Certificate {
        balanced_leaders,
        gap,
        leader_weights,
        follower_weights: xi_f.diag,
        rho_bound,
        rho,
        lambda_min: check.lambda_min,
        matrix,
        parts,
    })
}
