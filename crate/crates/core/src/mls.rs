//! Polynomial-reproducing moving least squares weights.
//!
//! For an evaluation point `x` and local points `Q`, the weights minimize
//! `sum a_j^2 / w_j` subject to `sum a_j p(x_j) = p(x)` for every polynomial
//! `p` of degree at most `s`, with `w_j = phi(|x - x_j| / delta)`. The
//! minimizer is `a = W B^T mu` where `(B W B^T) mu = b(x)`. Monomials are
//! evaluated in centered, scaled local coordinates, so `b(x) = e_0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::geometry::PointCloud;

/// Largest accepted condition number of the regularized dual Gram matrix.
pub const MAX_CONDITION: f64 = 1e11;

/// Relative ridge added to the dual Gram matrix.
pub const RIDGE: f64 = 1e-12;

/// Monomials of total degree at most `degree` in graded-lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyBasis {
    dim: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn exponents_of_degree(dim: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == dim {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        exponents_of_degree(dim, total - first, prefix, out);
        prefix.pop();
    }
}

impl PolyBasis {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let mut exponents = Vec::with_capacity(binomial(degree + dim, dim));
        for total in 0..=degree as u32 {
            exponents_of_degree(dim, total, &mut Vec::with_capacity(dim), &mut exponents);
        }
        Ok(Self { dim, degree, exponents })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Monomial values `x^alpha` in basis order.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        // powers[i][k] = x_i^k
        let mut powers = vec![1.0; self.dim * (self.degree + 1)];
        for i in 0..self.dim {
            for k in 1..=self.degree {
                powers[i * (self.degree + 1) + k] = powers[i * (self.degree + 1) + k - 1] * x[i];
            }
        }
        for (slot, alpha) in out.iter_mut().zip(&self.exponents) {
            *slot = alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| powers[i * (self.degree + 1) + a as usize])
                .product();
        }
    }
}

/// Compactly supported weight `(1 - t)_+^4 (4t + 1)`.
pub fn weight_profile(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let u = 1.0 - t;
        u * u * u * u * (4.0 * t + 1.0)
    }
}

/// Moving least squares weights at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsWeights {
    pub x: Vec<f64>,
    pub points: PointCloud,
    /// One weight per local point; zero outside the support.
    pub weights: Vec<f64>,
    /// Kernel values `w_j`.
    pub kernel: Vec<f64>,
    pub support: f64,
    pub lebesgue_sum: f64,
    pub condition: f64,
}

impl MlsWeights {
    pub fn apply(&self, samples: &[f64]) -> Result<f64> {
        mls_apply(self, samples)
    }

    /// Debug dump: `x..., x_j..., a_j, w_j` per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let d = self.x.len();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.extend((0..d).map(|i| format!("xj{i}")));
        header.push("a".into());
        header.push("w".into());
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (j, p) in self.points.iter().enumerate() {
            let fields: Vec<String> = self
                .x
                .iter()
                .chain(p)
                .chain([&self.weights[j], &self.kernel[j]])
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(out, "{}", fields.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

/// `sum_j a_j f(x_j)`.
pub fn mls_apply(weights: &MlsWeights, samples: &[f64]) -> Result<f64> {
    if samples.len() != weights.weights.len() {
        return Err(Error::LengthMismatch {
            expected: weights.weights.len(),
            got: samples.len(),
        });
    }
    Ok(weights.weights.iter().zip(samples).map(|(a, f)| a * f).sum())
}

/// Solves for the weights reproducing polynomials of the basis degree at `x`.
pub fn solve_mls(x: &[f64], q: &PointCloud, basis: &PolyBasis, support: f64) -> Result<MlsWeights> {
    solve_mls_with_rhs(x, q, basis, support, 1.0)
}

/// As [`solve_mls`] with the constraint right-hand side scaled by `rhs_scale`.
/// Any scale other than 1 breaks reproduction; used for fault injection.
pub(crate) fn solve_mls_with_rhs(
    x: &[f64],
    q: &PointCloud,
    basis: &PolyBasis,
    support: f64,
    rhs_scale: f64,
) -> Result<MlsWeights> {
    let dim = basis.dim();
    check_dim(dim, x.len())?;
    check_dim(dim, q.dim())?;
    if !(support > 0.0 && support.is_finite()) {
        return Err(Error::InvalidParameter(format!("support radius {support}")));
    }
    let n_basis = basis.len();
    if q.len() < n_basis {
        return Err(Error::InsufficientPoints { needed: n_basis, have: q.len() });
    }

    let kernel: Vec<f64> = q
        .iter()
        .map(|p| {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            weight_profile(d2.sqrt() / support)
        })
        .collect();
    let active: Vec<usize> = (0..q.len()).filter(|&j| kernel[j] > 0.0).collect();
    if active.len() < n_basis {
        return Err(Error::InsufficientPoints { needed: n_basis, have: active.len() });
    }

    // Local coordinates are scaled by the farthest active point rather than by
    // the support radius; both give the same weights, this one is better conditioned.
    let scale = active
        .iter()
        .map(|&j| {
            q.point(j)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { support };
    let mut b_mat = DMatrix::<f64>::zeros(n_basis, active.len());
    let mut local = vec![0.0; dim];
    let mut column = vec![0.0; n_basis];
    for (c, &j) in active.iter().enumerate() {
        for (l, (p, xi)) in local.iter_mut().zip(q.point(j).iter().zip(x)) {
            *l = (p - xi) / scale;
        }
        basis.eval_into(&local, &mut column);
        for (r, v) in column.iter().enumerate() {
            b_mat[(r, c)] = *v;
        }
    }
    // C = W^{1/2} B^T. With C = U S V^T the regularized dual solution
    // a = W B^T (B W B^T + lambda I)^{-1} b becomes W^{1/2} U diag(s / (s^2 + lambda)) V^T b,
    // which avoids squaring the condition number of C.
    let root_w: Vec<f64> = active.iter().map(|&j| kernel[j].sqrt()).collect();
    let c_mat = DMatrix::from_fn(active.len(), n_basis, |r, c| b_mat[(c, r)] * root_w[r]);
    let svd = c_mat.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SolveFailure(f64::INFINITY)),
    };
    let sigma = svd.singular_values;
    let trace: f64 = sigma.iter().map(|s| s * s).sum();
    let ridge = RIDGE * trace / n_basis as f64;
    let s_max = sigma.max();
    let s_min = sigma.min();
    let condition = (s_max * s_max + ridge) / (s_min * s_min + ridge);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SolveFailure(condition));
    }
    let filter = sigma.map(|s| s / (s * s + ridge));
    let solve = |rhs: &DVector<f64>| -> DVector<f64> { &u * (&v_t * rhs).component_mul(&filter) };

    let mut rhs = DVector::<f64>::zeros(n_basis);
    rhs[0] = rhs_scale;
    let mut z = solve(&rhs);
    // Iterative refinement removes the bias of the ridge.
    let mut residual = &rhs - c_mat.transpose() * &z;
    for _ in 0..8 {
        if residual.amax() <= 1e-15 {
            break;
        }
        z += solve(&residual);
        residual = &rhs - c_mat.transpose() * &z;
    }
    let active_weights = DVector::from_fn(active.len(), |r, _| z[r] * root_w[r]);
    let abs_sum: f64 = active_weights.iter().map(|a| a.abs()).sum();
    if residual.amax() > 1e-11 * (1.0 + abs_sum) {
        return Err(Error::SolveFailure(condition));
    }

    let mut weights = vec![0.0; q.len()];
    for (c, &j) in active.iter().enumerate() {
        weights[j] = active_weights[c];
    }
    let lebesgue_sum = weights.iter().map(|a| a.abs()).sum();
    Ok(MlsWeights {
        x: x.to_vec(),
        points: q.clone(),
        weights,
        kernel,
        support,
        lebesgue_sum,
        condition,
    })
}

/// Largest violation of `sum a_j pi(x_j) = pi(x)` over the basis monomials,
/// measured in unscaled coordinates and relative to `(1 + sum |a_j|) max_j |pi(x_j)|`.
pub fn reproduction_defect(w: &MlsWeights, basis: &PolyBasis) -> Result<f64> {
    let at_x = basis.eval(&w.x)?;
    let mut sums = vec![0.0; basis.len()];
    let mut scale = vec![0.0f64; basis.len()];
    for (j, p) in w.points.iter().enumerate() {
        let v = basis.eval(p)?;
        for k in 0..basis.len() {
            sums[k] += w.weights[j] * v[k];
            scale[k] = scale[k].max(v[k].abs());
        }
    }
    Ok((0..basis.len())
        .map(|k| (sums[k] - at_x[k]).abs() / ((1.0 + w.lebesgue_sum) * scale[k].max(at_x[k].abs()).max(1e-300)))
        .fold(0.0, f64::max))
}
