use crate::error::{Error, Result};
use crate::gp_math::kernel_eval;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::partition::PartitionData;
use crate::Scalar;

use super::state::{GradientVector, ParamLayout, VariationalState};

/// Quantities shared by every observation term of one state: the jittered
/// inducing Gram `K_mm`, its factor and inverse, `S★` and the KL divergence.
#[derive(Clone, Debug)]
pub struct ElboWorkspace<T> {
    pub kmm: Matrix<T>,
    pub kmm_chol: Cholesky<T>,
    pub kmm_inv: Matrix<T>,
    /// `K_mm⁻¹ m★`
    pub alpha: Vec<T>,
    pub s_chol: Matrix<T>,
    pub s: Matrix<T>,
    pub kl: T,
    variance: T,
    beta: T,
    inv_sq: Vec<T>,
}

/// Per-observation pieces of the objective.
#[derive(Clone, Debug)]
pub struct ObservationTerms<T> {
    /// `k_i = Σ(z★, x_i)`
    pub k: Vec<T>,
    /// `K_mm⁻¹ k_i`
    pub a: Vec<T>,
    /// `k̃_ii = σ²_f − k_iᵀK_mm⁻¹k_i`
    pub k_tilde: T,
    /// predictive mean `k_iᵀK_mm⁻¹m★`
    pub mean: T,
    /// `S★ a`
    pub s_a: Vec<T>,
    /// `tr(S★Λ_i) = β aᵀS★a`
    pub trace: T,
}

impl<T: Scalar> ElboWorkspace<T> {
    pub fn new(state: &VariationalState<T>) -> Result<Self> {
        let z = &state.inducing;
        let m = z.rows();
        let variance = state.kernel.variance();
        let inv_sq = state.kernel.inv_sq_lengthscales();
        let kmm_raw = Matrix::from_fn(m, m, |p, q| kernel_eval(variance, &inv_sq, z.row(p), z.row(q)));
        let kmm_chol = Cholesky::jittered(&kmm_raw, variance, "inducing Gram K_mm")?;
        let mut kmm = kmm_raw;
        kmm.add_diagonal(kmm_chol.jitter());
        let kmm_inv = kmm_chol.inverse();
        let alpha = kmm_chol.solve(&state.mean);
        let s_chol = state.chol_factor();
        let s = s_chol.matmul(&s_chol.transpose());

        let half = T::of(0.5);
        let trace_kinv_s = (0..m)
            .map(|p| dot(kmm_inv.row(p), s.row(p)))
            .sum::<T>();
        let log_det_s = (0..m)
            .map(|p| T::of(2.0) * state.chol_packed[ParamLayout::packed_index(p, p)])
            .sum::<T>();
        let kl = half
            * (trace_kinv_s + dot(&state.mean, &alpha) - T::of_usize(m) + kmm_chol.log_det() - log_det_s);
        Ok(ElboWorkspace {
            kmm,
            kmm_chol,
            kmm_inv,
            alpha,
            s_chol,
            s,
            kl,
            variance,
            beta: state.kernel.noise_precision(),
            inv_sq,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.kmm.rows()
    }

    pub fn observation(&self, state: &VariationalState<T>, x: &[T]) -> ObservationTerms<T> {
        let z = &state.inducing;
        let k: Vec<T> = (0..z.rows())
            .map(|p| kernel_eval(self.variance, &self.inv_sq, x, z.row(p)))
            .collect();
        let a = self.kmm_chol.solve(&k);
        let k_tilde = self.variance - dot(&k, &a);
        let mean = dot(&k, &self.alpha);
        let s_a = self.s.matvec(&a);
        let trace = self.beta * dot(&a, &s_a);
        ObservationTerms {
            k,
            a,
            k_tilde,
            mean,
            s_a,
            trace,
        }
    }

    /// `Λ_i = β(K_mm⁻¹k_i)(K_mm⁻¹k_i)ᵀ`
    pub fn lambda(&self, obs: &ObservationTerms<T>) -> Matrix<T> {
        let m = obs.a.len();
        Matrix::from_fn(m, m, |p, q| self.beta * obs.a[p] * obs.a[q])
    }

    /// ℓ(x, y) with the KL amortized over `n_total`.
    pub fn term(&self, state: &VariationalState<T>, x: &[T], y: T, n_total: T) -> T {
        let obs = self.observation(state, x);
        self.data_term(&obs, y) - self.kl / n_total
    }

    fn data_term(&self, obs: &ObservationTerms<T>, y: T) -> T {
        let half = T::of(0.5);
        let r = y - obs.mean;
        half * self.beta.ln() - half * (T::of(2.0) * T::PI()).ln() - half * self.beta * r * r
            - half * (self.beta * obs.k_tilde + obs.trace)
    }
}

fn check_n_total<T: Scalar>(n_total: T) -> Result<()> {
    if n_total > T::zero() && n_total.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("KL amortizer must be positive, got {n_total}")))
    }
}

fn check_batch<T: Scalar>(coords: &Matrix<T>, responses: &[T], state: &VariationalState<T>) -> Result<()> {
    if coords.rows() != responses.len() {
        return Err(Error::config(format!(
            "batch has {} inputs but {} responses",
            coords.rows(),
            responses.len()
        )));
    }
    if coords.rows() > 0 && coords.cols() != state.dim() {
        return Err(Error::config(format!(
            "batch dimension {} does not match model dimension {}",
            coords.cols(),
            state.dim()
        )));
    }
    Ok(())
}

/// Single-observation objective ℓ(x, y, φ) with KL amortizer `n_total`.
pub fn elbo_term<T: Scalar>(x: &[T], y: T, state: &VariationalState<T>, n_total: T) -> Result<T> {
    check_n_total(n_total)?;
    if x.len() != state.dim() {
        return Err(Error::config("observation dimension does not match model"));
    }
    let ws = ElboWorkspace::new(state)?;
    Ok(ws.term(state, x, y, n_total))
}

/// Weighted multi-partition objective `Σ_k w_k Σ_i ℓ(x_ki, y_ki, φ)` with the
/// KL amortized over `Σ_k w_k n_k`, so the KL is counted exactly once.
pub fn elbo<T: Scalar>(parts: &[PartitionData<T>], state: &VariationalState<T>, weights: &[T]) -> Result<T> {
    let n_eff = weighted_count(parts, weights)?;
    let ws = ElboWorkspace::new(state)?;
    let mut total = T::zero();
    for (part, &w) in parts.iter().zip(weights) {
        check_batch(&part.coords, &part.responses, state)?;
        let mut sum = T::zero();
        for (i, &y) in part.responses.iter().enumerate() {
            sum = sum + ws.term(state, part.coords.row(i), y, n_eff);
        }
        total = total + w * sum;
    }
    Ok(total)
}

/// Gradient of [`elbo`], assembled from per-partition [`elbo_grad`] calls.
pub fn elbo_gradient_weighted<T: Scalar>(
    parts: &[PartitionData<T>],
    state: &VariationalState<T>,
    weights: &[T],
) -> Result<GradientVector<T>> {
    let n_eff = weighted_count(parts, weights)?;
    let mut total = GradientVector::zeros(state.layout());
    for (part, &w) in parts.iter().zip(weights) {
        if part.is_empty() || w == T::zero() {
            continue;
        }
        total.add_assign(&elbo_grad(&part.coords, &part.responses, state, w, n_eff)?);
    }
    Ok(total)
}

fn weighted_count<T: Scalar>(parts: &[PartitionData<T>], weights: &[T]) -> Result<T> {
    if parts.len() != weights.len() {
        return Err(Error::config("one weight per partition is required"));
    }
    if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
        return Err(Error::config("partition weights must be finite and non-negative"));
    }
    if !weights.iter().any(|&w| w > T::zero()) {
        return Err(Error::config("at least one partition weight must be positive"));
    }
    let n_eff = parts
        .iter()
        .zip(weights)
        .map(|(p, &w)| w * T::of_usize(p.len()))
        .fold(T::zero(), |a, b| a + b);
    check_n_total(n_eff)?;
    Ok(n_eff)
}

/// `scale · Σ_i ∇ℓ(x_i, y_i, φ)` over the batch, in the unconstrained parameterization.
pub fn elbo_grad<T: Scalar>(
    coords: &Matrix<T>,
    responses: &[T],
    state: &VariationalState<T>,
    scale: T,
    n_total: T,
) -> Result<GradientVector<T>> {
    if responses.is_empty() {
        return Err(Error::config("gradient batch is empty"));
    }
    elbo_value_and_grad(coords, responses, state, scale, n_total).map(|(_, g)| g)
}

/// Batch objective `scale · Σ_i ℓ_i` together with its gradient.
pub fn elbo_value_and_grad<T: Scalar>(
    coords: &Matrix<T>,
    responses: &[T],
    state: &VariationalState<T>,
    scale: T,
    n_total: T,
) -> Result<(T, GradientVector<T>)> {
    check_n_total(n_total)?;
    check_batch(coords, responses, state)?;
    let ws = ElboWorkspace::new(state)?;
    let layout = state.layout();
    let m = layout.num_inducing;
    let d = layout.dim;
    let z = &state.inducing;
    let beta = ws.beta;
    let variance = ws.variance;
    let half = T::of(0.5);
    let l = &ws.s_chol;

    let mut g_mean = vec![T::zero(); m];
    let mut g_l: Matrix<T> = Matrix::zeros(m, m);
    let mut g_kmm: Matrix<T> = Matrix::zeros(m, m);
    let mut g_z: Matrix<T> = Matrix::zeros(m, d);
    let mut g_log_ls = vec![T::zero(); d];
    let mut g_log_var = T::zero();
    let mut g_beta = T::zero();
    let mut value = T::zero();

    for (i, &y) in responses.iter().enumerate() {
        let x = coords.row(i);
        let obs = ws.observation(state, x);
        let r = y - obs.mean;
        value = value + ws.data_term(&obs, y);

        for p in 0..m {
            g_mean[p] = g_mean[p] + beta * r * obs.a[p];
        }
        // ∂/∂L of −½β aᵀLLᵀa is −β a (Lᵀa)ᵀ
        let lt_a = l.t_matvec(&obs.a);
        for p in 0..m {
            for q in 0..=p {
                g_l[(p, q)] = g_l[(p, q)] - beta * obs.a[p] * lt_a[q];
            }
        }
        // gradient w.r.t. a = K⁻¹k from the residual and trace terms
        let g_a: Vec<T> = (0..m)
            .map(|p| beta * r * state.mean[p] - beta * obs.s_a[p])
            .collect();
        let h = ws.kmm_chol.solve(&g_a);
        for p in 0..m {
            for q in 0..m {
                g_kmm[(p, q)] = g_kmm[(p, q)] - h[p] * obs.a[q] - half * beta * obs.a[p] * obs.a[q];
            }
        }
        // chain through k_i = Σ(z★, x_i)
        for p in 0..m {
            let w = (h[p] + beta * obs.a[p]) * obs.k[p];
            g_log_var = g_log_var + w;
            let zp = z.row(p);
            for dd in 0..d {
                let diff = x[dd] - zp[dd];
                g_log_ls[dd] = g_log_ls[dd] + w * diff * diff * ws.inv_sq[dd];
                g_z[(p, dd)] = g_z[(p, dd)] + w * diff * ws.inv_sq[dd];
            }
        }
        // Σ(x_i, x_i) = σ²_f inside k̃
        g_log_var = g_log_var - half * beta * variance;
        g_beta = g_beta + half / beta - half * r * r - half * obs.k_tilde - half * obs.trace / beta;
    }

    // KL(q ‖ p) amortized over n_total, once per observation in the batch
    let c = T::of_usize(responses.len()) / n_total;
    value = value - c * ws.kl;
    for p in 0..m {
        g_mean[p] = g_mean[p] - c * ws.alpha[p];
    }
    let kinv_l = ws.kmm_inv.matmul(l);
    for p in 0..m {
        for q in 0..=p {
            g_l[(p, q)] = g_l[(p, q)] - c * kinv_l[(p, q)];
        }
        g_l[(p, p)] = g_l[(p, p)] + c / l[(p, p)];
    }
    let kinv_s_kinv = ws.kmm_inv.matmul(&ws.s).matmul(&ws.kmm_inv);
    for p in 0..m {
        for q in 0..m {
            g_kmm[(p, q)] = g_kmm[(p, q)]
                + half * c * (kinv_s_kinv[(p, q)] + ws.alpha[p] * ws.alpha[q] - ws.kmm_inv[(p, q)]);
        }
    }
    // chain through K_mm = σ²_f(C(z★, z★) + jitter·I)
    for p in 0..m {
        for q in 0..m {
            let w = g_kmm[(p, q)] * ws.kmm[(p, q)];
            g_log_var = g_log_var + w;
            if p == q {
                continue;
            }
            for dd in 0..d {
                let diff = z[(p, dd)] - z[(q, dd)];
                g_log_ls[dd] = g_log_ls[dd] + w * diff * diff * ws.inv_sq[dd];
                let gz = w * diff * ws.inv_sq[dd];
                g_z[(p, dd)] = g_z[(p, dd)] - gz;
                g_z[(q, dd)] = g_z[(q, dd)] + gz;
            }
        }
    }

    let mut grad = GradientVector::zeros(layout);
    let v = &mut grad.values;
    v[layout.mean()].copy_from_slice(&g_mean);
    let chol_start = layout.chol().start;
    for p in 0..m {
        for q in 0..=p {
            let g = if p == q { g_l[(p, p)] * l[(p, p)] } else { g_l[(p, q)] };
            v[chol_start + ParamLayout::packed_index(p, q)] = g;
        }
    }
    v[layout.inducing()].copy_from_slice(g_z.as_slice());
    v[layout.log_lengthscales()].copy_from_slice(&g_log_ls);
    v[layout.log_variance()] = g_log_var;
    v[layout.log_noise_precision()] = g_beta * beta;
    grad.scale(scale);
    Ok((scale * value, grad))
}
