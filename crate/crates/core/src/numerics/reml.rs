//! REML deviance evaluation and fitting for block-diagonal mixed models.
//!
//! Subjects sharing a design (same arm and observed-time pattern) are
//! collapsed into a single group carrying sufficient statistics
//! (sum of y, sum of y yᵀ), so one deviance evaluation costs O(#patterns)
//! rather than O(#subjects).
//!
//! Deviance convention (fixed so AIC differences are comparable):
//!
//! ```text
//! dev(θ) = Σ_i log|V_i| + log|Σ_i X_iᵀV_i⁻¹X_i| − log|Σ_i X_iᵀX_i|
//!          + Σ_i r_iᵀV_i⁻¹r_i + (N − p) log 2π,
//! ```
//!
//! with r the GLS residual at the profiled fixed effects, and
//! `AIC = dev + 2 (p + dim θ)` counting fixed effects plus covariance
//! parameters. The −log|XᵀX| normalizer makes the restricted likelihood
//! invariant to reparameterizations of the fixed-effect basis, so deviances
//! are comparable across fits whose designs span different column scalings
//! (change-point selection relies on this).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::chol::{chol_psd, decode_factor, ln_det, tri_len};
use crate::numerics::optim::{minimize, OptOptions, OptResult};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Random-effect design for a group.
#[derive(Debug, Clone)]
pub enum ZSpec {
    /// Explicit per-observation random-effect design (mixed models).
    Matrix(DMatrix<f64>),
    /// Observed visit indices into a shared covariance grid (repeated
    /// measures).
    Visits(Vec<usize>),
}

/// Subjects sharing one (design, covariance-pattern) combination.
#[derive(Debug, Clone)]
pub struct SubjectGroup {
    /// Number of subjects collapsed into this group.
    pub m: f64,
    /// Fixed-effect design shared by every subject in the group.
    pub x: DMatrix<f64>,
    pub z: ZSpec,
    /// Σ y_i over subjects in the group.
    pub sum_y: DVector<f64>,
    /// Σ y_i y_iᵀ over subjects in the group.
    pub sum_yy: DMatrix<f64>,
}

impl SubjectGroup {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }
}

/// Covariance model: random effects plus residual, or one unstructured
/// matrix over a visit grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovStructure {
    /// `V_i = Z_i Ψ Z_iᵀ + σ² I` with Ψ unstructured q x q.
    /// theta = logchol(Ψ) followed by log σ.
    RandomEffects { q: usize },
    /// `V_i = Σ[visits_i, visits_i]` with Σ unstructured dim x dim.
    /// theta = logchol(Σ).
    Unstructured { dim: usize },
}

impl CovStructure {
    pub fn theta_dim(&self) -> usize {
        match *self {
            CovStructure::RandomEffects { q } => tri_len(q) + 1,
            CovStructure::Unstructured { dim } => tri_len(dim),
        }
    }
}

enum Decoded {
    RandomEffects { psi: DMatrix<f64>, sigma2: f64 },
    Unstructured { sigma: DMatrix<f64> },
}

/// A REML problem: grouped data plus a covariance structure.
#[derive(Debug, Clone)]
pub struct RemlProblem {
    pub groups: Vec<SubjectGroup>,
    /// Fixed-effect dimension.
    pub p: usize,
    /// Total number of observations.
    pub n_total: usize,
    pub n_subjects: usize,
    pub structure: CovStructure,
}

/// Profiled GLS fixed effects at one covariance value.
#[derive(Debug, Clone)]
pub struct GlsFit {
    pub beta: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub deviance: f64,
}

/// A completed REML fit.
#[derive(Debug, Clone)]
pub struct RemlFit {
    pub theta: Vec<f64>,
    pub beta: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub deviance: f64,
    pub aic: f64,
    pub opt: OptResult,
}

impl RemlProblem {
    pub fn theta_dim(&self) -> usize {
        self.structure.theta_dim()
    }

    /// log|Σ_i X_iᵀX_i|, the basis normalizer in the deviance. Constant in
    /// theta, so it never affects optimization.
    fn ln_det_xtx(&self) -> Option<f64> {
        let mut xtx = DMatrix::<f64>::zeros(self.p, self.p);
        for g in &self.groups {
            xtx += (g.x.transpose() * &g.x) * g.m;
        }
        chol_psd(&xtx).ok().map(|c| ln_det(&c))
    }

    fn decode(&self, theta: &[f64]) -> Option<Decoded> {
        if theta.len() != self.theta_dim() || !theta.iter().all(|v| v.is_finite()) {
            return None;
        }
        match self.structure {
            CovStructure::RandomEffects { q } => {
                let l = decode_factor(&theta[..tri_len(q)], q);
                let psi = &l * l.transpose();
                let sigma2 = (2.0 * theta[tri_len(q)]).exp();
                if psi.iter().all(|v| v.is_finite()) && sigma2.is_finite() {
                    Some(Decoded::RandomEffects { psi, sigma2 })
                } else {
                    None
                }
            }
            CovStructure::Unstructured { dim } => {
                let l = decode_factor(theta, dim);
                let sigma = &l * l.transpose();
                if sigma.iter().all(|v| v.is_finite()) {
                    Some(Decoded::Unstructured { sigma })
                } else {
                    None
                }
            }
        }
    }

    fn build_v(&self, group: &SubjectGroup, decoded: &Decoded) -> DMatrix<f64> {
        match (decoded, &group.z) {
            (Decoded::RandomEffects { psi, sigma2 }, ZSpec::Matrix(z)) => {
                let mut v = z * psi * z.transpose();
                for i in 0..v.nrows() {
                    v[(i, i)] += sigma2;
                }
                v
            }
            (Decoded::Unstructured { sigma }, ZSpec::Visits(idx)) => {
                DMatrix::from_fn(idx.len(), idx.len(), |r, c| sigma[(idx[r], idx[c])])
            }
            _ => panic!("covariance structure does not match group design"),
        }
    }

    /// REML deviance (`reml_deviance`); +inf where the covariance decode or
    /// a factorization fails, so line searches simply reject the point.
    pub fn deviance(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, false)
            .map(|(dev, _)| dev)
            .unwrap_or(f64::INFINITY)
    }

    /// Deviance and its analytic gradient; `None` where not evaluable.
    pub fn deviance_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluate(theta, true)
            .map(|(dev, grad)| (dev, grad.unwrap()))
    }

    fn evaluate(&self, theta: &[f64], want_grad: bool) -> Option<(f64, Option<Vec<f64>>)> {
        let decoded = self.decode(theta)?;
        let p = self.p;

        struct Work {
            w: Option<DMatrix<f64>>,
            wx: DMatrix<f64>,
        }

        let mut logdet_sum = 0.0;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut u = DVector::<f64>::zeros(p);
        let mut t_y = 0.0;
        let mut work: Vec<Work> = Vec::with_capacity(if want_grad { self.groups.len() } else { 0 });

        for g in &self.groups {
            let v = self.build_v(g, &decoded);
            let chol = chol_psd(&v).ok()?;
            logdet_sum += g.m * ln_det(&chol);
            let wx = chol.solve(&g.x);
            let wy = chol.solve(&g.sum_y);
            h += (g.x.transpose() * &wx) * g.m;
            u += g.x.transpose() * &wy;
            t_y += chol.solve(&g.sum_yy).trace();
            if want_grad {
                work.push(Work {
                    w: Some(chol.inverse()),
                    wx,
                });
            }
        }

        let h_chol = chol_psd(&h).ok()?;
        let beta = h_chol.solve(&u);
        let quad = t_y - beta.dot(&u);
        let dev = logdet_sum
            + ln_det(&h_chol)
            - self.ln_det_xtx()?
            + quad
            + (self.n_total as f64 - p as f64) * LN_2PI;
        if !dev.is_finite() {
            return None;
        }
        if !want_grad {
            return Some((dev, None));
        }

        // d dev = Σ_g tr(G_g dV_g) with
        // G_g = m W − m (W X) H⁻¹ (W X)ᵀ − W S_r W.
        let h_inv = h_chol.inverse();
        let mut grad_cov: DMatrix<f64> = match self.structure {
            CovStructure::RandomEffects { q } => DMatrix::zeros(q, q),
            CovStructure::Unstructured { dim } => DMatrix::zeros(dim, dim),
        };
        let mut trace_g_sum = 0.0;

        for (g, wk) in self.groups.iter().zip(&work) {
            let w = wk.w.as_ref().unwrap();
            let fitted = &g.x * &beta;
            let mut s_r = g.sum_yy.clone();
            let n = s_r.nrows();
            for r in 0..n {
                for c in 0..n {
                    s_r[(r, c)] += g.m * fitted[r] * fitted[c]
                        - g.sum_y[r] * fitted[c]
                        - fitted[r] * g.sum_y[c];
                }
            }
            let wxh = &wk.wx * &h_inv;
            let wsw = w * &s_r * w;
            let mut gmat = w * g.m;
            gmat -= &wxh * wk.wx.transpose() * g.m;
            gmat -= &wsw;

            match &g.z {
                ZSpec::Matrix(z) => {
                    grad_cov += z.transpose() * &gmat * z;
                    trace_g_sum += gmat.trace();
                }
                ZSpec::Visits(idx) => {
                    for r in 0..idx.len() {
                        for c in 0..idx.len() {
                            grad_cov[(idx[r], idx[c])] += gmat[(r, c)];
                        }
                    }
                }
            }
        }

        // Chain through the log-Cholesky parameterization: grad_L = 2 D L,
        // with diagonal entries further scaled by L_ii.
        let mut grad = Vec::with_capacity(self.theta_dim());
        match self.structure {
            CovStructure::RandomEffects { q } => {
                let l = decode_factor(&theta[..tri_len(q)], q);
                let dl = 2.0 * &grad_cov * &l;
                for i in 0..q {
                    for j in 0..=i {
                        grad.push(if i == j { dl[(i, i)] * l[(i, i)] } else { dl[(i, j)] });
                    }
                }
                let sigma2 = (2.0 * theta[tri_len(q)]).exp();
                grad.push(trace_g_sum * 2.0 * sigma2);
            }
            CovStructure::Unstructured { dim } => {
                let l = decode_factor(theta, dim);
                let dl = 2.0 * &grad_cov * &l;
                for i in 0..dim {
                    for j in 0..=i {
                        grad.push(if i == j { dl[(i, i)] * l[(i, i)] } else { dl[(i, j)] });
                    }
                }
            }
        }
        Some((dev, Some(grad)))
    }

    /// Profiled GLS fixed effects and their covariance at a given theta.
    pub fn gls(&self, theta: &[f64]) -> Result<GlsFit> {
        let decoded = self.decode(theta).ok_or(Error::NotPD)?;
        self.gls_given_v(|g| self.build_v(g, &decoded))
    }

    /// GLS at an arbitrary per-group covariance (used to pin covariance
    /// values in tests, e.g. a frozen Ψ = 0).
    pub fn gls_given_v(
        &self,
        build_v: impl Fn(&SubjectGroup) -> DMatrix<f64>,
    ) -> Result<GlsFit> {
        let p = self.p;
        let mut logdet_sum = 0.0;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut u = DVector::<f64>::zeros(p);
        let mut t_y = 0.0;
        for g in &self.groups {
            let v = build_v(g);
            let chol = chol_psd(&v)?;
            logdet_sum += g.m * ln_det(&chol);
            let wx = chol.solve(&g.x);
            h += (g.x.transpose() * &wx) * g.m;
            u += g.x.transpose() * chol.solve(&g.sum_y);
            t_y += chol.solve(&g.sum_yy).trace();
        }
        let h_chol = chol_psd(&h).map_err(|_| Error::SingularDesign("X^T V^-1 X"))?;
        let beta = h_chol.solve(&u);
        let quad = t_y - beta.dot(&u);
        let deviance = logdet_sum
            + ln_det(&h_chol)
            - self.ln_det_xtx().ok_or(Error::SingularDesign("X^T X"))?
            + quad
            + (self.n_total as f64 - p as f64) * LN_2PI;
        Ok(GlsFit {
            beta,
            beta_cov: h_chol.inverse(),
            deviance,
        })
    }

    /// Minimize the REML deviance from `theta0` and return the fit at the
    /// best point found. `converged` in the embedded [`OptResult`] reflects
    /// both the optimizer criteria and a finite-difference stationarity
    /// check.
    pub fn fit(&self, theta0: &[f64], opts: &OptOptions) -> Result<RemlFit> {
        // Pooled-design rank check up front: X must have full column rank.
        let mut xtx = DMatrix::<f64>::zeros(self.p, self.p);
        for g in &self.groups {
            xtx += (g.x.transpose() * &g.x) * g.m;
        }
        chol_psd(&xtx).map_err(|_| Error::SingularDesign("pooled X^T X"))?;

        let objective = |theta: &[f64]| self.deviance(theta);
        let gradient =
            |theta: &[f64]| self.deviance_grad(theta).map(|(_, g)| g);

        let opt = match minimize(&objective, Some(&gradient), theta0, opts) {
            Ok(opt) => opt,
            Err(Error::NoConvergence {
                restarts,
                best_value,
                best_theta,
                n_iter,
            }) => {
                if !best_value.is_finite() {
                    return Err(Error::NoConvergence {
                        restarts,
                        best_value,
                        best_theta,
                        n_iter,
                    });
                }
                OptResult {
                    theta: best_theta,
                    value: best_value,
                    n_iter,
                    converged: false,
                    restarts_used: restarts,
                }
            }
            Err(e) => return Err(e),
        };

        let gls = self.gls(&opt.theta)?;
        let aic = gls.deviance + 2.0 * (self.p + self.theta_dim()) as f64;
        Ok(RemlFit {
            theta: opt.theta.clone(),
            beta: gls.beta,
            beta_cov: gls.beta_cov,
            deviance: gls.deviance,
            aic,
            opt,
        })
    }
}
