//! Design-matrix construction shared by the model-based estimators.
//!
//! Subjects with the same arm and observed-time pattern share both their
//! fixed-effect and random-effect designs, so they collapse into one
//! [`SubjectGroup`] carrying sufficient statistics. Continuous-time models
//! are built on standardized time t / t_max, which keeps the optimizer
//! well-scaled and makes time-rescaled inputs solve the identical internal
//! problem; coefficients and covariances are mapped back afterwards.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{ArmId, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::numerics::chol::chol_psd;
use crate::numerics::reml::{CovStructure, RemlProblem, SubjectGroup, ZSpec};

/// Accumulates one (arm, time-pattern) group.
struct Accum {
    m: usize,
    sum_y: DVector<f64>,
    sum_yy: DMatrix<f64>,
}

/// Grouped raw data: one entry per distinct (arm, observed times) pattern.
pub(crate) struct Grouped {
    pub arm: ArmId,
    pub times: Vec<f64>,
    pub m: f64,
    pub sum_y: DVector<f64>,
    pub sum_yy: DMatrix<f64>,
}

/// Grouping centers the response at the pooled mean `y_offset`; intercept
/// and visit-mean coefficients must be shifted back by the caller. This
/// keeps the accumulated quadratic forms at residual scale, which matters
/// for the deviance's cancellation error.
pub(crate) fn group_by_pattern(ds: &LongitudinalDataset, y_offset: f64) -> Vec<Grouped> {
    let mut map: BTreeMap<(ArmId, Vec<u64>), Accum> = BTreeMap::new();
    for s in ds.subjects() {
        let key = (
            s.arm,
            s.times.iter().map(|t| t.to_bits()).collect::<Vec<_>>(),
        );
        let n = s.times.len();
        let y = DVector::from_iterator(n, s.values.iter().map(|v| v - y_offset));
        let entry = map.entry(key).or_insert_with(|| Accum {
            m: 0,
            sum_y: DVector::zeros(n),
            sum_yy: DMatrix::zeros(n, n),
        });
        entry.m += 1;
        entry.sum_y += &y;
        entry.sum_yy += &y * y.transpose();
    }
    map.into_iter()
        .map(|((arm, bits), acc)| Grouped {
            arm,
            times: bits.iter().map(|b| f64::from_bits(*b)).collect(),
            m: acc.m as f64,
            sum_y: acc.sum_y,
            sum_yy: acc.sum_yy,
        })
        .collect()
}

/// Continuous-time fixed-effect design with per-arm intercept shifts and
/// slope interactions, on standardized time. With a hinge, per-arm hinge
/// interactions are appended.
pub(crate) struct ContinuousDesign {
    pub problem: RemlProblem,
    pub names: Vec<String>,
    /// Multipliers mapping standardized-scale coefficients back to original
    /// units (elementwise on beta; outer product on the covariance).
    pub back_scale: Vec<f64>,
    pub t_max: f64,
    /// Pooled response mean subtracted before fitting; add back to the
    /// intercept coefficient.
    pub y_offset: f64,
}

pub(crate) fn continuous_design(
    ds: &LongitudinalDataset,
    hinge_tau0: Option<f64>,
) -> Result<ContinuousDesign> {
    let grid = ds.visit_grid();
    if grid.len() < 2 {
        return Err(Error::SingularDesign("need at least 2 distinct times"));
    }
    let t_max = *grid.last().unwrap();
    let k_arms = ds.n_arms();
    let tau_std = hinge_tau0.map(|t| t / t_max);

    let base_cols = if tau_std.is_some() { 3 } else { 2 };
    let per_arm = base_cols; // intercept shift + slope (+ hinge) interaction
    let p = base_cols + per_arm * (k_arms - 1);

    let mut names = Vec::with_capacity(p);
    names.push("intercept".to_string());
    names.push("time".to_string());
    if tau_std.is_some() {
        names.push("hinge".to_string());
    }
    for a in 1..k_arms {
        names.push(format!("arm{a}"));
    }
    for a in 1..k_arms {
        names.push(format!("arm{a}:time"));
    }
    if tau_std.is_some() {
        for a in 1..k_arms {
            names.push(format!("arm{a}:hinge"));
        }
    }

    let mut back_scale = vec![1.0; p];
    let inv_t = 1.0 / t_max;
    back_scale[1] = inv_t;
    if tau_std.is_some() {
        back_scale[2] = inv_t;
    }
    let arm_block = base_cols;
    for a in 1..k_arms {
        back_scale[arm_block + (k_arms - 1) + (a - 1)] = inv_t; // arm:time
        if tau_std.is_some() {
            back_scale[arm_block + 2 * (k_arms - 1) + (a - 1)] = inv_t; // arm:hinge
        }
    }

    let q = base_cols; // random intercept, slope (, hinge)
    let y_offset = response_mean(ds);
    let grouped = group_by_pattern(ds, y_offset);
    let mut groups = Vec::with_capacity(grouped.len());
    let mut n_total = 0usize;
    for g in grouped {
        let n = g.times.len();
        n_total += n * g.m as usize;
        let mut x = DMatrix::zeros(n, p);
        let mut z = DMatrix::zeros(n, q);
        for (r, &t) in g.times.iter().enumerate() {
            let tau = t / t_max;
            x[(r, 0)] = 1.0;
            x[(r, 1)] = tau;
            z[(r, 0)] = 1.0;
            z[(r, 1)] = tau;
            if let Some(t0) = tau_std {
                let h = (tau - t0).max(0.0);
                x[(r, 2)] = h;
                z[(r, 2)] = h;
            }
            if g.arm > 0 {
                let a = g.arm as usize;
                x[(r, arm_block + (a - 1))] = 1.0;
                x[(r, arm_block + (k_arms - 1) + (a - 1))] = tau;
                if let Some(t0) = tau_std {
                    x[(r, arm_block + 2 * (k_arms - 1) + (a - 1))] = (tau - t0).max(0.0);
                }
            }
        }
        groups.push(SubjectGroup {
            m: g.m,
            x,
            z: ZSpec::Matrix(z),
            sum_y: g.sum_y,
            sum_yy: g.sum_yy,
        });
    }

    Ok(ContinuousDesign {
        problem: RemlProblem {
            groups,
            p,
            n_total,
            n_subjects: ds.subjects().len(),
            structure: CovStructure::RandomEffects { q },
        },
        names,
        back_scale,
        t_max,
        y_offset,
    })
}

/// Discrete-visit fixed-effect design: one mean per visit plus per-arm
/// per-visit difference parameters. With a shared baseline the arm
/// differences start at the first post-baseline visit.
pub(crate) struct VisitDesign {
    pub problem: RemlProblem,
    pub names: Vec<String>,
    pub grid: Vec<f64>,
    /// Column of the reference mean at visit j.
    pub visit_cols: Vec<usize>,
    /// `arm_cols[a-1][j]` = column of the arm-a difference at visit j, or
    /// `None` where the difference is pinned to zero (shared baseline).
    pub arm_cols: Vec<Vec<Option<usize>>>,
    /// Pooled response mean subtracted before fitting; add back to the
    /// reference visit-mean coefficients.
    pub y_offset: f64,
}

pub(crate) fn visit_design(
    ds: &LongitudinalDataset,
    separate_baseline: bool,
) -> Result<VisitDesign> {
    let grid = ds.visit_grid().to_vec();
    let n_visits = grid.len();
    if n_visits < 2 {
        return Err(Error::SingularDesign("need at least 2 distinct visits"));
    }
    let k_arms = ds.n_arms();

    // Every arm must populate every visit cell it parameterizes.
    let counts = ds.cell_counts();
    for arm in 0..k_arms as u8 {
        for (j, &t) in grid.iter().enumerate() {
            if j == 0 {
                continue; // baseline guaranteed per subject
            }
            if !counts.contains_key(&(arm, t.to_bits())) {
                return Err(Error::EmptyCell { arm, time: t });
            }
        }
    }

    let first_diff = usize::from(!separate_baseline);
    let diffs_per_arm = n_visits - first_diff;
    let p = n_visits + diffs_per_arm * (k_arms - 1);

    let mut names: Vec<String> = (0..n_visits).map(|j| format!("visit{j}")).collect();
    let visit_cols: Vec<usize> = (0..n_visits).collect();
    let mut arm_cols = Vec::with_capacity(k_arms - 1);
    let mut next = n_visits;
    for a in 1..k_arms {
        let mut cols = Vec::with_capacity(n_visits);
        for j in 0..n_visits {
            if j < first_diff {
                cols.push(None);
            } else {
                names.push(format!("arm{a}:visit{j}"));
                cols.push(Some(next));
                next += 1;
            }
        }
        arm_cols.push(cols);
    }

    let index_of = |t: f64| grid.iter().position(|&g| g.to_bits() == t.to_bits());
    let y_offset = response_mean(ds);
    let grouped = group_by_pattern(ds, y_offset);
    let mut groups = Vec::with_capacity(grouped.len());
    let mut n_total = 0usize;
    for g in grouped {
        let n = g.times.len();
        n_total += n * g.m as usize;
        let idx: Vec<usize> = g
            .times
            .iter()
            .map(|&t| index_of(t).expect("time not on dataset grid"))
            .collect();
        let mut x = DMatrix::zeros(n, p);
        for (r, &j) in idx.iter().enumerate() {
            x[(r, visit_cols[j])] = 1.0;
            if g.arm > 0 {
                if let Some(col) = arm_cols[g.arm as usize - 1][j] {
                    x[(r, col)] = 1.0;
                }
            }
        }
        groups.push(SubjectGroup {
            m: g.m,
            x,
            z: ZSpec::Visits(idx),
            sum_y: g.sum_y,
            sum_yy: g.sum_yy,
        });
    }

    Ok(VisitDesign {
        problem: RemlProblem {
            groups,
            p,
            n_total,
            n_subjects: ds.subjects().len(),
            structure: CovStructure::Unstructured { dim: n_visits },
        },
        names,
        grid,
        visit_cols,
        arm_cols,
        y_offset,
    })
}

/// Pooled OLS over the grouped design: returns (beta, rss, n).
/// The normal equations reuse the group sufficient statistics.
pub(crate) fn pooled_ols(problem: &RemlProblem) -> Result<(DVector<f64>, f64, usize)> {
    let p = problem.p;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut yty = 0.0;
    for g in &problem.groups {
        xtx += (g.x.transpose() * &g.x) * g.m;
        xty += g.x.transpose() * &g.sum_y;
        yty += g.sum_yy.trace();
    }
    let chol = chol_psd(&xtx).map_err(|_| Error::SingularDesign("pooled X^T X"))?;
    let beta = chol.solve(&xty);
    let rss = (yty - beta.dot(&xty)).max(0.0);
    Ok((beta, rss, problem.n_total))
}

/// Pooled response mean.
pub(crate) fn response_mean(ds: &LongitudinalDataset) -> f64 {
    let mut n = 0.0;
    let mut mean = 0.0;
    for m in ds.measurements() {
        n += 1.0;
        mean += (m.egfr - mean) / n;
    }
    mean
}

/// Pooled response variance, used to scale degeneracy thresholds and
/// starting-value floors.
pub(crate) fn response_variance(ds: &LongitudinalDataset) -> f64 {
    let mut n = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for meas in ds.measurements() {
        n += 1.0;
        let d = meas.egfr - mean;
        mean += d / n;
        m2 += d * (meas.egfr - mean);
    }
    if n > 1.0 {
        m2 / (n - 1.0)
    } else {
        0.0
    }
}
