use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_len, two_sided_p, StatsError};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub hazard_ratio: Vec<f64>,
    pub std_err: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Risk-set sums needed for the Breslow log-likelihood and its derivatives.
struct Derivs {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Subjects sorted by descending time, grouped into blocks of equal time.
struct TimeBlocks {
    order: Vec<usize>,
    starts: Vec<usize>,
}

impl TimeBlocks {
    fn new(times: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut starts = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            if k == 0 || times[i] != times[order[k - 1]] {
                starts.push(k);
            }
        }
        starts.push(order.len());
        Self { order, starts }
    }
}

fn derivs(z: &[Vec<f64>], events: &[bool], blocks: &TimeBlocks, beta: &[f64], second: bool) -> Derivs {
    let p = beta.len();
    let eta: Vec<f64> = z.iter().map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for w in blocks.starts.windows(2) {
        let block = &blocks.order[w[0]..w[1]];
        // tied subjects join the risk set together (Breslow)
        for &i in block {
            let r = (eta[i] - shift).exp();
            let zi = DVector::from_column_slice(&z[i]);
            s0 += r;
            s1.axpy(r, &zi, 1.0);
            if second {
                s2.ger(r, &zi, &zi, 1.0);
            }
        }
        let mean = &s1 / s0;
        for &i in block.iter().filter(|&&i| events[i]) {
            loglik += eta[i] - shift - s0.ln();
            for k in 0..p {
                score[k] += z[i][k] - mean[k];
            }
            if second {
                info += &s2 / s0 - &mean * mean.transpose();
            }
        }
    }
    Derivs { loglik, score, info }
}

/// Breslow partial log-likelihood at `beta`.
pub fn partial_log_likelihood(z: &[Vec<f64>], times: &[f64], events: &[bool], beta: &[f64]) -> f64 {
    derivs(z, events, &TimeBlocks::new(times), beta, false).loglik
}

/// Maximize the Breslow partial likelihood by step-halving Newton iteration
/// from β = 0. Non-convergence is reported through `converged`, not as an
/// error.
pub fn cox_fit(z: &[Vec<f64>], times: &[f64], events: &[bool]) -> Result<CoxFit, StatsError> {
    let n = times.len();
    if n == 0 {
        return Err(StatsError::Empty("cox input"));
    }
    check_len("covariate rows", n, z.len())?;
    check_len("events", n, events.len())?;
    let p = z[0].len();
    if p == 0 {
        return Err(StatsError::Empty("covariates"));
    }
    for row in z {
        check_len("covariate row", p, row.len())?;
    }
    if z.iter().flatten().chain(times).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("cox input"));
    }
    if !events.iter().any(|&e| e) {
        return Err(StatsError::NoEvents);
    }
    if let Some(k) = (0..p).find(|&k| z.iter().all(|r| r[k] == z[0][k])) {
        return Err(StatsError::ConstantCovariate(k));
    }

    let blocks = TimeBlocks::new(times);
    let mut beta = vec![0.0; p];
    let mut d = derivs(z, events, &blocks, &beta, true);
    let mut iterations = 0;
    let mut converged = d.score.amax() < SCORE_TOL;
    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let chol = d.info.clone().cholesky().ok_or(StatsError::SingularInformation)?;
        let step = chol.solve(&d.score);
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let dc = derivs(z, events, &blocks, &cand, true);
            if dc.loglik.is_finite() && dc.loglik >= d.loglik - 1e-12 * d.loglik.abs().max(1.0) {
                next = Some((cand, dc));
                break;
            }
            scale *= 0.5;
        }
        let Some((b, dc)) = next else { break };
        beta = b;
        d = dc;
        converged = d.score.amax() < SCORE_TOL;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(StatsError::NonFinite("cox coefficients"));
    }
    let inv = d.info.clone().cholesky().ok_or(StatsError::SingularInformation)?.inverse();
    let std_err: Vec<f64> = (0..p).map(|k| inv[(k, k)].sqrt()).collect();
    let zs: Vec<f64> = beta.iter().zip(&std_err).map(|(b, s)| b / s).collect();
    Ok(CoxFit {
        hazard_ratio: beta.iter().map(|b| b.exp()).collect(),
        p: zs.iter().map(|&v| two_sided_p(v)).collect(),
        z: zs,
        std_err,
        beta,
        log_likelihood: d.loglik,
        iterations,
        converged,
    })
}
