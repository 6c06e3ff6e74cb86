//! Leaf marginal likelihoods against independent computations: a brute-force
//! double integral for continuous leaves and the sequential predictive rule
//! for categorical ones. Each check returns a one-line summary, or the first
//! violation as the error.

use bet_core::likelihood::log_marginal_leaf;
use bet_core::rng::child;
use bet_core::{LeafStats, OutcomeKind};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log ∫∫ prod N(y_i; mu, tau) / tau dmu dtau` by the trapezoid rule on
/// `s = ln tau` and a standardized `mu`. Both integrands are analytic and
/// decay fast, so the rule converges geometrically in the step size.
fn quadrature_log_marginal(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let sse: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let centre = sse.ln();
    let (ds, dz): (f64, f64) = (0.04, 0.08);
    let mut terms = Vec::new();
    let mut s = centre - 40.0;
    while s <= centre + 90.0 {
        let tau = s.exp();
        let scale = (tau / n).sqrt();
        let mut inner = Vec::new();
        let mut z = -12.0;
        while z <= 12.0 {
            let mu = ybar + scale * z;
            let ll: f64 = ys
                .iter()
                .map(|y| {
                    -0.5 * (2.0 * std::f64::consts::PI * tau).ln() - (y - mu).powi(2) / (2.0 * tau)
                })
                .sum();
            inner.push(ll);
            z += dz;
        }
        // dtau / tau = ds, dmu = scale dz
        terms.push(log_sum_exp(&inner) + (scale * dz).ln() + ds.ln());
        s += ds;
    }
    log_sum_exp(&terms)
}

fn continuous_stats(ys: &[f64]) -> LeafStats {
    let mut s = LeafStats::empty(OutcomeKind::Continuous);
    for &y in ys {
        s.push(y);
    }
    s
}

/// 100 random continuous leaves with 2 to 6 rows, relative error below 1e-6.
pub fn continuous_matches_quadrature() -> Result<String, String> {
    let mut rng = child(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let centre = rng.random_range(-5.0..5.0);
        let sd = 10f64.powf(rng.random_range(-1.5..1.0));
        let noise = Normal::new(centre, sd).unwrap();
        let ys: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
        let exact = log_marginal_leaf(&continuous_stats(&ys), 0.0).unwrap();
        let numeric = quadrature_log_marginal(&ys);
        // relative error of the marginal itself, not of its log
        let rel = (exact - numeric).exp_m1().abs();
        if rel >= 1e-6 {
            return Err(format!(
                "ys={ys:?}: closed form {exact}, quadrature {numeric}"
            ));
        }
        worst = worst.max(rel);
    }
    Ok(format!("100 leaves, max relative error {worst:.1e}"))
}

/// Probability of one particular label sequence under the Dirichlet(1/2)
/// prior, multiplying one-step-ahead predictive probabilities.
fn sequential_predictive(seq: &[usize], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    let mut p = 1.0;
    for (i, &label) in seq.iter().enumerate() {
        p *= (counts[label] as f64 + 0.5) / (i as f64 + 0.5 * k as f64);
        counts[label] += 1;
    }
    p
}

fn sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

fn categorical_stats(seq: &[usize], k: usize) -> LeafStats {
    let mut counts = vec![0; k];
    for &c in seq {
        counts[c] += 1;
    }
    LeafStats::Categorical { counts }
}

/// Every label sequence with n <= 4 and K <= 3, absolute error below 1e-12.
pub fn categorical_matches_sequential_predictive() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 2..=3 {
        for n in 0..=4 {
            for seq in sequences(n, k) {
                let exact = log_marginal_leaf(&categorical_stats(&seq, k), 0.0)
                    .unwrap()
                    .exp();
                let oracle = sequential_predictive(&seq, k);
                let err = (exact - oracle).abs();
                if err >= 1e-12 {
                    return Err(format!("k={k} seq={seq:?}: {exact} vs {oracle}"));
                }
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} sequences, max error {worst:.1e}"))
}

/// Sequence probabilities sum to one for every n <= 4, K <= 3.
pub fn categorical_is_normalized() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for k in 2..=3 {
        for n in 1..=4 {
            let total: f64 = sequences(n, k)
                .iter()
                .map(|seq| {
                    log_marginal_leaf(&categorical_stats(seq, k), 0.0)
                        .unwrap()
                        .exp()
                })
                .sum();
            if (total - 1.0).abs() >= 1e-9 {
                return Err(format!("k={k} n={n}: total {total}"));
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok(format!("max deviation {worst:.1e}"))
}
