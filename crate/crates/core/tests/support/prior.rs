//! With the likelihood switched off the samplers must reproduce their priors:
//! split, covariate and threshold frequencies of the tree sweep, the DP's
//! expected cluster count, and the conjugate posterior means of leaf draws.
//! Each check returns a one-line summary, or the first violation as the error.

use bet_core::likelihood::{
    draw_leaf_params, sample_dirichlet, split_prior, valid_threshold_range, TreePrior,
};
use bet_core::rng::child;
use bet_core::{
    run_chain, ChainConfig, Dataset, LeafParams, LeafPrior, LeafStats, OutcomeKind, Tree,
    TreeSampler,
};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const Q: usize = 2;
const CAP: u32 = 3;

fn uniform_data(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = child(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y = (0..n).map(|_| rng.random::<f64>()).collect();
    let names = (0..m).map(|c| format!("x{c}")).collect();
    Dataset::from_rows(&rows, y, OutcomeKind::Continuous, names, "y").unwrap()
}

fn chi2_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64)
        .unwrap()
        .cdf(stat)
}

struct PriorRun {
    /// Per node `k` in `1..7`: draws where it exists, and where it is split.
    exists: [f64; 7],
    split: [f64; 7],
    covariates: Vec<f64>,
    /// Root thresholds binned by their position in the valid grid.
    threshold_bins: Vec<f64>,
}

fn prior_run(delta: f64, xi: &[f64], seed: u64) -> PriorRun {
    let data = uniform_data(1000, xi.len(), seed);
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let mut sampler = TreeSampler::new(
        TreePrior {
            delta,
            depth_cap: CAP,
        },
        LeafPrior::new(Q).unwrap(),
    );
    sampler.flat_likelihood = true;
    let mut tree = Tree::root_only();
    let mut rng = child(seed + 1);
    let mut run = PriorRun {
        exists: [0.0; 7],
        split: [0.0; 7],
        covariates: vec![0.0; xi.len()],
        threshold_bins: vec![0.0; 10],
    };
    let mut scratch = Vec::new();
    let (burn, draws, thin) = (200, 10_000, 10);
    for it in 0..burn + draws * thin {
        sampler.sweep(&mut tree, &data, &rows, xi, &mut rng);
        if it < burn || (it - burn) % thin != 0 {
            continue;
        }
        for k in 1..7 {
            if tree.contains(k) {
                run.exists[k] += 1.0;
                if !tree.is_leaf(k) {
                    run.split[k] += 1.0;
                }
            }
        }
        for (_, var, _) in tree.interior() {
            run.covariates[var] += 1.0;
        }
        if let Some((var, t)) = tree.split(0) {
            let (lo, hi) = valid_threshold_range(&data, &rows, var, Q, &mut scratch);
            let idx = data.thresholds(var).iter().position(|&g| g == t).unwrap();
            assert!(
                (lo..hi).contains(&idx),
                "root threshold outside the valid grid"
            );
            run.threshold_bins[(idx - lo) * 10 / (hi - lo)] += 1.0;
        }
    }
    run
}

/// Per-node split frequencies within 0.02 of the prior and a chi-square
/// p-value above 0.001, for two values of delta.
pub fn split_frequencies() -> Result<String, String> {
    let mut summary = Vec::new();
    for (delta, seed) in [(1.0, 11), (2.0, 12)] {
        let run = prior_run(delta, &[1.0 / 3.0; 3], seed);
        let mut observed = Vec::new();
        let mut expected = Vec::new();
        for k in 1..7 {
            let p = split_prior(k, delta);
            let freq = run.split[k] / run.exists[k];
            if (freq - p).abs() >= 0.02 {
                return Err(format!(
                    "delta={delta} node {k}: frequency {freq} vs prior {p} over {} draws",
                    run.exists[k]
                ));
            }
            observed.extend([run.split[k], run.exists[k] - run.split[k]]);
            expected.extend([p * run.exists[k], (1.0 - p) * run.exists[k]]);
        }
        let p = chi2_p(&observed, &expected);
        if p <= 0.001 {
            return Err(format!("delta={delta}: split frequencies chi2 p = {p}"));
        }
        summary.push(format!("delta={delta} p={p:.3}"));
    }
    Ok(summary.join(", "))
}

/// Covariate choices follow xi and root thresholds follow their exact prior
/// law (chi-square p above 0.001 for both).
pub fn covariates_and_thresholds() -> Result<String, String> {
    let xi = [0.5, 0.3, 0.2];
    let run = prior_run(2.0, &xi, 21);
    let total: f64 = run.covariates.iter().sum();
    let expected: Vec<f64> = xi.iter().map(|x| x * total).collect();
    let p_cov = chi2_p(&run.covariates, &expected);
    if p_cov <= 0.001 {
        return Err(format!(
            "covariate counts {:?}, p = {p_cov}",
            run.covariates
        ));
    }

    // Exact root-threshold law: the grid position `a` (rows sent left) has
    // weight M(a, 1) M(n - a, 1), where M(r, d) is the prior mass of the
    // subtrees below a depth-d node holding r rows. Children too small to
    // split lose mass, so the edges of the grid are slightly less likely.
    let n = 1000;
    let delta = 2.0;
    let mass = subtree_mass(n, delta);
    let weights: Vec<f64> = (Q..=n - Q).map(|a| mass[1][a] * mass[1][n - a]).collect();
    let g = weights.len();
    let total_w: f64 = weights.iter().sum();
    let total: f64 = run.threshold_bins.iter().sum();
    let mut expected = vec![0.0; 10];
    for (i, w) in weights.iter().enumerate() {
        expected[i * 10 / g] += w / total_w * total;
    }
    let p_thr = chi2_p(&run.threshold_bins, &expected);
    if p_thr <= 0.001 {
        return Err(format!(
            "root threshold bins {:?}, p = {p_thr}",
            run.threshold_bins
        ));
    }
    Ok(format!("covariates p={p_cov:.3}, thresholds p={p_thr:.3}"))
}

/// `mass[d][r]`: prior mass of all subtrees rooted at a depth-`d` node with
/// `r` rows whose covariate values are distinct.
fn subtree_mass(n: usize, delta: f64) -> Vec<Vec<f64>> {
    let cap = CAP as usize;
    let mut mass = vec![vec![1.0; n + 1]; cap + 1];
    for d in (1..cap).rev() {
        let p = (-(d as f64) / delta).exp();
        for r in 0..=n {
            mass[d][r] = if r < 2 * Q {
                1.0 - p
            } else {
                let sum: f64 = (Q..=r - Q)
                    .map(|a| mass[d + 1][a] * mass[d + 1][r - a])
                    .sum();
                1.0 - p + p * sum / (r - 2 * Q + 1) as f64
            };
        }
    }
    mass
}

/// Mean occupied-cluster count within 10% of `sum_i alpha / (alpha + i - 1)`.
pub fn dp_cluster_count() -> Result<String, String> {
    let data = uniform_data(50, 1, 31);
    let mut summary = Vec::new();
    for alpha in [1.0, 2.0] {
        let config = ChainConfig {
            iterations: 11_000,
            burn_in: 1_000,
            seed: 32,
            alpha,
            q: Q,
            flat_likelihood: true,
            ..ChainConfig::default()
        };
        let out = run_chain(&data, &config).map_err(|e| e.to_string())?;
        let retained: Vec<f64> = out.trace.retained().map(|r| r.occupied as f64).collect();
        let mean = retained.iter().sum::<f64>() / retained.len() as f64;
        let expected: f64 = (1..=50).map(|i| alpha / (alpha + i as f64 - 1.0)).sum();
        let rel = (mean - expected) / expected;
        if rel.abs() >= 0.10 {
            return Err(format!("alpha={alpha}: mean occupied {mean} vs {expected}"));
        }
        summary.push(format!("alpha={alpha}: {mean:.2} vs {expected:.2}"));
    }
    Ok(summary.join(", "))
}

/// Distance of the sample mean from `target` in standard errors; an error
/// past 3.
fn mc_mean_check(samples: &[f64], target: f64, what: &str) -> Result<f64, String> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = (mean - target).abs() / se;
    if z >= 3.0 {
        return Err(format!("{what}: mean {mean} vs {target} (se {se})"));
    }
    Ok(z)
}

/// Dirichlet and Beta leaf draws and the Dirichlet sampler have the right
/// means, within 3 standard errors over 1e5 draws.
pub fn dirichlet_and_beta_means() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut rng = child(41);
    let draws = 100_000;
    for counts in [vec![3usize, 9], vec![0, 4], vec![2, 0, 5]] {
        let k = counts.len();
        let n: usize = counts.iter().sum();
        let stats = LeafStats::Categorical {
            counts: counts.clone(),
        };
        let mut samples = vec![Vec::with_capacity(draws); k];
        for _ in 0..draws {
            let LeafParams::Categorical { probs } =
                draw_leaf_params(&stats, 0.0, &mut rng).unwrap()
            else {
                panic!("categorical stats give categorical draws");
            };
            for (s, p) in samples.iter_mut().zip(probs) {
                s.push(p);
            }
        }
        for (c, s) in samples.iter().enumerate() {
            let target = (counts[c] as f64 + 0.5) / (n as f64 + 0.5 * k as f64);
            worst = worst.max(mc_mean_check(
                s,
                target,
                &format!("counts {counts:?} class {c}"),
            )?);
        }
    }

    let alpha = [0.7, 2.0, 4.5];
    let mut samples = (0..3)
        .map(|_| Vec::with_capacity(draws))
        .collect::<Vec<_>>();
    for _ in 0..draws {
        for (s, p) in samples.iter_mut().zip(sample_dirichlet(&alpha, &mut rng)) {
            s.push(p);
        }
    }
    let total: f64 = alpha.iter().sum();
    for (a, s) in alpha.iter().zip(&samples) {
        worst = worst.max(mc_mean_check(s, a / total, "dirichlet")?);
    }
    Ok(format!("max |z| {worst:.2}"))
}

/// Normal-inverse-gamma leaf draws have the right means for mu and sigma^2.
pub fn gaussian_means() -> Result<String, String> {
    let mut rng = child(42);
    let ys = [1.2, 0.4, 2.2, 1.9, 0.8, 1.1, 1.6, 0.3, 1.4, 2.0];
    let mut stats = LeafStats::empty(OutcomeKind::Continuous);
    for y in ys {
        stats.push(y);
    }
    let LeafStats::Continuous { n, mean, sse } = stats.clone() else {
        unreachable!()
    };
    let (mut mus, mut vars) = (Vec::new(), Vec::new());
    for _ in 0..100_000 {
        let LeafParams::Gaussian { mean, variance } =
            draw_leaf_params(&stats, 0.0, &mut rng).unwrap()
        else {
            panic!("continuous stats give gaussian draws");
        };
        mus.push(mean);
        vars.push(variance);
    }
    let z_mu = mc_mean_check(&mus, mean, "mu")?;
    // sigma^2 ~ InvGamma((n-1)/2, sse/2) has mean sse / (n - 3)
    let z_var = mc_mean_check(&vars, sse / (n as f64 - 3.0), "sigma^2")?;
    Ok(format!("|z| mu {z_mu:.2}, sigma^2 {z_var:.2}"))
}
