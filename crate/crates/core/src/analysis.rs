//! Evaluators for the stepsize rule, the convergence bound and its terms,
//! best-effort constant estimation on convex instances, and the
//! intra-orbit-rounds tradeoff sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::learnkit::{dataset_weights, LocalDataset, ModelArch, TrainConfig};
use crate::orchestrator::{run_fedmega, SimEnv};

/// Constants and counts entering the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Smoothness constant L.
    pub smoothness: f64,
    /// Stochastic-gradient variance bound.
    pub sigma2: f64,
    /// Mean squared intra-orbit gradient dissimilarity.
    pub delta_bar2: f64,
    /// Inter-orbit dissimilarity slope (>= 1).
    pub alpha: f64,
    /// Inter-orbit dissimilarity offset (>= 0).
    pub beta: f64,
    /// Gap between the initial objective and its lower bound.
    pub initial_gap: f64,
    /// Total satellite count K = M * K0.
    pub num_sats: usize,
    pub num_orbits: usize,
    pub local_updates: usize,
    pub intra_rounds: usize,
    pub rounds: usize,
    pub eta: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness > 0.0) {
            return Err(SimError::Config(format!(
                "smoothness must be positive, got {}",
                self.smoothness
            )));
        }
        if self.alpha < 1.0 {
            return Err(SimError::Config(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 || self.sigma2 < 0.0 || self.delta_bar2 < 0.0 || self.initial_gap < 0.0
        {
            return Err(SimError::Config(
                "beta, sigma2, delta_bar2 and initial_gap must be nonnegative".into(),
            ));
        }
        if self.num_sats == 0
            || self.num_orbits == 0
            || self.local_updates == 0
            || self.intra_rounds == 0
            || self.rounds == 0
        {
            return Err(SimError::Config("counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Largest admissible stepsize; piecewise in (E, T).
pub fn max_stepsize(p: &BoundParams) -> f64 {
    let l = p.smoothness;
    let e = p.local_updates as f64;
    let t = p.intra_rounds as f64;
    let a = p.alpha;
    if p.local_updates == 1 && p.intra_rounds == 1 {
        1.0 / (2.0 * l * e)
    } else if p.intra_rounds == 1 {
        1.0 / (8.0 * l * (5.0 / 3.0 * a * e * (e - 1.0)).sqrt())
    } else {
        1.0 / (8.0 * e * l * (3.0 * a * t * (t - 1.0)).sqrt())
    }
}

/// Itemized value of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    pub initial_gap: f64,
    pub intra_orbit_variance: f64,
    pub local_drift: f64,
    pub heterogeneity: f64,
    pub stochastic_noise: f64,
    pub total: f64,
}

impl BoundTerms {
    /// The two terms that carry the `1/sqrt(K E T R)` rate along the
    /// prescribed stepsize.
    pub fn dominant(&self) -> f64 {
        self.initial_gap + self.stochastic_noise
    }
}

/// Upper bound on the average squared global gradient norm after R rounds.
pub fn theorem1_bound(p: &BoundParams) -> Result<BoundTerms> {
    p.validate()?;
    let eta_max = max_stepsize(p);
    if p.eta > eta_max * (1.0 + 1e-12) {
        return Err(SimError::StepsizeTooLarge {
            eta: p.eta,
            max: eta_max,
        });
    }
    let l = p.smoothness;
    let eta = p.eta;
    let k = p.num_sats as f64;
    let m = p.num_orbits as f64;
    let e = p.local_updates as f64;
    let t = p.intra_rounds as f64;
    let r = p.rounds as f64;

    let initial_gap = 4.0 * p.initial_gap / (eta * e * t * r);
    let intra_orbit_variance =
        160.0 / (3.0 * k) * eta.powi(3) * l.powi(3) * e * (m - 1.0) * (t - 1.0) * p.sigma2;
    let local_drift = 16.0 * eta * eta * l * l * (e - 1.0) * (p.sigma2 + 6.0 * p.delta_bar2);
    let heterogeneity =
        32.0 / 3.0 * eta * eta * l * l * e * p.beta * (5.0 * e * t * (t - 1.0) + 9.0 * (e - 1.0));
    let stochastic_noise = 4.0 / k * eta * l * p.sigma2;
    Ok(BoundTerms {
        initial_gap,
        intra_orbit_variance,
        local_drift,
        heterogeneity,
        stochastic_noise,
        total: initial_gap + intra_orbit_variance + local_drift + heterogeneity + stochastic_noise,
    })
}

/// The corollary's stepsize `(1/L) sqrt(K / (E T R))`.
pub fn corollary_eta(smoothness: f64, num_sats: usize, local_updates: usize, intra_rounds: usize, rounds: usize) -> f64 {
    (1.0 / smoothness)
        * (num_sats as f64 / (local_updates as f64 * intra_rounds as f64 * rounds as f64)).sqrt()
}

/// Best-effort estimates of the bound constants from a dataset instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantEstimates {
    pub smoothness: f64,
    pub sigma2: f64,
    pub delta_bar2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub initial_gap: f64,
}

impl ConstantEstimates {
    /// Scale every estimated constant by `factor` (alpha stays >= 1, the
    /// exactly-computed initial gap is untouched).
    pub fn inflate(&self, factor: f64) -> Self {
        Self {
            smoothness: self.smoothness * factor,
            sigma2: self.sigma2 * factor,
            delta_bar2: self.delta_bar2 * factor,
            alpha: (self.alpha * factor).max(1.0),
            beta: self.beta * factor,
            initial_gap: self.initial_gap,
        }
    }

    pub fn to_bound_params(
        &self,
        num_sats: usize,
        num_orbits: usize,
        local_updates: usize,
        intra_rounds: usize,
        rounds: usize,
        eta: f64,
    ) -> BoundParams {
        BoundParams {
            smoothness: self.smoothness,
            sigma2: self.sigma2,
            delta_bar2: self.delta_bar2,
            alpha: self.alpha,
            beta: self.beta,
            initial_gap: self.initial_gap,
            num_sats,
            num_orbits,
            local_updates,
            intra_rounds,
            rounds,
            eta,
        }
    }
}

/// Probe smoothness, gradient variance, and the dissimilarity constants at
/// randomly perturbed iterates around the initialization.
///
/// Intended for the logistic instance where the objective is convex and the
/// constants are stable; outputs are estimates, not certified bounds.
pub fn estimate_constants(
    arch: &ModelArch,
    datasets: &[LocalDataset],
    num_orbits: usize,
    batch: usize,
    probes: usize,
    seed: u64,
) -> Result<ConstantEstimates> {
    if datasets.is_empty() || num_orbits == 0 || datasets.len() % num_orbits != 0 {
        return Err(SimError::Estimation(format!(
            "{} datasets cannot split into {} orbits",
            datasets.len(),
            num_orbits
        )));
    }
    if probes < 2 {
        return Err(SimError::Estimation("need at least 2 probe iterates".into()));
    }
    let k0 = datasets.len() / num_orbits;
    let dim = arch.dim();
    let weights = dataset_weights(datasets);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB0D1);
    let z0 = arch.init_params(seed);
    let mut iterates = vec![z0.clone()];
    for p in 1..probes {
        let radius = 0.4 * p as f64 / probes as f64;
        let mut z = z0.clone();
        for v in z.iter_mut() {
            *v += radius * rng.sample::<f64, _>(StandardNormal);
        }
        iterates.push(z);
    }

    // Per-satellite full-batch gradients at every iterate.
    let per_sat_grads: Result<Vec<Vec<Vec<f64>>>> = iterates
        .par_iter()
        .map(|z| {
            datasets
                .iter()
                .map(|d| {
                    let (_, g) = arch.loss_grad(z, d.features.view(), &d.labels)?;
                    Ok(g)
                })
                .collect()
        })
        .collect();
    let per_sat_grads = per_sat_grads?;

    let weighted_sum = |grads: &[Vec<f64>], ws: &[f64]| -> Vec<f64> {
        let total: f64 = ws.iter().sum();
        let mut out = vec![0.0; dim];
        for (g, &w) in grads.iter().zip(ws) {
            for (o, v) in out.iter_mut().zip(g) {
                *o += w / total * v;
            }
        }
        out
    };
    let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    let mut global_grads = Vec::with_capacity(probes);
    let mut orbit_grads = Vec::with_capacity(probes);
    for grads in &per_sat_grads {
        global_grads.push(weighted_sum(grads, &weights));
        let per_orbit: Vec<Vec<f64>> = (0..num_orbits)
            .map(|m| weighted_sum(&grads[m * k0..(m + 1) * k0], &weights[m * k0..(m + 1) * k0]))
            .collect();
        orbit_grads.push(per_orbit);
    }

    // Smoothness: steepest observed gradient change between iterates, for
    // the global objective and every local one.
    let mut smoothness: f64 = 0.0;
    for a in 0..probes {
        for b in (a + 1)..probes {
            let dz = iterates[a]
                .iter()
                .zip(&iterates[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if dz < 1e-12 {
                continue;
            }
            let dg = global_grads[a]
                .iter()
                .zip(&global_grads[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            smoothness = smoothness.max(dg / dz);
            for i in 0..datasets.len() {
                let dgi = per_sat_grads[a][i]
                    .iter()
                    .zip(&per_sat_grads[b][i])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                smoothness = smoothness.max(dgi / dz);
            }
        }
    }
    if smoothness == 0.0 {
        return Err(SimError::Estimation(
            "gradients are constant across probes; degenerate instance".into(),
        ));
    }

    // Mini-batch variance against the full-batch gradient.
    let draws = 4;
    let mut sigma2: f64 = 0.0;
    for (p, z) in iterates.iter().enumerate() {
        for (i, d) in datasets.iter().enumerate() {
            if batch >= d.len() {
                continue; // full batch: zero variance
            }
            let mut acc = 0.0;
            for q in 0..draws {
                let mut brng =
                    ChaCha8Rng::seed_from_u64(seed ^ (p as u64) << 40 ^ (i as u64) << 20 ^ q);
                let idx = rand::seq::index::sample(&mut brng, d.len(), batch).into_vec();
                let x = d.features.select(ndarray::Axis(0), &idx);
                let y: Vec<u8> = idx.iter().map(|&j| d.labels[j]).collect();
                let (_, gb) = arch.loss_grad(z, x.view(), &y)?;
                acc += gb
                    .iter()
                    .zip(&per_sat_grads[p][i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            sigma2 = sigma2.max(acc / draws as f64);
        }
    }

    // Intra-orbit dissimilarity, maximized over iterates then averaged over
    // orbits.
    let mut delta2_per_orbit = vec![0.0_f64; num_orbits];
    for (p, grads) in per_sat_grads.iter().enumerate() {
        for m in 0..num_orbits {
            let orbit_mean = &orbit_grads[p][m];
            let avg_dev = grads[m * k0..(m + 1) * k0]
                .iter()
                .map(|g| {
                    g.iter()
                        .zip(orbit_mean)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / k0 as f64;
            delta2_per_orbit[m] = delta2_per_orbit[m].max(avg_dev);
        }
    }
    let delta_bar2 = delta2_per_orbit.iter().sum::<f64>() / num_orbits as f64;

    // Inter-orbit dissimilarity: fit lhs <= beta + alpha * rhs over probes.
    let lhs: Vec<f64> = orbit_grads
        .iter()
        .map(|per_orbit| {
            per_orbit.iter().map(|g| norm_sq(g)).sum::<f64>() / num_orbits as f64
        })
        .collect();
    let rhs: Vec<f64> = global_grads.iter().map(|g| norm_sq(g)).collect();
    let slope_num: f64 = lhs.iter().zip(&rhs).map(|(l, r)| l * r).sum();
    let slope_den: f64 = rhs.iter().map(|r| r * r).sum();
    let alpha = if slope_den > 0.0 {
        (slope_num / slope_den).max(1.0)
    } else {
        1.0
    };
    let beta = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| l - alpha * r)
        .fold(0.0_f64, f64::max)
        .max(0.0);

    // Cross-entropy is nonnegative, so zero is a valid objective floor.
    let mut initial_gap = 0.0;
    for (d, &w) in datasets.iter().zip(&weights) {
        initial_gap += w * arch.loss(&z0, d.features.view(), &d.labels)?;
    }

    Ok(ConstantEstimates {
        smoothness,
        sigma2,
        delta_bar2,
        alpha,
        beta,
        initial_gap,
    })
}

/// Time to reach each target accuracy as a function of the number of
/// intra-orbit rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub intra_rounds: usize,
    pub target_acc: f64,
    pub time_s: f64,
    pub reached: bool,
}

/// Run the main algorithm once per `T` value and report the first time each
/// accuracy target is met. Runs fan out in parallel.
pub fn tradeoff_sweep(
    env: &SimEnv,
    base: &TrainConfig,
    t_values: &[usize],
    targets: &[f64],
) -> Result<Vec<SweepRow>> {
    let runs: Result<Vec<(usize, crate::orchestrator::RunResult)>> = t_values
        .par_iter()
        .map(|&t| {
            let cfg = TrainConfig {
                intra_rounds: t,
                ..*base
            };
            run_fedmega(env, &cfg).map(|r| (t, r))
        })
        .collect();
    let mut rows = Vec::with_capacity(t_values.len() * targets.len());
    for (t, result) in runs? {
        for &target in targets {
            match result.time_to_accuracy(target) {
                Some(time_s) => rows.push(SweepRow {
                    intra_rounds: t,
                    target_acc: target,
                    time_s,
                    reached: true,
                }),
                None => rows.push(SweepRow {
                    intra_rounds: t,
                    target_acc: target,
                    time_s: f64::NAN,
                    reached: false,
                }),
            }
        }
    }
    Ok(rows)
}
