//! The full training loops (FedMega, HL-SGD, FedISL), the geometric waiting
//! model, and the per-round delay ledger.
//!
//! Simulated satellites are data, not threads: per-satellite local training
//! fans out over a thread pool and merges in ascending satellite order, so
//! results are identical to a sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bits_to_bytes, transmit_time_s, IslSpec, LinkBudget};
use crate::constellation::{feasible_gsls, ConstellationSpec, GroundStation, SatId};
use crate::error::{Result, SimError};
use crate::flowsched::{
    schedule_transfer, AccessChargeMode, GeometricLinkProvider, IdealLinkProvider, TransferConfig,
    TransferDirection,
};
use crate::learnkit::{
    dataset_weights, evaluate, local_sgd, LocalDataset, ModelArch, TestSet, TrainConfig,
};
use crate::ringreduce::{make_layout, rar_time_s, ring_allreduce, ChunkLayout, ModelVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedMega,
    HlSgd,
    FedIsl,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::FedMega => write!(f, "fedmega"),
            Algorithm::HlSgd => write!(f, "hlsgd"),
            Algorithm::FedIsl => write!(f, "fedisl"),
        }
    }
}

/// Per-round delay decomposition, all in simulated seconds.
///
/// `round_total_s` is assembled as `2 t_down + t_bc + intra_block + t_wait`,
/// where `intra_block_s` carries the algorithm's compute-plus-aggregation
/// block, so recomputing the total from the stored components is bit-exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayLedger {
    pub round: usize,
    pub t_down_s: f64,
    pub t_bc_s: f64,
    pub t_comp_total_s: f64,
    pub t_rar_total_s: f64,
    pub intra_block_s: f64,
    pub t_wait_s: f64,
    pub round_total_s: f64,
    /// Scheduler-measured download time (FedMega only; 0 otherwise).
    pub t_down_sched_s: f64,
    pub down_slots: usize,
}

impl DelayLedger {
    pub fn recompute_total(&self) -> f64 {
        2.0 * self.t_down_s + self.t_bc_s + self.intra_block_s + self.t_wait_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub round: usize,
    pub intra_round: usize,
    pub cum_time_s: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub ledger: Vec<DelayLedger>,
    pub final_model: ModelVec,
    /// `||grad F||^2` probed at the start of every intra-orbit round when
    /// requested; feeds the convergence-bound check.
    pub grad_sq_trace: Vec<f64>,
}

impl RunResult {
    /// Cumulative time at which the test accuracy first reaches `target`.
    pub fn time_to_accuracy(&self, target: f64) -> Option<f64> {
        self.metrics
            .iter()
            .find(|row| row.test_acc >= target)
            .map(|row| row.cum_time_s)
    }

    /// Test accuracy recorded at the end of global round `round` (1-based).
    pub fn accuracy_at_round(&self, round: usize) -> Option<f64> {
        self.metrics
            .iter()
            .find(|row| row.round == round && row.intra_round > 0)
            .map(|row| row.test_acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    /// Feasibility and rates from orbit geometry.
    Geometric,
    /// Every pair always feasible at the reference rate; zero waiting.
    Ideal,
}

/// Everything a training run needs besides the loop counts.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub constellation: ConstellationSpec,
    pub stations: Vec<GroundStation>,
    pub budget: LinkBudget,
    pub isl: IslSpec,
    pub arch: ModelArch,
    /// One dataset per satellite in flat (orbit, slot) order.
    pub datasets: Vec<LocalDataset>,
    pub test: TestSet,
    /// Simulated payload size driving the delay model.
    pub model_bytes: f64,
    /// Wall time of one local update.
    pub t_comp_s: f64,
    pub slot_s: f64,
    pub link_mode: LinkMode,
    pub fixed_elevation_rate: bool,
    pub t_wait_override_s: Option<f64>,
    pub wait_horizon_s: Option<f64>,
    pub gdl_cap_per_slot: Option<f64>,
    pub access_mode: AccessChargeMode,
    /// Clock offset at round 0; shifts the orbit/station epoch alignment.
    pub epoch_s: f64,
    pub record_grad_sq: bool,
    pub log_intra: bool,
    pub measure_download: bool,
}

impl SimEnv {
    /// Environment with ideal links and quiet defaults around a task.
    pub fn new(
        constellation: ConstellationSpec,
        arch: ModelArch,
        datasets: Vec<LocalDataset>,
        test: TestSet,
    ) -> Self {
        Self {
            constellation,
            stations: crate::constellation::reference_stations(),
            budget: LinkBudget::default(),
            isl: IslSpec::default(),
            arch,
            datasets,
            test,
            model_bytes: 0.5e9,
            t_comp_s: 2.0,
            slot_s: 1.0,
            link_mode: LinkMode::Ideal,
            fixed_elevation_rate: false,
            t_wait_override_s: None,
            wait_horizon_s: None,
            gdl_cap_per_slot: None,
            access_mode: AccessChargeMode::PerNewPair,
            epoch_s: 0.0,
            record_grad_sq: false,
            log_intra: false,
            measure_download: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.budget.validate()?;
        self.isl.validate()?;
        for s in &self.stations {
            s.validate()?;
        }
        let expected = self.constellation.total_sats();
        if self.datasets.len() != expected {
            return Err(SimError::Config(format!(
                "{} datasets for {} satellites",
                self.datasets.len(),
                expected
            )));
        }
        for (i, sat) in self.constellation.sats().enumerate() {
            if self.datasets[i].owner != sat {
                return Err(SimError::Config(format!(
                    "dataset {i} is owned by {} but slot expects {}",
                    self.datasets[i].owner, sat
                )));
            }
            if self.datasets[i].is_empty() {
                return Err(SimError::Config(format!("satellite {sat} has no data")));
            }
        }
        if !(self.model_bytes > 0.0) || !(self.t_comp_s >= 0.0) || !(self.slot_s > 0.0) {
            return Err(SimError::Config(
                "model_bytes, t_comp_s and slot_s must be positive".into(),
            ));
        }
        Ok(())
    }

    fn wait_horizon(&self) -> f64 {
        self.wait_horizon_s
            .unwrap_or_else(|| 2.0 * self.constellation.orbital_period_s())
    }
}

/// Independent deterministic stream for one (satellite, round, intra-round)
/// cell; the seed bytes encode the coordinates directly.
pub fn sat_stream_rng(master_seed: u64, sat: SatId, round: usize, intra: usize) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..12].copy_from_slice(&(sat.orbit as u32).to_le_bytes());
    seed[12..16].copy_from_slice(&(sat.slot as u32).to_le_bytes());
    seed[16..24].copy_from_slice(&(round as u64).to_le_bytes());
    seed[24..32].copy_from_slice(&(intra as u64).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// One synchronous gossip averaging round on a ring: each node mixes 1/3 of
/// itself with 1/3 from each ring link.
pub fn gossip_mix(models: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = models.len();
    if k == 1 {
        return models.to_vec();
    }
    let dim = models[0].len();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let prev = &models[(i + k - 1) % k];
        let next = &models[(i + 1) % k];
        let own = &models[i];
        let mut mixed = Vec::with_capacity(dim);
        for j in 0..dim {
            mixed.push((prev[j] + own[j] + next[j]) / 3.0);
        }
        out.push(mixed);
    }
    out
}

/// Smallest `delta >= 0` on the slot grid by which every orbit has had at
/// least one feasible GSL instant within `[t_now, t_now + delta]`.
///
/// Contacts need not be simultaneous: the slot-wise download drains orbits
/// as their windows come up, so the round waits only until the slowest
/// orbit gets its first contact opportunity.
pub fn waiting_time_s(
    spec: &ConstellationSpec,
    stations: &[GroundStation],
    t_now: f64,
    min_elevation_deg: f64,
    slot_s: f64,
    horizon_s: f64,
) -> Result<f64> {
    let mut earliest: Vec<Option<f64>> = vec![None; spec.num_planes];
    let mut delta = 0.0;
    while delta <= horizon_s {
        let pairs = feasible_gsls(spec, stations, t_now + delta, min_elevation_deg)?;
        for (sat, _, _) in &pairs {
            if earliest[sat.orbit].is_none() {
                earliest[sat.orbit] = Some(delta);
            }
        }
        if earliest.iter().all(|e| e.is_some()) {
            return Ok(delta);
        }
        delta += slot_s;
    }
    let summary: Vec<String> = earliest
        .iter()
        .enumerate()
        .map(|(m, e)| match e {
            Some(d) => format!("orbit {m} first feasible at +{d:.0} s"),
            None => format!("orbit {m} never feasible"),
        })
        .collect();
    Err(SimError::Stall(format!(
        "some orbit has no feasible GSL within {horizon_s:.0} s ({})",
        summary.join("; ")
    )))
}

/// Weighted average of flat parameter vectors.
pub fn weighted_average(models: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let dim = models[0].len();
    let mut out = vec![0.0; dim];
    for (model, &w) in models.iter().zip(weights) {
        let scale = w / total;
        for (o, v) in out.iter_mut().zip(model) {
            *o += scale * v;
        }
    }
    out
}

/// Full-batch global objective `sum_i w_i F_i(params)`.
pub fn global_loss(
    arch: &ModelArch,
    params: &[f64],
    datasets: &[LocalDataset],
    weights: &[f64],
) -> Result<f64> {
    let parts: Result<Vec<f64>> = datasets
        .par_iter()
        .zip(weights.par_iter())
        .map(|(d, &w)| {
            arch.loss(params, d.features.view(), &d.labels)
                .map(|loss| w * loss)
        })
        .collect();
    Ok(parts?.iter().sum())
}

/// Full-batch global gradient of `sum_i w_i F_i`.
pub fn global_grad(
    arch: &ModelArch,
    params: &[f64],
    datasets: &[LocalDataset],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let parts: Result<Vec<Vec<f64>>> = datasets
        .par_iter()
        .zip(weights.par_iter())
        .map(|(d, &w)| {
            let (_, g) = arch.loss_grad(params, d.features.view(), &d.labels)?;
            Ok(g.into_iter().map(|v| w * v).collect())
        })
        .collect();
    let parts = parts?;
    let mut out = vec![0.0; arch.dim()];
    for g in parts {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn run_fedmega(env: &SimEnv, cfg: &TrainConfig) -> Result<RunResult> {
    run(env, cfg, Algorithm::FedMega)
}

pub fn run_hlsgd(env: &SimEnv, cfg: &TrainConfig) -> Result<RunResult> {
    run(env, cfg, Algorithm::HlSgd)
}

pub fn run_fedisl(env: &SimEnv, cfg: &TrainConfig) -> Result<RunResult> {
    run(env, cfg, Algorithm::FedIsl)
}

pub fn run(env: &SimEnv, cfg: &TrainConfig, algorithm: Algorithm) -> Result<RunResult> {
    env.validate()?;
    cfg.validate()?;
    let spec = &env.constellation;
    let num_orbits = spec.num_planes;
    let k0 = spec.sats_per_plane;
    let num_sats = spec.total_sats();
    let dim = env.arch.dim();

    let weights = dataset_weights(&env.datasets);
    let orbit_weights: Vec<f64> = (0..num_orbits)
        .map(|m| weights[m * k0..(m + 1) * k0].iter().sum())
        .collect();
    let layout: Option<ChunkLayout> = if k0 >= 2 {
        Some(make_layout(dim, k0)?)
    } else {
        None
    };

    // Reference operating point for the per-round delay formula.
    let gamma_gsl_bytes = bits_to_bytes(
        env.budget
            .reference_rate_bps(spec.altitude_km, spec.earth_radius_km)?,
    );
    let t_down = transmit_time_s(env.model_bytes, gamma_gsl_bytes);
    let t_bc = transmit_time_s(env.model_bytes, env.isl.rate_bytes_per_s);
    let t_rar = if k0 >= 2 {
        rar_time_s(k0, env.model_bytes, &env.isl)
    } else {
        0.0
    };
    let t_hybrid = transmit_time_s(env.model_bytes, env.isl.rate_bytes_per_s);
    let t_isl = k0.div_ceil(2) as f64 * transmit_time_s(env.model_bytes, env.isl.rate_bytes_per_s);

    let intra_rounds = match algorithm {
        Algorithm::FedMega | Algorithm::HlSgd => cfg.intra_rounds,
        Algorithm::FedIsl => 1,
    };
    let e_f = cfg.local_updates as f64;
    let t_f = intra_rounds as f64;

    let mut global = env.arch.init_params(cfg.seed);
    let mut clock = 0.0_f64;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut ledger = Vec::with_capacity(cfg.rounds);
    let mut grad_sq_trace = Vec::new();

    for round in 0..cfg.rounds {
        let (t_comp_total, t_rar_total, intra_block) = match algorithm {
            Algorithm::FedMega => (
                t_f * (e_f * env.t_comp_s),
                t_f * t_rar,
                t_f * (e_f * env.t_comp_s + t_rar),
            ),
            Algorithm::HlSgd => (
                t_f * (e_f * env.t_comp_s),
                t_f * t_hybrid,
                t_f * (e_f * env.t_comp_s + t_hybrid),
            ),
            Algorithm::FedIsl => (e_f * env.t_comp_s, t_isl, e_f * env.t_comp_s + t_isl),
        };
        let t_wait = match env.t_wait_override_s {
            Some(w) => w,
            None => match env.link_mode {
                LinkMode::Ideal => 0.0,
                LinkMode::Geometric => waiting_time_s(
                    spec,
                    &env.stations,
                    env.epoch_s + clock,
                    env.budget.min_elevation_deg,
                    env.slot_s,
                    env.wait_horizon(),
                )
                .map_err(|e| SimError::Stall(format!("round {round}: {e}")))?,
            },
        };
        let round_total = 2.0 * t_down + t_bc + intra_block + t_wait;

        // Broadcast, then T intra-orbit rounds of E local updates each.
        let mut sat_models: Vec<Vec<f64>> = vec![global.clone(); num_sats];
        let mut per_orbit: Vec<Vec<f64>> = vec![global.clone(); num_orbits];
        for intra in 0..intra_rounds {
            if env.record_grad_sq {
                let avg = weighted_average(&sat_models, &weights);
                let grad = global_grad(&env.arch, &avg, &env.datasets, &weights)?;
                grad_sq_trace.push(grad.iter().map(|v| v * v).sum());
            }
            let stepped: Result<Vec<Vec<f64>>> = (0..num_sats)
                .into_par_iter()
                .map(|i| {
                    let sat = SatId::new(i / k0, i % k0);
                    let mut rng = sat_stream_rng(cfg.seed, sat, round, intra);
                    local_sgd(
                        &env.arch,
                        &sat_models[i],
                        &env.datasets[i],
                        cfg.local_updates,
                        cfg.eta,
                        cfg.batch,
                        &mut rng,
                    )
                })
                .collect();
            sat_models = stepped?;

            match algorithm {
                Algorithm::FedMega => {
                    for m in 0..num_orbits {
                        match &layout {
                            Some(layout) => {
                                let ring: Vec<ModelVec> = (0..k0)
                                    .map(|k| {
                                        ModelVec::new(
                                            sat_models[m * k0 + k].clone(),
                                            weights[m * k0 + k],
                                        )
                                    })
                                    .collect();
                                let out = ring_allreduce(&ring, layout)?;
                                for k in 0..k0 {
                                    sat_models[m * k0 + k] = out.result.values.clone();
                                }
                                per_orbit[m] = out.result.values;
                            }
                            None => per_orbit[m] = sat_models[m * k0].clone(),
                        }
                    }
                }
                Algorithm::HlSgd => {
                    for m in 0..num_orbits {
                        let mixed = gossip_mix(&sat_models[m * k0..(m + 1) * k0]);
                        for (k, model) in mixed.into_iter().enumerate() {
                            sat_models[m * k0 + k] = model;
                        }
                    }
                }
                Algorithm::FedIsl => {}
            }

            if env.log_intra && intra + 1 < intra_rounds {
                let avg = weighted_average(&sat_models, &weights);
                let train_loss = global_loss(&env.arch, &avg, &env.datasets, &weights)?;
                let (_, test_acc) = evaluate(&env.arch, &avg, &env.test)?;
                let block = e_f * env.t_comp_s
                    + match algorithm {
                        Algorithm::FedMega => t_rar,
                        Algorithm::HlSgd => t_hybrid,
                        Algorithm::FedIsl => 0.0,
                    };
                metrics.push(MetricsRow {
                    algorithm,
                    round: round + 1,
                    intra_round: intra + 1,
                    cum_time_s: clock + t_wait + t_down + t_bc + (intra as f64 + 1.0) * block,
                    train_loss,
                    test_acc,
                });
            }
        }

        global = match algorithm {
            Algorithm::FedMega => weighted_average(&per_orbit, &orbit_weights),
            Algorithm::HlSgd | Algorithm::FedIsl => weighted_average(&sat_models, &weights),
        };

        // Scheduler-measured download, reported alongside the formula value.
        let (mut t_down_sched, mut down_slots) = (0.0, 0usize);
        if env.measure_download && algorithm == Algorithm::FedMega {
            let download_start = env.epoch_s + clock + t_wait + t_down + t_bc + intra_block;
            let transfer_cfg = TransferConfig {
                slot_s: env.slot_s,
                access_time_s: env.budget.access_time_s,
                access_mode: env.access_mode,
                stall_horizon_s: env.wait_horizon(),
            };
            let pending = vec![1.0; num_orbits];
            let outcome = match env.link_mode {
                LinkMode::Geometric => {
                    let provider = GeometricLinkProvider {
                        spec,
                        stations: &env.stations,
                        budget: &env.budget,
                        slot_s: env.slot_s,
                        model_bytes: env.model_bytes,
                        fixed_elevation_rate: env.fixed_elevation_rate,
                    };
                    schedule_transfer(
                        &pending,
                        &provider,
                        download_start,
                        TransferDirection::Down,
                        env.gdl_cap_per_slot,
                        &transfer_cfg,
                    )
                }
                LinkMode::Ideal => {
                    let provider = IdealLinkProvider {
                        sats: spec.sats().collect(),
                        num_stations: env.stations.len(),
                        capacity_per_slot: crate::channel::gsl_capacity_fraction(
                            env.budget
                                .reference_rate_bps(spec.altitude_km, spec.earth_radius_km)?,
                            env.slot_s,
                            env.model_bytes,
                        ),
                    };
                    schedule_transfer(
                        &pending,
                        &provider,
                        download_start,
                        TransferDirection::Down,
                        env.gdl_cap_per_slot,
                        &transfer_cfg,
                    )
                }
            }
            .map_err(|e| SimError::Stall(format!("round {round} download: {e}")))?;
            t_down_sched = outcome.total_time_s;
            down_slots = outcome.slots_used;
        }

        clock += round_total;
        ledger.push(DelayLedger {
            round: round + 1,
            t_down_s: t_down,
            t_bc_s: t_bc,
            t_comp_total_s: t_comp_total,
            t_rar_total_s: t_rar_total,
            intra_block_s: intra_block,
            t_wait_s: t_wait,
            round_total_s: round_total,
            t_down_sched_s: t_down_sched,
            down_slots,
        });

        let train_loss = global_loss(&env.arch, &global, &env.datasets, &weights)?;
        let (_, test_acc) = evaluate(&env.arch, &global, &env.test)?;
        metrics.push(MetricsRow {
            algorithm,
            round: round + 1,
            intra_round: intra_rounds,
            cum_time_s: clock,
            train_loss,
            test_acc,
        });
    }

    Ok(RunResult {
        metrics,
        ledger,
        final_model: ModelVec::new(global, 1.0),
        grad_sq_trace,
    })
}
