//! Full-duplex ring all-reduce for intra-orbit aggregation.
//!
//! Each satellite pre-scales its model by its normalized data weight and
//! splits it into `2K` chunks; `K` circulate clockwise and `K`
//! counter-clockwise, each direction running the classic reduce-then-gather
//! schedule in `K-1 + K-1` iterations. Because a chunk is accumulated along
//! a single ring path and then copied, every member ends the collective with
//! bit-identical values.

use serde::Serialize;

use crate::channel::IslSpec;
use crate::error::{Result, SimError};

/// Flat parameter vector plus its aggregation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVec {
    pub values: Vec<f64>,
    pub weight: f64,
}

impl ModelVec {
    pub fn new(values: Vec<f64>, weight: f64) -> Self {
        Self { values, weight }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.weight.is_finite() || self.weight < 0.0 {
            return Err(SimError::NonFinite(format!(
                "model weight {} is not a finite nonnegative number",
                self.weight
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(format!(
                "model value at index {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// Chunk boundaries for a `d`-dimensional model split across a `K`-ring.
///
/// The padded length is the smallest multiple of `2K` at or above `d`; the
/// `u`-th plus range immediately precedes the `u`-th minus range.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkLayout {
    pub ring_size: usize,
    pub dim: usize,
    pub padded_dim: usize,
    pub boundaries: Vec<(usize, usize)>,
}

impl ChunkLayout {
    pub fn chunk_len(&self) -> usize {
        self.padded_dim / (2 * self.ring_size)
    }

    /// Range of the `u`-th clockwise (plus) chunk.
    pub fn plus_range(&self, u: usize) -> (usize, usize) {
        self.boundaries[2 * u]
    }

    /// Range of the `u`-th counter-clockwise (minus) chunk.
    pub fn minus_range(&self, u: usize) -> (usize, usize) {
        self.boundaries[2 * u + 1]
    }
}

pub fn make_layout(dim: usize, ring_size: usize) -> Result<ChunkLayout> {
    if ring_size < 2 {
        return Err(SimError::RingTooSmall(ring_size));
    }
    if dim < 1 {
        return Err(SimError::LengthMismatch("model dimension must be >= 1".into()));
    }
    let chunks = 2 * ring_size;
    let padded_dim = dim.div_ceil(chunks) * chunks;
    let len = padded_dim / chunks;
    let boundaries = (0..chunks).map(|c| (c * len, (c + 1) * len)).collect();
    Ok(ChunkLayout {
        ring_size,
        dim,
        padded_dim,
        boundaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Clockwise,
    CounterClockwise,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Clockwise => write!(f, "cw"),
            Direction::CounterClockwise => write!(f, "ccw"),
        }
    }
}

/// Reduce iterations accumulate partial sums; gather iterations forward the
/// finished chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Reduce,
    Gather,
}

/// One chunk transmission in the collective's schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransmitRecord {
    pub iteration: usize,
    pub sender: usize,
    pub direction: Direction,
    pub chunk: usize,
    pub phase: Phase,
}

pub struct RingOutcome {
    /// Weighted intra-orbit average, identical on every ring member.
    pub result: ModelVec,
    pub iterations: usize,
    pub schedule: Vec<TransmitRecord>,
}

/// Run the collective over one orbit's models.
///
/// Every member's output equals `sum_k w_k z_k / sum_k w_k`; the returned
/// weight is `sum_k w_k`.
pub fn ring_allreduce(models: &[ModelVec], layout: &ChunkLayout) -> Result<RingOutcome> {
    let k = layout.ring_size;
    if models.len() != k {
        return Err(SimError::LengthMismatch(format!(
            "expected {} models for a {}-ring, got {}",
            k,
            k,
            models.len()
        )));
    }
    let weight_sum: f64 = models.iter().map(|m| m.weight).sum();
    if !(weight_sum > 0.0) {
        return Err(SimError::Degenerate(format!(
            "ring weights must have a positive sum, got {weight_sum}"
        )));
    }
    for m in models {
        m.check_finite()?;
        if m.dim() != layout.dim {
            return Err(SimError::LengthMismatch(format!(
                "model dimension {} does not match layout dimension {}",
                m.dim(),
                layout.dim
            )));
        }
    }

    // Pre-scaled, zero-padded chunk buffers: [sat][chunk index] per
    // direction.
    let mut plus: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    let mut minus: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for m in models {
        let scale = m.weight / weight_sum;
        let mut padded = vec![0.0; layout.padded_dim];
        for (dst, src) in padded.iter_mut().zip(m.values.iter()) {
            *dst = scale * src;
        }
        let mut p = Vec::with_capacity(k);
        let mut q = Vec::with_capacity(k);
        for u in 0..k {
            let (a, b) = layout.plus_range(u);
            p.push(padded[a..b].to_vec());
            let (a, b) = layout.minus_range(u);
            q.push(padded[a..b].to_vec());
        }
        plus.push(p);
        minus.push(q);
    }

    let iterations = 2 * k - 2;
    let mut schedule = Vec::with_capacity(iterations * 2 * k);
    for i in 0..iterations {
        let im = i % k;
        let phase = if i < k - 1 { Phase::Reduce } else { Phase::Gather };
        // All satellites transmit simultaneously; snapshot what is on the
        // wire before applying any receive.
        let mut sent_cw: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut sent_ccw: Vec<Vec<f64>> = Vec::with_capacity(k);
        for sat in 0..k {
            let cw_chunk = (sat + k - im) % k;
            let ccw_chunk = (sat + im) % k;
            sent_cw.push(plus[sat][cw_chunk].clone());
            sent_ccw.push(minus[sat][ccw_chunk].clone());
            schedule.push(TransmitRecord {
                iteration: i,
                sender: sat,
                direction: Direction::Clockwise,
                chunk: cw_chunk,
                phase,
            });
            schedule.push(TransmitRecord {
                iteration: i,
                sender: sat,
                direction: Direction::CounterClockwise,
                chunk: ccw_chunk,
                phase,
            });
        }
        for sat in 0..k {
            let from_prev = (sat + k - 1) % k;
            let from_next = (sat + 1) % k;
            let cw_recv = (sat + 2 * k - 1 - im) % k;
            let ccw_recv = (sat + 1 + im) % k;
            match phase {
                Phase::Reduce => {
                    for (dst, src) in plus[sat][cw_recv].iter_mut().zip(&sent_cw[from_prev]) {
                        *dst += src;
                    }
                    for (dst, src) in minus[sat][ccw_recv].iter_mut().zip(&sent_ccw[from_next]) {
                        *dst += src;
                    }
                }
                Phase::Gather => {
                    plus[sat][cw_recv].copy_from_slice(&sent_cw[from_prev]);
                    minus[sat][ccw_recv].copy_from_slice(&sent_ccw[from_next]);
                }
            }
        }
    }

    // Concatenate b+[0], b-[0], ..., b-[K-1] per member and strip padding.
    let mut first: Option<Vec<f64>> = None;
    for sat in 0..k {
        let mut out = Vec::with_capacity(layout.padded_dim);
        for u in 0..k {
            out.extend_from_slice(&plus[sat][u]);
            out.extend_from_slice(&minus[sat][u]);
        }
        out.truncate(layout.dim);
        match &first {
            None => first = Some(out),
            Some(reference) => {
                if reference != &out {
                    return Err(SimError::NonFinite(
                        "ring members disagree on the aggregated model".into(),
                    ));
                }
            }
        }
    }
    let values = first.expect("ring has at least 2 members");
    Ok(RingOutcome {
        result: ModelVec::new(values, weight_sum),
        iterations,
        schedule,
    })
}

/// Collective wall time `(2K-2)/(2K) * I/gamma_isl + (2K-2) * t_sum`.
pub fn rar_time_s(ring_size: usize, model_bytes: f64, isl: &IslSpec) -> f64 {
    let k = ring_size as f64;
    (2.0 * k - 2.0) / (2.0 * k) * (model_bytes / isl.rate_bytes_per_s)
        + (2.0 * k - 2.0) * isl.sum_time_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weighted_mean(models: &[ModelVec]) -> Vec<f64> {
        let total: f64 = models.iter().map(|m| m.weight).sum();
        let d = models[0].dim();
        let mut out = vec![0.0; d];
        for m in models {
            for (o, v) in out.iter_mut().zip(&m.values) {
                *o += m.weight / total * v;
            }
        }
        out
    }

    fn random_models(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<ModelVec> {
        (0..k)
            .map(|_| {
                let values = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                ModelVec::new(values, rng.random_range(0.1..5.0))
            })
            .collect()
    }

    #[test]
    fn layout_divisible_case_has_no_padding() {
        let layout = make_layout(12, 3).unwrap();
        assert_eq!(layout.padded_dim, 12);
        assert_eq!(layout.chunk_len(), 2);
        assert_eq!(layout.boundaries.len(), 6);
        for u in 0..3 {
            let (ps, pe) = layout.plus_range(u);
            let (ms, _) = layout.minus_range(u);
            assert_eq!(pe, ms, "plus range must immediately precede minus range");
            assert_eq!(pe - ps, 2);
        }
    }

    #[test]
    fn layout_pads_up_to_a_chunk_multiple() {
        // Oracle: ceil(10 / 6) * 6 = 12.
        let layout = make_layout(10, 3).unwrap();
        assert_eq!(layout.padded_dim, 12);
        assert_eq!(layout.dim, 10);
    }

    #[test]
    fn layout_unit_chunks_when_d_equals_2k() {
        let layout = make_layout(8, 4).unwrap();
        assert_eq!(layout.chunk_len(), 1);
        assert_eq!(layout.boundaries.len(), 8);
    }

    #[test]
    fn rings_smaller_than_two_are_rejected() {
        assert!(matches!(make_layout(10, 1), Err(SimError::RingTooSmall(1))));
        assert!(matches!(make_layout(10, 0), Err(SimError::RingTooSmall(0))));
    }

    #[test]
    fn identical_models_are_a_fixed_point() {
        let k = 4;
        let d = 17;
        let values: Vec<f64> = (0..d).map(|i| (i as f64).sin()).collect();
        let models: Vec<ModelVec> = (0..k).map(|_| ModelVec::new(values.clone(), 1.0)).collect();
        let layout = make_layout(d, k).unwrap();
        let out = ring_allreduce(&models, &layout).unwrap();
        for (a, b) in out.result.values.iter().zip(&values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_ring_clockwise_half_runs_four_iterations() {
        // The one-direction reading for K = 3: 4 iterations total, the
        // clockwise chunk moved by satellite k at iteration i is (k-i) mod 3.
        let layout = make_layout(12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models = random_models(&mut rng, 3, 12);
        let out = ring_allreduce(&models, &layout).unwrap();
        assert_eq!(out.iterations, 4);
        for rec in out
            .schedule
            .iter()
            .filter(|r| r.direction == Direction::Clockwise)
        {
            assert_eq!(rec.chunk, (rec.sender + 3 - rec.iteration % 3) % 3);
            let expected_phase = if rec.iteration < 2 { Phase::Reduce } else { Phase::Gather };
            assert_eq!(rec.phase, expected_phase);
        }
        // Counter-clockwise mirror: chunk (k+i) mod 3.
        for rec in out
            .schedule
            .iter()
            .filter(|r| r.direction == Direction::CounterClockwise)
        {
            assert_eq!(rec.chunk, (rec.sender + rec.iteration % 3) % 3);
        }
    }

    #[test]
    fn matches_central_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 2..=8 {
            let d = rng.random_range(2 * k..80);
            let models = random_models(&mut rng, k, d);
            let layout = make_layout(d, k).unwrap();
            let out = ring_allreduce(&models, &layout).unwrap();
            let oracle = weighted_mean(&models);
            for (a, b) in out.result.values.iter().zip(&oracle) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale < 1e-9, "{a} vs {b} (k={k}, d={d})");
            }
        }
    }

    #[test]
    fn mismatched_lengths_and_nonfinite_inputs_are_rejected() {
        let layout = make_layout(6, 2).unwrap();
        let good = ModelVec::new(vec![1.0; 6], 1.0);
        let short = ModelVec::new(vec![1.0; 5], 1.0);
        assert!(ring_allreduce(&[good.clone(), short], &layout).is_err());

        let bad = ModelVec::new(vec![1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert!(matches!(
            ring_allreduce(&[good, bad], &layout),
            Err(SimError::NonFinite(_))
        ));
    }

    #[test]
    fn deterministic_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = random_models(&mut rng, 5, 33);
        let layout = make_layout(33, 5).unwrap();
        let a = ring_allreduce(&models, &layout).unwrap();
        let b = ring_allreduce(&models, &layout).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.schedule, b.schedule);
    }

    #[test]
    fn schedule_is_full_duplex_with_per_phase_unique_chunks() {
        // Within each phase no chunk index repeats on a directed edge; the
        // gather phase legitimately re-sends indices from the reduce phase.
        let layout = make_layout(40, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models = random_models(&mut rng, 5, 40);
        let out = ring_allreduce(&models, &layout).unwrap();

        for i in 0..out.iterations {
            for sat in 0..5 {
                let cw = out
                    .schedule
                    .iter()
                    .filter(|r| {
                        r.iteration == i && r.sender == sat && r.direction == Direction::Clockwise
                    })
                    .count();
                let ccw = out
                    .schedule
                    .iter()
                    .filter(|r| {
                        r.iteration == i
                            && r.sender == sat
                            && r.direction == Direction::CounterClockwise
                    })
                    .count();
                assert_eq!(cw, 1);
                assert_eq!(ccw, 1);
            }
        }

        for phase in [Phase::Reduce, Phase::Gather] {
            for sat in 0..5 {
                for dir in [Direction::Clockwise, Direction::CounterClockwise] {
                    let mut chunks: Vec<usize> = out
                        .schedule
                        .iter()
                        .filter(|r| r.sender == sat && r.direction == dir && r.phase == phase)
                        .map(|r| r.chunk)
                        .collect();
                    let n = chunks.len();
                    chunks.sort_unstable();
                    chunks.dedup();
                    assert_eq!(chunks.len(), n, "chunk repeated within a phase");
                }
            }
        }
    }

    #[test]
    fn rar_time_reference_values() {
        let isl = IslSpec::default();
        // Oracle: 0.98 * 0.05 + 98 * 0.01 = 1.029.
        let t = rar_time_s(50, 0.5e9, &isl);
        assert!((t - 1.029).abs() < 1e-12, "t_rar {t}");

        let t2 = rar_time_s(2, 0.5e9, &isl);
        assert!((t2 - (0.5 * 0.05 + 2.0 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn rar_communication_term_is_bounded_and_converges() {
        let isl = IslSpec {
            sum_time_s: 0.0,
            ..IslSpec::default()
        };
        let full = 0.5e9 / isl.rate_bytes_per_s;
        let mut prev = 0.0;
        for k in [2usize, 4, 8, 64, 1024] {
            let t = rar_time_s(k, 0.5e9, &isl);
            assert!(t < full, "communication term must stay below I/gamma");
            assert!(t > prev);
            prev = t;
        }
        assert!((prev - full).abs() / full < 1e-3);
        // The summation term grows linearly in K.
        let isl_sum = IslSpec::default();
        assert!((rar_time_s(8, 0.0, &isl_sum) - isl_sum.sum_time_s * 14.0).abs() < 1e-12);
        assert!((rar_time_s(16, 0.0, &isl_sum) - isl_sum.sum_time_s * 30.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn exactness_property(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(2usize..=16);
            let d = rng.random_range(2 * k..=200);
            let models = random_models(&mut rng, k, d);
            let layout = make_layout(d, k).unwrap();
            let out = ring_allreduce(&models, &layout).unwrap();
            let oracle = weighted_mean(&models);
            for (a, b) in out.result.values.iter().zip(&oracle) {
                let scale = b.abs().max(1.0);
                prop_assert!((a - b).abs() / scale < 1e-9);
            }
        }
    }
}
