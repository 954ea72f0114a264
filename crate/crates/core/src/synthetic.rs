//! Deterministic run-to-failure fleets in the C-MAPSS layout.
//!
//! Every engine follows an exponential damage curve over a random lifetime.
//! Trending sensors move linearly with damage (up or down), the remaining
//! channels stay flat, and Gaussian measurement noise is added on top. The
//! multi-condition subsets (FD002/FD004) additionally switch between six
//! operating points that shift settings and sensor baselines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cmapss::{CycleRow, DatasetBundle, EngineTrajectory, SubsetId, NUM_SENSORS};
use crate::error::{Error, Result};

/// Typical single-condition sensor levels.
const SENSOR_BASE: [f64; NUM_SENSORS] = [
    518.67, 642.5, 1590.0, 1408.0, 14.62, 21.61, 553.9, 2388.0, 9065.0, 1.3, 47.5, 521.4,
    2388.0, 8143.0, 8.44, 0.03, 392.0, 2388.0, 100.0, 38.8, 23.3,
];

/// Damage response per sensor, as a fraction of the base level at failure;
/// zero for flat channels.
const SENSOR_TREND: [f64; NUM_SENSORS] = [
    0.0, 0.003, 0.008, 0.012, 0.0, 0.0, -0.005, 0.0003, 0.005, 0.0, 0.02, -0.004, 0.0003,
    0.0, 0.012, 0.0, 0.01, 0.0, 0.0, -0.02, -0.02,
];

/// Noise standard deviation per sensor, as a fraction of the base level.
const SENSOR_NOISE: [f64; NUM_SENSORS] = [
    0.0, 0.0008, 0.0035, 0.0045, 0.0, 0.0001, 0.0016, 0.00003, 0.002, 0.0, 0.005, 0.0014,
    0.00003, 0.002, 0.004, 0.0, 0.004, 0.0, 0.0, 0.005, 0.005,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub subset: SubsetId,
    pub train_engines: usize,
    pub test_engines: usize,
    pub min_life: usize,
    pub max_life: usize,
    /// Multiplier on the per-sensor noise levels.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Engine counts of the official release for `subset`, FD001-like lifetimes.
    pub fn like_official(subset: SubsetId, seed: u64) -> Self {
        let stats = subset.official_stats();
        Self {
            subset,
            train_engines: stats.train_engines,
            test_engines: stats.test_engines,
            min_life: stats.min_train_cycles,
            max_life: 362,
            noise: 1.0,
            seed,
        }
    }

    /// A small fleet for quick experiments and tests.
    pub fn small(subset: SubsetId, engines: usize, seed: u64) -> Self {
        Self {
            subset,
            train_engines: engines,
            test_engines: engines,
            min_life: 60,
            max_life: 140,
            noise: 1.0,
            seed,
        }
    }
}

struct Condition {
    settings: [f64; 3],
    sensor_scale: f64,
}

fn conditions(subset: SubsetId) -> Vec<Condition> {
    if subset.single_condition() {
        return vec![Condition {
            settings: [0.0, 0.0, 100.0],
            sensor_scale: 1.0,
        }];
    }
    [
        ([0.0, 0.0, 100.0], 1.0),
        ([10.0, 0.25, 100.0], 0.97),
        ([20.0, 0.7, 100.0], 0.92),
        ([25.0, 0.62, 60.0], 0.88),
        ([35.0, 0.84, 100.0], 0.85),
        ([42.0, 0.84, 100.0], 0.8),
    ]
    .into_iter()
    .map(|(settings, sensor_scale)| Condition {
        settings,
        sensor_scale,
    })
    .collect()
}

fn engine(
    rng: &mut ChaCha8Rng,
    unit_id: u32,
    life: usize,
    cycles: usize,
    conds: &[Condition],
    noise: f64,
) -> EngineTrajectory {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let steepness: f64 = rng.gen_range(4.0..8.0);
    let initial_wear: f64 = rng.gen_range(0.0..0.05);
    let norm = steepness.exp() - 1.0;
    let rows = (1..=cycles)
        .map(|t| {
            let frac = t as f64 / life as f64;
            let damage = initial_wear + ((steepness * frac).exp() - 1.0) / norm;
            let cond = &conds[rng.gen_range(0..conds.len())];
            let mut settings = cond.settings;
            settings[0] += 0.002 * std_normal.sample(rng);
            settings[1] += 0.0003 * std_normal.sample(rng);
            let mut sensors = [0.0; NUM_SENSORS];
            for (k, s) in sensors.iter_mut().enumerate() {
                let base = SENSOR_BASE[k] * cond.sensor_scale;
                let eps = noise * SENSOR_NOISE[k] * SENSOR_BASE[k] * std_normal.sample(rng);
                *s = base * (1.0 + SENSOR_TREND[k] * damage) + eps;
            }
            CycleRow { settings, sensors }
        })
        .collect();
    EngineTrajectory { unit_id, rows }
}

/// Generates a full bundle. Test engines are cut at a random point of their
/// life; the RUL file holds the remaining cycles.
pub fn generate(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    if spec.min_life < 2 || spec.max_life < spec.min_life {
        return Err(Error::InvalidArgument(format!(
            "bad lifetime range {}..{}",
            spec.min_life, spec.max_life
        )));
    }
    if spec.train_engines < 1 || spec.test_engines < 1 {
        return Err(Error::InvalidArgument("need at least one engine per split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let conds = conditions(spec.subset);
    let train = (1..=spec.train_engines as u32)
        .map(|u| {
            let life = rng.gen_range(spec.min_life..=spec.max_life);
            engine(&mut rng, u, life, life, &conds, spec.noise)
        })
        .collect();
    let mut test = Vec::with_capacity(spec.test_engines);
    let mut rul = Vec::with_capacity(spec.test_engines);
    for u in 1..=spec.test_engines as u32 {
        let life = rng.gen_range(spec.min_life..=spec.max_life);
        let observed = rng.gen_range((life / 10).max(1)..life);
        test.push(engine(&mut rng, u, life, observed, &conds, spec.noise));
        rul.push((life - observed) as u32);
    }
    DatasetBundle::new(spec.subset, train, test, rul)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec::small(SubsetId::Fd001, 5, 3);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_eq!(a.train.len(), 5);
        assert_eq!(a.test.len(), 5);
        assert_eq!(a.test_rul.len(), 5);
        for t in &a.train {
            assert!((60..=140).contains(&t.len()));
        }
        for (t, &r) in a.test.iter().zip(&a.test_rul) {
            assert!(r >= 1 && t.len() + r as usize <= 140);
        }
        // flat channels stay flat in the single-condition case
        let s1: Vec<f64> = a.train[0].rows.iter().map(|r| r.sensors[0]).collect();
        assert!(s1.iter().all(|&v| v == s1[0]));
    }

    #[test]
    fn official_like_counts() {
        let b = generate(&SyntheticSpec::like_official(SubsetId::Fd004, 1)).unwrap();
        assert_eq!((b.train.len(), b.test.len()), (259, 248));
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = SyntheticSpec::small(SubsetId::Fd001, 2, 0);
        s.max_life = 10;
        assert!(generate(&s).is_err());
    }
}
