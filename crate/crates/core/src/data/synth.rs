//! Synthetic ECG-like recordings with labelled 5-second slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAW_RATE_HZ: usize = 512;
pub const SLICE_SECONDS: usize = 5;
pub const SLICE_SAMPLES: usize = RAW_RATE_HZ * SLICE_SECONDS;

/// Quality grades of a slice: 1 bad, 2 medium, 3 good.
pub const GRADE_BAD: u8 = 1;
pub const GRADE_MEDIUM: u8 = 2;
pub const GRADE_GOOD: u8 = 3;

/// One raw recording at 512 Hz with a quality grade per 5-second slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub recording_id: usize,
    pub samples: Vec<f64>,
    pub grades: Vec<u8>,
}

impl Record {
    pub fn new(recording_id: usize, samples: Vec<f64>, grades: Vec<u8>) -> Result<Self> {
        if samples.len() != grades.len() * SLICE_SAMPLES {
            return Err(Error::Shape(format!(
                "{} samples for {} slices of {SLICE_SAMPLES}",
                samples.len(),
                grades.len()
            )));
        }
        if grades.iter().any(|g| !(GRADE_BAD..=GRADE_GOOD).contains(g)) {
            return Err(Error::InvalidArgument("grades must be 1, 2 or 3".into()));
        }
        Ok(Self {
            recording_id,
            samples,
            grades,
        })
    }

    pub fn num_slices(&self) -> usize {
        self.grades.len()
    }

    /// Binary labels: 0 for grade 1, 1 for grades 2 and 3.
    pub fn binary_labels(&self) -> Vec<u8> {
        self.grades.iter().map(|&g| u8::from(g != GRADE_BAD)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Heavy broadband noise over most of the slice.
    NoiseBurst,
    /// Electrode off: a flat line with sensor noise.
    Flatline,
    /// The beat amplitude collapses under the noise floor.
    Dropout,
}

/// Gaussian bump `a·exp(−(t−c)²/(2w²))`.
fn bump(t: f64, c: f64, w: f64, a: f64) -> f64 {
    let z = (t - c) / w;
    a * (-0.5 * z * z).exp()
}

/// Clean beat template centred on the R peak, `t` in seconds.
fn beat(t: f64, rr: f64) -> f64 {
    let qt = 0.3 * rr.sqrt();
    bump(t, -0.2, 0.025, 0.15) + bump(t, -0.03, 0.01, -0.12) + bump(t, 0.0, 0.012, 1.0) + bump(t, 0.03, 0.01, -0.25)
        + bump(t, qt, 0.06, 0.3)
}

struct Rhythm {
    beats: Vec<f64>,
    rr: Vec<f64>,
}

fn rhythm(seconds: f64, rng: &mut ChaCha8Rng) -> Rhythm {
    let bpm = rng.gen_range(50.0..90.0);
    let base = 60.0 / bpm;
    let mut beats = Vec::new();
    let mut rr = Vec::new();
    let mut t = rng.gen_range(0.0..base);
    while t < seconds + 1.0 {
        let r = base * (1.0 + 0.05 * rng.gen_range(-1.0..1.0));
        beats.push(t);
        rr.push(r);
        t += r;
    }
    Rhythm { beats, rr }
}

fn clean_signal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = RAW_RATE_HZ as f64;
    let Rhythm { beats, rr } = rhythm(n as f64 / fs, rng);
    let (w1, p1) = (rng.gen_range(0.15..0.35), rng.gen_range(0.0..std::f64::consts::TAU));
    let (w2, p2) = (rng.gen_range(0.05..0.12), rng.gen_range(0.0..std::f64::consts::TAU));
    let gain = rng.gen_range(0.8..1.2);
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        while k + 1 < beats.len() && beats[k + 1] <= t {
            k += 1;
        }
        let mut ecg = 0.0;
        for j in k.saturating_sub(1)..(k + 2).min(beats.len()) {
            ecg += beat(t - beats[j], rr[j]);
        }
        let wander = 0.1 * (std::f64::consts::TAU * w1 * t + p1).sin() + 0.05 * (std::f64::consts::TAU * w2 * t + p2).sin();
        *v = gain * ecg + wander;
    }
    out
}

/// Overwrites the slice `x` with an anomaly of the given kind.
fn corrupt(x: &mut [f64], kind: AnomalyKind, rng: &mut ChaCha8Rng) {
    let n = x.len();
    match kind {
        AnomalyKind::NoiseBurst => {
            let len = rng.gen_range(n * 2 / 5..=n);
            let start = rng.gen_range(0..=n - len);
            let noise = Normal::new(0.0, rng.gen_range(0.3..1.5)).expect("valid sd");
            for v in &mut x[start..start + len] {
                *v += noise.sample(rng);
            }
        }
        AnomalyKind::Flatline => {
            let level = x[0];
            let noise = Normal::new(0.0, 0.01).expect("valid sd");
            for v in x.iter_mut() {
                *v = level + noise.sample(rng);
            }
        }
        AnomalyKind::Dropout => {
            let scale = rng.gen_range(0.0..0.25);
            let noise = Normal::new(0.0, 0.05).expect("valid sd");
            let mean = x.iter().sum::<f64>() / n as f64;
            for v in x.iter_mut() {
                *v = mean + scale * (*v - mean) + noise.sample(rng);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub recordings: usize,
    pub seconds_each: usize,
    /// Probability that a slice is anomalous (grade 1).
    pub anomaly_rate: f64,
    /// Probability that a normal slice is graded medium.
    pub medium_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(recordings: usize, seconds_each: usize, anomaly_rate: f64, seed: u64) -> Self {
        Self {
            recordings,
            seconds_each,
            anomaly_rate,
            medium_rate: 0.3,
            seed,
        }
    }
}

/// Quasi-periodic pulse trains (50 to 90 bpm, baseline wander, mild
/// noise). Each 5-second slice is independently anomalous with
/// probability `anomaly_rate`, picking one of the [`AnomalyKind`]s.
/// Recording `i` is generated from its own stream of the seed, so output
/// is deterministic.
pub fn synth_ecg(cfg: &SynthConfig) -> Result<Vec<Record>> {
    if !(0.0..=1.0).contains(&cfg.anomaly_rate) || !(0.0..=1.0).contains(&cfg.medium_rate) {
        return Err(Error::InvalidArgument(format!("anomaly rate {} outside [0, 1]", cfg.anomaly_rate)));
    }
    if cfg.recordings == 0 || cfg.seconds_each < SLICE_SECONDS {
        return Err(Error::InvalidArgument("need at least one recording of one slice".into()));
    }
    let slices = cfg.seconds_each / SLICE_SECONDS;
    (0..cfg.recordings)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(id as u64 + 1);
            let mut x = clean_signal(slices * SLICE_SAMPLES, &mut rng);
            let mut grades = Vec::with_capacity(slices);
            for s in 0..slices {
                let part = &mut x[s * SLICE_SAMPLES..(s + 1) * SLICE_SAMPLES];
                let (grade, sd) = if rng.gen_bool(cfg.anomaly_rate) {
                    let kind = match rng.gen_range(0..3) {
                        0 => AnomalyKind::NoiseBurst,
                        1 => AnomalyKind::Flatline,
                        _ => AnomalyKind::Dropout,
                    };
                    corrupt(part, kind, &mut rng);
                    (GRADE_BAD, 0.0)
                } else if rng.gen_bool(cfg.medium_rate) {
                    (GRADE_MEDIUM, 0.04)
                } else {
                    (GRADE_GOOD, 0.015)
                };
                if sd > 0.0 {
                    let noise = Normal::new(0.0, sd).expect("valid sd");
                    part.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                }
                grades.push(grade);
            }
            Record::new(id, x, grades)
        })
        .collect()
}
