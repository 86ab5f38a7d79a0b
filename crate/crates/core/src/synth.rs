//! Synthetic trip generator: per-channel mean-reverting random walks.
//!
//! Each channel follows `x ← x + θ(μ − x) + σ·η` at the raw rate, with `μ`
//! drawn once per driver around the class level. Class 1 shifts the level
//! by `level_offset` and scales the noise by `noise_ratio`, which gives the
//! downstream statistics a real but imperfect class signal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{BinaryLabel, Channel, RawSample, TripStream, RAW_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSynth {
    /// Class-0 mean-reversion level.
    pub level: f64,
    /// Reversion strength per raw sample, in (0, 1].
    pub reversion: f64,
    /// Innovation standard deviation per raw sample.
    pub noise: f64,
    /// Added to `level` for class 1.
    pub level_offset: f64,
    /// Multiplies `noise` for class 1.
    pub noise_ratio: f64,
    /// Standard deviation of the per-driver level jitter.
    pub driver_spread: f64,
}

impl ChannelSynth {
    const fn new(level: f64, reversion: f64, noise: f64, level_offset: f64, noise_ratio: f64, driver_spread: f64) -> Self {
        Self {
            level,
            reversion,
            noise,
            level_offset,
            noise_ratio,
            driver_spread,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthChannels {
    pub speed: ChannelSynth,
    pub accel_x: ChannelSynth,
    pub accel_y: ChannelSynth,
    pub yaw_rate: ChannelSynth,
    pub pitch_rate: ChannelSynth,
    pub roll_rate: ChannelSynth,
    pub heading: ChannelSynth,
}

impl SynthChannels {
    pub fn get(&self, c: Channel) -> &ChannelSynth {
        match c {
            Channel::Speed => &self.speed,
            Channel::AccelX => &self.accel_x,
            Channel::AccelY => &self.accel_y,
            Channel::YawRate => &self.yaw_rate,
            Channel::PitchRate => &self.pitch_rate,
            Channel::RollRate => &self.roll_rate,
            Channel::Heading => &self.heading,
        }
    }

    fn all_mut(&mut self) -> [&mut ChannelSynth; 7] {
        [
            &mut self.speed,
            &mut self.accel_x,
            &mut self.accel_y,
            &mut self.yaw_rate,
            &mut self.pitch_rate,
            &mut self.roll_rate,
            &mut self.heading,
        ]
    }
}

impl Default for SynthChannels {
    fn default() -> Self {
        Self {
            speed: ChannelSynth::new(50.0, 0.005, 0.5, -4.0, 1.0, 6.0),
            accel_x: ChannelSynth::new(0.0, 0.05, 0.08, 0.0, 0.9, 0.02),
            accel_y: ChannelSynth::new(0.0, 0.05, 0.08, 0.0, 1.0, 0.02),
            yaw_rate: ChannelSynth::new(0.0, 0.02, 0.6, 0.0, 1.0, 0.2),
            pitch_rate: ChannelSynth::new(0.0, 0.05, 0.3, 0.0, 1.12, 0.05),
            roll_rate: ChannelSynth::new(0.0, 0.05, 0.3, 0.0, 1.0, 0.05),
            heading: ChannelSynth::new(180.0, 0.001, 2.0, 0.0, 1.0, 30.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub drivers_per_class: usize,
    pub trips_per_driver: usize,
    pub trip_duration_s: usize,
    pub sample_rate_hz: u32,
    pub channels: SynthChannels,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            drivers_per_class: 100,
            trips_per_driver: 1,
            trip_duration_s: 1024,
            sample_rate_hz: RAW_RATE_HZ,
            channels: SynthChannels::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Same processes with every class difference removed.
    pub fn null_signal(mut self) -> Self {
        for c in self.channels.all_mut() {
            c.level_offset = 0.0;
            c.noise_ratio = 1.0;
        }
        self
    }

    pub fn validate(&self, window_length_s: usize) -> Result<()> {
        if self.drivers_per_class == 0 || self.trips_per_driver == 0 {
            return Err(Error::Config("synth needs at least one driver and trip".into()));
        }
        if self.sample_rate_hz == 0 || self.trip_duration_s == 0 {
            return Err(Error::Config("synth rate and duration must be positive".into()));
        }
        for c in Channel::ALL {
            let p = self.channels.get(c);
            if !(p.noise > 0.0 && p.noise_ratio > 0.0) {
                return Err(Error::Config(format!("{}: noise scales must be > 0", c.name())));
            }
            if !(p.reversion > 0.0 && p.reversion <= 1.0) {
                return Err(Error::Config(format!("{}: reversion must lie in (0, 1]", c.name())));
            }
            if p.driver_spread < 0.0 {
                return Err(Error::Config(format!("{}: driver_spread must be >= 0", c.name())));
            }
        }
        if self.trip_duration_s < 2 * window_length_s {
            log::warn!(
                "trip duration {} s is under twice the {} s window",
                self.trip_duration_s,
                window_length_s
            );
        }
        Ok(())
    }
}

fn quantize(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn generate_trip(spec: &SynthSpec, driver: usize, trip: usize, label: BinaryLabel) -> TripStream {
    let mut driver_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    driver_rng.set_stream(2 * driver as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2 * (driver * spec.trips_per_driver + trip) as u64 + 1);

    let class1 = label == BinaryLabel::Class1;
    let params: Vec<(f64, f64, f64)> = Channel::ALL
        .iter()
        .map(|&c| {
            let p = spec.channels.get(c);
            let z: f64 = StandardNormal.sample(&mut driver_rng);
            let level = p.level + if class1 { p.level_offset } else { 0.0 } + p.driver_spread * z;
            let noise = p.noise * if class1 { p.noise_ratio } else { 1.0 };
            (level, p.reversion, noise)
        })
        .collect();

    let n = spec.trip_duration_s * spec.sample_rate_hz as usize;
    let dt = 1.0 / f64::from(spec.sample_rate_hz);
    let mut state: Vec<f64> = params.iter().map(|p| p.0).collect();
    let mut samples = Vec::with_capacity(n);
    for step in 0..n {
        for (x, &(level, theta, sigma)) in state.iter_mut().zip(&params) {
            let eta: f64 = StandardNormal.sample(&mut rng);
            *x += theta * (level - *x) + sigma * eta;
        }
        let heading = quantize(state[6].rem_euclid(360.0));
        samples.push(RawSample {
            t: quantize(step as f64 * dt),
            speed: quantize(state[0].max(0.0)),
            accel_x: quantize(state[1]),
            accel_y: quantize(state[2]),
            yaw_rate: quantize(state[3]),
            pitch_rate: quantize(state[4]),
            roll_rate: quantize(state[5]),
            heading: if heading >= 360.0 { 0.0 } else { heading },
        });
    }
    TripStream {
        trip_id: format!("trip{:05}-{:02}", driver, trip),
        driver_id: format!("drv{driver:05}"),
        label: Some(label),
        rate_hz: spec.sample_rate_hz,
        samples,
    }
}

/// Generates every trip of `spec`: drivers `0..n` are class 0, the next
/// `n` class 1. Output depends only on the spec and its seed.
pub fn generate(spec: &SynthSpec) -> Vec<TripStream> {
    let n = spec.drivers_per_class;
    let jobs: Vec<(usize, usize, BinaryLabel)> = (0..2 * n)
        .flat_map(|d| {
            let label = if d < n { BinaryLabel::Class0 } else { BinaryLabel::Class1 };
            (0..spec.trips_per_driver).map(move |t| (d, t, label))
        })
        .collect();
    jobs.par_iter()
        .map(|&(d, t, l)| generate_trip(spec, d, t, l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::validate_stream;

    fn small() -> SynthSpec {
        SynthSpec {
            drivers_per_class: 2,
            trips_per_driver: 2,
            trip_duration_s: 20,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_validity() {
        let trips = generate(&small());
        assert_eq!(trips.len(), 8);
        for t in &trips {
            assert_eq!(t.samples.len(), 20 * 15);
            assert!(validate_stream(t).is_clean(), "{:?}", validate_stream(t));
        }
        assert_eq!(trips.iter().filter(|t| t.label == Some(BinaryLabel::Class1)).count(), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()), generate(&small()));
        let other = SynthSpec { seed: 6, ..small() };
        assert_ne!(generate(&small()), generate(&other));
    }

    #[test]
    fn null_signal_zeroes_offsets() {
        let s = SynthSpec::default().null_signal();
        for c in Channel::ALL {
            assert_eq!(s.channels.get(c).level_offset, 0.0);
            assert_eq!(s.channels.get(c).noise_ratio, 1.0);
        }
    }

    #[test]
    fn rejects_bad_noise() {
        let mut s = small();
        s.channels.speed.noise = 0.0;
        assert!(s.validate(256).is_err());
    }
}
