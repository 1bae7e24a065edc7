//! Piecewise-constant control fields.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::f17;

/// Closed amplitude interval [min, max].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { min: -5.0, max: 5.0 }
    }
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::InvalidParameter(format!("invalid bounds [{min}, {max}]")));
        }
        Ok(Bounds { min, max })
    }

    pub fn clip(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Ω_{k+1} = clip(Ω_k + a_k, Ω_min, Ω_max)
pub fn apply_increment(value: f64, action: f64, bounds: &Bounds) -> f64 {
    bounds.clip(value + action)
}

/// Amplitudes Ω_1..Ω_{N_c} held constant on equal bins of [0, T].
#[derive(Clone, Debug, PartialEq)]
pub struct Pulse {
    amplitudes: Vec<f64>,
    bounds: Bounds,
    horizon: f64,
}

impl Pulse {
    pub fn new(amplitudes: Vec<f64>, bounds: Bounds, horizon: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidParameter("pulse needs at least one bin".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if let Some((j, v)) = amplitudes.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
            return Err(Error::OutOfBounds(format!(
                "amplitude {v} in bin {j} outside [{}, {}]",
                bounds.min, bounds.max
            )));
        }
        Ok(Pulse {
            amplitudes,
            bounds,
            horizon,
        })
    }

    /// All-zero pulse (requires 0 within bounds).
    pub fn zeros(bins: usize, bounds: Bounds, horizon: f64) -> Result<Self> {
        Pulse::new(vec![0.0; bins], bounds, horizon)
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.horizon / self.amplitudes.len() as f64
    }

    pub fn bin_start(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.amplitudes.len() as f64
    }

    /// Ω(t), with t = T mapped to the last bin.
    pub fn sample(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfBounds(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let j = ((t / self.bin_width()).floor() as usize).min(self.amplitudes.len() - 1);
        Ok(self.amplitudes[j])
    }

    pub fn into_amplitudes(self) -> Vec<f64> {
        self.amplitudes
    }

    /// CSV with header `bin_index,t_start,amplitude`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_index", "t_start", "amplitude"])?;
        for (j, a) in self.amplitudes.iter().enumerate() {
            w.write_record([j.to_string(), f17(self.bin_start(j)), f17(*a)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, bounds: Bounds, horizon: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut amplitudes = Vec::new();
        for (expected, rec) in r.records().enumerate() {
            let rec = rec?;
            let idx: usize = parse_field(&rec, 0)?;
            if idx != expected {
                return Err(Error::InvalidParameter(format!(
                    "pulse CSV bin {idx} out of order (expected {expected})"
                )));
            }
            amplitudes.push(parse_field(&rec, 2)?);
        }
        Pulse::new(amplitudes, bounds, horizon)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::InvalidParameter(format!("bad CSV field {i} in {rec:?}")))
}

/// Pulse with i.i.d. uniform amplitudes in `bounds`, reproducible from `seed`.
pub fn random_pulse(seed: u64, bounds: Bounds, bins: usize, horizon: f64) -> Result<Pulse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amplitudes = (0..bins).map(|_| uniform(&mut rng, &bounds)).collect();
    Pulse::new(amplitudes, bounds, horizon)
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, bounds: &Bounds) -> f64 {
    if bounds.width() == 0.0 {
        bounds.min
    } else {
        bounds.clip(bounds.min + bounds.width() * rng.random::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn increments_clip() {
        let b = Bounds::default();
        assert_eq!(apply_increment(4.8, 0.5, &b), 5.0);
        assert_eq!(apply_increment(0.0, 0.0, &b), 0.0);
        assert_eq!(apply_increment(-4.9, -3.0, &b), -5.0);
    }

    #[test]
    fn sampling_bins() {
        let p = Pulse::new(vec![1.0, 2.0, 3.0], Bounds::default(), 3.0).unwrap();
        assert_eq!(p.sample(1.5).unwrap(), 2.0);
        assert_eq!(p.sample(0.0).unwrap(), 1.0);
        assert_eq!(p.sample(3.0).unwrap(), 3.0);
        assert!(p.sample(-0.1).is_err());
        assert!(p.sample(3.1).is_err());
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let b = Bounds::default();
        let a = random_pulse(42, b, 1000, 7.0).unwrap();
        assert_eq!(a, random_pulse(42, b, 1000, 7.0).unwrap());
        assert_ne!(a, random_pulse(43, b, 1000, 7.0).unwrap());
        assert!(a.amplitudes().iter().all(|v| b.contains(*v)));
        let z = random_pulse(1, Bounds::new(0.0, 0.0).unwrap(), 5, 1.0).unwrap();
        assert!(z.amplitudes().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn construction_rejects_out_of_bounds() {
        assert!(Pulse::new(vec![6.0], Bounds::default(), 1.0).is_err());
        assert!(Pulse::new(vec![], Bounds::default(), 1.0).is_err());
        assert!(Bounds::new(1.0, -1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = random_pulse(9, Bounds::default(), 13, 7.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("bin_index,t_start,amplitude\n"));
        let q = Pulse::read_csv(&buf[..], Bounds::default(), 7.0).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn increments_never_leave_bounds(start in -5.0f64..5.0, actions in prop::collection::vec(-20.0f64..20.0, 1..50)) {
            let b = Bounds::default();
            let mut v = start;
            let mut amps = Vec::new();
            for a in actions {
                v = apply_increment(v, a, &b);
                amps.push(v);
            }
            prop_assert!(Pulse::new(amps, b, 1.0).is_ok());
        }

        #[test]
        fn sample_is_piecewise_constant(t in 0.0f64..7.0, u in 0.0f64..1.0) {
            let p = random_pulse(5, Bounds::default(), 70, 7.0).unwrap();
            let dt = p.bin_width();
            let j = (t / dt).floor();
            let t2 = ((j + u) * dt).min(7.0);
            if (t2 / dt).floor() == j {
                prop_assert_eq!(p.sample(t).unwrap(), p.sample(t2).unwrap());
            }
        }
    }
}
