use crate::error::{Error, Result};
use crate::geometry::SurfaceSignal;

/// Channels whose standard deviation falls below this are only centred.
pub const MIN_CHANNEL_STD: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streaming per-channel mean and variance (Chan et al. pairwise merge).
#[derive(Debug, Clone, Default)]
pub struct ChannelAccumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ChannelAccumulator {
    pub fn new(channels: usize) -> Self {
        ChannelAccumulator {
            count: 0.0,
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        }
    }

    pub fn add(&mut self, signal: &SurfaceSignal) -> Result<()> {
        let c = self.mean.len();
        if signal.channels() != c {
            return Err(Error::Data(format!(
                "signal has {} channels, statistics track {c}",
                signal.channels()
            )));
        }
        let n = signal.vertex_count() as f64;
        if n == 0.0 {
            return Ok(());
        }
        for ch in 0..c {
            let values = signal.values().iter().skip(ch).step_by(c);
            let mean = values.clone().sum::<f64>() / n;
            let m2: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
            let total = self.count + n;
            let delta = mean - self.mean[ch];
            self.mean[ch] += delta * n / total;
            self.m2[ch] += m2 + delta * delta * self.count * n / total;
        }
        self.count += n;
        Ok(())
    }

    /// Population statistics; near-constant channels get unit scale.
    pub fn finish(&self) -> Result<NormStats> {
        if self.count == 0.0 {
            return Err(Error::Data("no training values to compute statistics".into()));
        }
        let std = self
            .m2
            .iter()
            .enumerate()
            .map(|(ch, m2)| {
                let s = (m2 / self.count).sqrt();
                if s < MIN_CHANNEL_STD {
                    log::warn!("channel {ch} is constant; normalizing by 1");
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(NormStats {
            mean: self.mean.clone(),
            std,
        })
    }
}

impl NormStats {
    pub fn compute<'a>(signals: impl IntoIterator<Item = &'a SurfaceSignal>) -> Result<NormStats> {
        let mut acc: Option<ChannelAccumulator> = None;
        for s in signals {
            acc.get_or_insert_with(|| ChannelAccumulator::new(s.channels()))
                .add(s)?;
        }
        acc.ok_or_else(|| Error::Data("no training signals".into()))?
            .finish()
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` per channel, in place.
    pub fn apply(&self, signal: &mut SurfaceSignal) -> Result<()> {
        let c = self.channels();
        if signal.channels() != c {
            return Err(Error::Data(format!(
                "signal has {} channels, statistics have {c}",
                signal.channels()
            )));
        }
        for row in signal.values_mut().chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    /// Compact `a,b,c` form used in checkpoint records.
    pub fn to_record(&self) -> (String, String) {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        (join(&self.mean), join(&self.std))
    }

    pub fn from_record(mean: &str, std: &str) -> Result<NormStats> {
        let split = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad normalization value {x:?}")))
                })
                .collect()
        };
        let stats = NormStats {
            mean: split(mean)?,
            std: split(std)?,
        };
        if stats.mean.len() != stats.std.len() || stats.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Data("inconsistent normalization record".into()));
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signal(values: Vec<f64>, channels: usize) -> SurfaceSignal {
        let names = (0..channels).map(|c| format!("c{c}")).collect();
        SurfaceSignal::new(names, values).unwrap()
    }

    #[test]
    fn training_split_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut train: Vec<SurfaceSignal> = (0..5)
            .map(|_| {
                signal(
                    (0..300)
                        .map(|i| if i % 3 == 0 { rng.gen_range(2.0..9.0) } else { rng.gen_range(-40.0..-30.0) })
                        .collect(),
                    3,
                )
            })
            .collect();
        let stats = NormStats::compute(&train).unwrap();
        for s in &mut train {
            stats.apply(s).unwrap();
        }
        let after = NormStats::compute(&train).unwrap();
        for ch in 0..3 {
            assert!(after.mean[ch].abs() < 1e-6);
            assert!((after.std[ch] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn standardized_data_is_unchanged() {
        let mut s = signal(vec![-1.0, 1.0, -1.0, 1.0], 1);
        let before = s.clone();
        let stats = NormStats::compute([&s]).unwrap();
        stats.apply(&mut s).unwrap();
        for (a, b) in s.values().iter().zip(before.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_becomes_zero() {
        let mut s = signal(vec![3.0, 1.0, 3.0, 2.0, 3.0, 4.0], 2);
        let stats = NormStats::compute([&s]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        stats.apply(&mut s).unwrap();
        assert!(s.values().iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_statistics_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let signals: Vec<SurfaceSignal> = (0..4)
            .map(|k| signal((0..50).map(|_| rng.gen_range(0.0..1.0) + k as f64).collect(), 1))
            .collect();
        let all: Vec<f64> = signals.iter().flat_map(|s| s.values().to_vec()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        let stats = NormStats::compute(&signals).unwrap();
        assert!((stats.mean[0] - mean).abs() < 1e-12);
        assert!((stats.std[0] - std).abs() < 1e-12);
    }

    #[test]
    fn record_round_trip_is_exact() {
        let stats = NormStats {
            mean: vec![0.1, -2.0 / 3.0],
            std: vec![1.0 / 7.0, 3.5],
        };
        let (m, s) = stats.to_record();
        assert_eq!(NormStats::from_record(&m, &s).unwrap(), stats);
    }
}
