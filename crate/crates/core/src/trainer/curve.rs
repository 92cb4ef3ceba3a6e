use crate::error::{Error, Result};
use crate::masks::MaskKind;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub total_reward: f64,
    pub oracle_reward: f64,
    pub score: f64,
    pub smoothed_score: f64,
    pub loss: f64,
    pub mean_mask: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub label: String,
    pub kind: MaskKind,
    pub u_len: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub config_hash: u64,
    pub wall_time_s: f64,
    pub reservoir_fingerprint: (u64, u64),
    pub source_fingerprint: Option<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
    /// `(episode, per-element mask)` taken before that episode's update.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub meta: RunMeta,
    pub episodes_to_threshold: Option<usize>,
}

impl LearningCurve {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }
}

/// First episode index whose trailing `window`-episode mean score reaches
/// `threshold`; the first candidate is `window - 1`.
pub fn episodes_to_threshold(scores: &[f64], threshold: f64, window: usize) -> Result<Option<usize>> {
    if window == 0 {
        return Err(Error::usage("window must be at least 1"));
    }
    if window > scores.len() {
        return Err(Error::usage(format!(
            "window {window} is longer than the curve ({} episodes)",
            scores.len()
        )));
    }
    let w = window as f64;
    let mut sum: f64 = scores[..window].iter().sum();
    if sum / w >= threshold {
        return Ok(Some(window - 1));
    }
    for i in window..scores.len() {
        sum += scores[i] - scores[i - window];
        if sum / w >= threshold {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Recomputes every window mean from scratch.
    fn scan_oracle(scores: &[f64], threshold: f64, window: usize) -> Option<usize> {
        (window - 1..scores.len()).find(|&i| {
            let s: f64 = scores[i + 1 - window..=i].iter().sum();
            s / window as f64 >= threshold
        })
    }

    #[test]
    fn constant_curves() {
        assert_eq!(episodes_to_threshold(&[1.0; 50], 0.9, 10).unwrap(), Some(9));
        assert_eq!(episodes_to_threshold(&[0.0; 50], 0.9, 10).unwrap(), None);
    }

    #[test]
    fn ramp_matches_direct_scan() {
        let ramp: Vec<f64> = (0..3000).map(|e| (e as f64 / 1000.0).min(1.0)).collect();
        let got = episodes_to_threshold(&ramp, 0.9, 100).unwrap();
        assert_eq!(got, scan_oracle(&ramp, 0.9, 100));
        // Window ending at i has mean (i - 49.5)/1000.
        assert_eq!(got, Some(950));
    }

    #[test]
    fn window_longer_than_curve_is_an_error() {
        assert!(episodes_to_threshold(&[1.0; 5], 0.9, 6).is_err());
        assert!(episodes_to_threshold(&[1.0; 5], 0.9, 0).is_err());
    }

    #[test]
    fn noisy_curves_match_direct_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..400)
                .map(|e| (e as f64 / 400.0) + rng.random_range(-0.3..0.3))
                .collect();
            for window in [1, 7, 50] {
                assert_eq!(
                    episodes_to_threshold(&scores, 0.8, window).unwrap(),
                    scan_oracle(&scores, 0.8, window)
                );
            }
        }
    }
}
