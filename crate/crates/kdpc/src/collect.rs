//! Training-episode collection on the benchmark plant.
//!
//! Two episode families feed the two predictor fits.
//!
//! Burst-release episodes cover the past-window map. Each episode settles the
//! plant at a random output level under a PD loop (unrecorded), fires a short
//! burst of random input steps that lands inside the recorded past window,
//! then freezes the input through the future horizon and beyond. Every window
//! harvested from such an episode has zero future increments, so its recorded
//! future outputs are exactly the free response the past map must predict;
//! no deflation of an input contribution is needed and none of its error
//! leaks into the targets.
//!
//! Origin-dither episodes cover the input-sensitivity map. Each starts at
//! rest, holds zero input across the past window, then dithers through the
//! future horizon. The free response from rest is identically zero, so the
//! recorded future outputs are purely the input contribution that map has to
//! capture.
//!
//! Episodes are emitted in sign-mirrored pairs. The benchmark dynamics are
//! odd, so the mirror of a valid episode is also valid; mirroring doubles
//! coverage and keeps the fitted maps exactly balanced around the origin,
//! which is what makes the predictor hold still at rest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Trajectory;
use crate::plant::{Plant, PlantState};
use crate::{Error, Result};

/// Burst-release collection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstConfig {
    /// Episodes before mirroring; the output doubles this, plus one rest run.
    pub episodes: usize,
    pub t_ini: usize,
    pub n_horizon: usize,
    /// Frozen-input samples kept past the horizon so later window anchors
    /// still see the burst at different ages.
    pub extra_hold: usize,
    /// Settle levels are drawn uniformly from this symmetric range.
    pub level_range: f64,
    pub seed: u64,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            t_ini: 10,
            n_horizon: 15,
            extra_hold: 10,
            level_range: 1.5,
            seed: 42,
        }
    }
}

impl BurstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.t_ini == 0 || self.n_horizon == 0 {
            return Err(Error::InvalidParameter(
                "burst collection needs episodes, t_ini, and n_horizon all nonzero".into(),
            ));
        }
        if !self.level_range.is_finite() || self.level_range < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "level range must be finite and nonnegative, got {}",
                self.level_range
            )));
        }
        Ok(())
    }
}

/// Collect burst-release episodes plus one exact rest run.
///
/// The plant state carries over between episodes; the PD prefix re-settles it
/// at each new level, so no episode depends on the previous one's tail beyond
/// that settling.
pub fn burst_release_episodes(plant: &impl Plant, cfg: &BurstConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let ts = plant.sample_time();
    let t_ini = cfg.t_ini;
    // Settles the benchmark well inside the prefix at every level in range.
    let (kp, kd) = (2.0, 1.2);
    let prefix = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = PlantState::origin();
    let mut y_prev = plant.output(&x, 0.0);
    let mut out = Vec::with_capacity(2 * cfg.episodes + 1);
    for ep in 0..cfg.episodes {
        let level = rng.gen_range(-cfg.level_range..=cfg.level_range);
        let mut u_base = 0.0;
        for _ in 0..prefix {
            let y = plant.output(&x, 0.0);
            u_base = kp * (level - y) - kd * (y - y_prev) / ts;
            x = plant.step(&x, u_base, 0.0)?;
            y_prev = y;
        }
        // Mixture of quiet, moderate, and rail-scale bursts; the online
        // controller fires anywhere in this range.
        let a = match ep % 10 {
            0 => 0.0,
            1..=5 => rng.gen_range(0.05..0.7),
            _ => rng.gen_range(0.7..2.0),
        };
        let m = rng.gen_range(1..=t_ini);
        // Quiet episodes change little sample to sample; give them one
        // window each so they don't stack near-duplicate gram columns.
        let total = if a == 0.0 {
            1 + t_ini + cfg.n_horizon
        } else {
            1 + t_ini + cfg.n_horizon + cfg.extra_hold
        };
        let mut u_rec = Vec::with_capacity(total);
        let mut y_rec = Vec::with_capacity(total);
        for j in 0..total {
            let y = plant.output(&x, 0.0);
            let u = if (1..=t_ini).contains(&j) {
                if j > t_ini - m {
                    u_base + rng.gen_range(-a..=a)
                } else {
                    u_base
                }
            } else if j == 0 {
                u_base
            } else {
                u_rec[t_ini]
            };
            u_rec.push(u);
            y_rec.push(y);
            x = plant.step(&x, u, 0.0)?;
            y_prev = y;
        }
        let neg_u: Vec<f64> = u_rec.iter().map(|v| -v).collect();
        let neg_y: Vec<f64> = y_rec.iter().map(|v| -v).collect();
        out.push(Trajectory::new(u_rec, y_rec)?);
        out.push(Trajectory::new(neg_u, neg_y)?);
    }
    // One exact rest run so the fits pin the origin.
    let rest = t_ini + cfg.n_horizon + 1;
    out.push(Trajectory::new(vec![0.0; rest], vec![0.0; rest])?);
    Ok(out)
}

/// Origin-dither collection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherConfig {
    /// Sign-mirrored episode pairs; the output holds twice this many runs.
    pub pairs: usize,
    pub t_ini: usize,
    pub n_horizon: usize,
    /// Dither steps are drawn uniformly from this symmetric range. The
    /// sensitivity is extracted at zero, so small beats wide here.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for DitherConfig {
    fn default() -> Self {
        Self {
            pairs: 200,
            t_ini: 10,
            n_horizon: 15,
            amplitude: 0.2,
            seed: 7,
        }
    }
}

impl DitherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.t_ini == 0 || self.n_horizon == 0 {
            return Err(Error::InvalidParameter(
                "dither collection needs pairs, t_ini, and n_horizon all nonzero".into(),
            ));
        }
        if !self.amplitude.is_finite() || self.amplitude <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "dither amplitude must be finite and positive, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Collect origin-dither episodes: one window per run, futures driven purely
/// by the dither.
pub fn origin_dither_episodes(plant: &impl Plant, cfg: &DitherConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let t_ini = cfg.t_ini;
    let n = cfg.n_horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(2 * cfg.pairs);
    for _ in 0..cfg.pairs {
        let dither: Vec<f64> = (0..n).map(|_| rng.gen_range(-cfg.amplitude..=cfg.amplitude)).collect();
        for sign in [1.0, -1.0] {
            let mut x = PlantState::origin();
            let mut u_rec = Vec::with_capacity(t_ini + n + 1);
            let mut y_rec = Vec::with_capacity(t_ini + n + 1);
            for k in 0..t_ini + n + 1 {
                // Window anchors sit one step in; the dither must start at
                // the first future slot, not the last past one.
                let u = if k <= t_ini { 0.0 } else { sign * dither[k - t_ini - 1] };
                u_rec.push(u);
                y_rec.push(plant.output(&x, 0.0));
                x = plant.step(&x, u, 0.0)?;
            }
            out.push(Trajectory::new(u_rec, y_rec)?);
        }
    }
    Ok(out)
}
