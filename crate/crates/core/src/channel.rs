//! Quasi-static fading, relay processing and assembly of the delayed
//! received vector at the destination.

use rand::Rng;

use crate::coding::{CodeMatrix, SpaceTimeCode};
use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, gaussian_matrix, CMat, CVec, C64};
use crate::system::{DelayProfile, SystemConfig, Topology};

/// One block-fading realization. Entries are i.i.d. `CN(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Relay-to-destination matrices, `N_d × B` each.
    pub relay_dest: Vec<CMat>,
    /// Source-to-destination matrix `N_d × N` when the direct link is on.
    pub source_dest: Option<CMat>,
    /// Source-to-relay matrices, `B × N` each.
    pub source_relay: Vec<CMat>,
}

/// Draws a fresh realization. Relay-destination matrices are drawn first,
/// column by column, so an `N_d×2` MAS channel and two `N_d×1` SAS channels
/// consume the same random numbers in the same order.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> ChannelRealization {
    let nd = cfg.dest_antennas();
    let b = cfg.relay_antennas();
    let relay_dest = (0..cfg.n_r).map(|_| gaussian_matrix(rng, nd, b)).collect();
    let source_dest = cfg.direct_link.then(|| gaussian_matrix(rng, nd, cfg.n_ant));
    let source_relay = (0..cfg.n_r)
        .map(|_| gaussian_matrix(rng, b, cfg.n_ant))
        .collect();
    ChannelRealization {
        relay_dest,
        source_dest,
        source_relay,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    sigma_d2: f64,
}

impl NoiseParams {
    pub fn new(sigma_d2: f64) -> Result<Self> {
        if !(sigma_d2.is_finite() && sigma_d2 > 0.0) {
            return Err(Error::ZeroNoise);
        }
        Ok(Self { sigma_d2 })
    }

    pub fn sigma_d2(&self) -> f64 {
        self.sigma_d2
    }
}

/// DF relay: re-encode the detected symbols and apply the code matrix.
/// MAS relays send `Φ_k M(s)`; SAS relay `k` sends `φ_k ⊙ m_k(s)`.
pub fn relay_process(
    s_detected: &[C64],
    code_matrix: &CodeMatrix,
    code: SpaceTimeCode,
    k: usize,
) -> Result<CMat> {
    if k >= code_matrix.n_relays() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: code_matrix.n_relays(),
        });
    }
    let m = code.encode(s_detected)?;
    let phi = code_matrix.relay(k);
    match code_matrix.topology() {
        Topology::Mas => {
            if phi.ncols() != m.nrows() {
                return Err(Error::Dimension(format!(
                    "code matrix {:?} vs codeword {:?}",
                    phi.shape(),
                    m.shape()
                )));
            }
            Ok(phi * m)
        }
        Topology::Sas => {
            if k >= m.nrows() || phi.ncols() != m.ncols() {
                return Err(Error::Dimension(format!(
                    "SAS relay {k} with gains {:?} vs codeword {:?}",
                    phi.shape(),
                    m.shape()
                )));
            }
            Ok(CMat::from_fn(1, m.ncols(), |_, t| phi[(0, t)] * m[(k, t)]))
        }
    }
}

/// AF relay: scale the first-hop observation by a scalar gain.
pub fn af_relay_process(received_first_hop: &CMat, gain: f64) -> CMat {
    received_first_hop * C64::new(gain, 0.0)
}

/// Gain that puts this particular block exactly at `budget` (zero for a zero block).
pub fn af_normalizing_gain(received_first_hop: &CMat, budget: f64) -> f64 {
    let p = received_first_hop.norm_squared();
    if p > 0.0 {
        (budget / p).sqrt()
    } else {
        0.0
    }
}

/// Fixed gain from the expected block power.
pub fn af_fixed_gain(budget: f64, expected_power: f64) -> f64 {
    if expected_power > 0.0 {
        (budget / expected_power).sqrt()
    } else {
        0.0
    }
}

/// Noiseless stacked received vector: `Σ_k Δ_k vec(G_k X_k)` followed by
/// `G_SD s` when a direct-link symbol vector is given.
pub fn noiseless_received(
    channel: &ChannelRealization,
    relay_blocks: &[CMat],
    profile: &DelayProfile,
    direct: Option<&[C64]>,
) -> Result<CVec> {
    if relay_blocks.len() != channel.relay_dest.len() || profile.len() != relay_blocks.len() {
        return Err(Error::Dimension(format!(
            "{} relay blocks, {} channels, {} delays",
            relay_blocks.len(),
            channel.relay_dest.len(),
            profile.len()
        )));
    }
    let nd = channel.relay_dest.first().map_or(0, |g| g.nrows());
    let t_len = relay_blocks.first().map_or(0, |x| x.ncols());
    let relay_len = nd * (profile.delta_max() + t_len);
    let dl_len = if direct.is_some() { nd } else { 0 };
    let mut r = CVec::zeros(relay_len + dl_len);
    for (k, (g, x)) in channel.relay_dest.iter().zip(relay_blocks).enumerate() {
        if g.ncols() != x.nrows() || x.ncols() != t_len {
            return Err(Error::Dimension(format!(
                "relay {k}: channel {:?}, block {:?}",
                g.shape(),
                x.shape()
            )));
        }
        let y = g * x;
        let off = profile.offset(k, nd);
        for t in 0..t_len {
            for a in 0..nd {
                r[off + t * nd + a] += y[(a, t)];
            }
        }
    }
    if let Some(s) = direct {
        let gsd = channel
            .source_dest
            .as_ref()
            .ok_or_else(|| Error::Dimension("direct link requested without G_SD".into()))?;
        let y = gsd * CVec::from_column_slice(s);
        r.rows_mut(relay_len, nd).copy_from(&y);
    }
    Ok(r)
}

/// Adds i.i.d. `CN(0, σ_d²)` noise to every sample. One unit-variance draw is
/// taken per sample regardless of `σ_d²`, so streams stay aligned across SNRs.
pub fn add_noise<R: Rng + ?Sized>(r: &mut CVec, sigma_d2: f64, rng: &mut R) {
    let scale = sigma_d2.max(0.0).sqrt();
    for z in r.iter_mut() {
        *z += complex_gaussian(rng, 1.0) * scale;
    }
}

/// `r = Σ_k Δ_k vec(G_k X_k) + n`, with the direct-link observation appended.
pub fn assemble_received<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    relay_blocks: &[CMat],
    profile: &DelayProfile,
    direct: Option<&[C64]>,
    sigma_d2: f64,
    rng: &mut R,
) -> Result<CVec> {
    let mut r = noiseless_received(channel, relay_blocks, profile, direct)?;
    add_noise(&mut r, sigma_d2, rng);
    Ok(r)
}

/// Received SNR in dB, `σ_s² ‖D_D‖_F² / (M σ_d²)`. A zero channel returns `−∞`.
pub fn received_snr(d_norm2: f64, len: usize, sigma_s2: f64, sigma_d2: f64) -> Result<f64> {
    if sigma_d2.is_nan() || sigma_d2 <= 0.0 {
        return Err(Error::ZeroNoise);
    }
    if d_norm2 == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (sigma_s2 * d_norm2 / (len as f64 * sigma_d2)).log10())
}

/// Expected `‖D_D‖_F²` for i.i.d. unit-variance channels: `N_d P_R` from the
/// relays plus `N_d N` from the direct link.
pub fn expected_gain_energy(cfg: &SystemConfig) -> f64 {
    let nd = cfg.dest_antennas() as f64;
    let dl = if cfg.direct_link {
        cfg.n_ant as f64
    } else {
        0.0
    };
    nd * (cfg.p_r + dl)
}

/// Destination noise variance that realizes `snr_db` on average.
pub fn noise_variance_for_snr(cfg: &SystemConfig, snr_db: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    cfg.sigma_s2 * expected_gain_energy(cfg) / (cfg.received_len() as f64 * snr)
}
