//! Monte Carlo BER engine.
//!
//! A frame is one quasi-static channel realization carrying
//! `blocks_per_frame` measured code blocks. Adaptive schemes first run
//! `warmup_blocks` decision-directed adaptation blocks in the same frame.
//! Every random stream is keyed by position (seed, frame, block, purpose),
//! so results do not depend on the SNR point, the worker count or, in
//! compare mode, on the scheme.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{
    af_fixed_gain, draw_channel, noise_variance_for_snr, noiseless_received, relay_process,
    ChannelRealization,
};
use crate::coding::{random_code_matrix, CodeMatrix, SpaceTimeCode};
use crate::detection::{DestinationModel, Detector, RelayLink};
use crate::dtacmo::{normalize_power, rls_init, DtAcmo};
use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, CMat, CVec, C64};
use crate::system::{
    build_candidate_set, qpsk_bit_errors, random_symbols, CandidateSet, DelayProfile,
    RelayStrategy, Scheme, SystemConfig, Topology,
};

const TAG_CHANNEL: u64 = 1;
const TAG_CODE: u64 = 2;
const TAG_BLOCK: u64 = 3;
const TAG_WARMUP: u64 = 4;

/// Frames simulated between early-stopping checks.
const FRAME_BATCH: u64 = 64;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for a position in the simulation.
pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let s = key.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k)));
    ChaCha8Rng::seed_from_u64(s)
}

/// One (SNR, scheme) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub scheme: Scheme,
    pub delay_profile: String,
    pub snr_db: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// 95% Wilson interval on the BER.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl BerPoint {
    pub fn new(scheme: Scheme, delay_profile: String, snr_db: f64, bits: u64, errors: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(errors, bits);
        Self {
            scheme,
            delay_profile,
            snr_db,
            bits_sent: bits,
            bit_errors: errors,
            ber: if bits > 0 {
                errors as f64 / bits as f64
            } else {
                0.0
            },
            ci_low,
            ci_high,
        }
    }
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(errors: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: SystemConfig,
    pub points: Vec<BerPoint>,
    pub duration: Duration,
    pub seed: u64,
}

impl RunResult {
    pub fn point(&self, scheme: Scheme, snr_db: f64) -> Option<&BerPoint> {
        self.points
            .iter()
            .find(|p| p.scheme == scheme && p.snr_db == snr_db)
    }

    pub fn curve(&self, scheme: Scheme) -> Vec<&BerPoint> {
        self.points.iter().filter(|p| p.scheme == scheme).collect()
    }
}

/// Per-frame state: channel, current code matrices and optional optimizer.
#[derive(Debug, Clone)]
pub struct FrameState {
    cfg: SystemConfig,
    code: SpaceTimeCode,
    profile: DelayProfile,
    candidates: CandidateSet,
    pub channel: ChannelRealization,
    pub code_matrix: CodeMatrix,
    pub optimizer: Option<DtAcmo>,
    first_hop_sigma2: f64,
    relay_models: Vec<DestinationModel>,
}

impl FrameState {
    /// Draws the channel from `channel_rng` and the scheme's initial code
    /// matrices from `code_rng`.
    pub fn new(
        cfg: &SystemConfig,
        scheme: Scheme,
        channel_rng: &mut ChaCha8Rng,
        code_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let code = SpaceTimeCode::for_antennas(cfg.n_ant)?;
        let channel = draw_channel(channel_rng, cfg);
        let identity = normalize_power(
            &CodeMatrix::identity(cfg.topology, cfg.n_r, cfg.n_ant, cfg.t_len),
            cfg.p_r,
        )?;
        let (code_matrix, optimizer) = match scheme {
            Scheme::FullAlamoutiPerRelay => {
                let (opt, phi0) = rls_init(code_rng, cfg)?;
                (phi0, Some(opt))
            }
            Scheme::DAlamouti => (identity, None),
            Scheme::RAlamouti => (
                random_code_matrix(
                    code_rng,
                    cfg.topology,
                    cfg.n_ant,
                    cfg.t_len,
                    cfg.p_r,
                    cfg.n_r,
                )?,
                None,
            ),
        };
        let optimizer = match optimizer {
            Some(o) => Some(o),
            None if cfg.optimizer.enabled => Some(DtAcmo::new(cfg)?),
            None => None,
        };
        let first_hop_sigma2 = match cfg.first_hop_snr_db {
            Some(db) => cfg.n_ant as f64 * cfg.sigma_s2 / 10f64.powf(db / 10.0),
            None => 0.0,
        };
        let relay_models = if cfg.first_hop_snr_db.is_some()
            && cfg.relay_strategy == RelayStrategy::Df
        {
            channel
                .source_relay
                .iter()
                .map(|f| {
                    let link = RelayLink {
                        channel: f.clone(),
                        pre: CMat::identity(cfg.n_ant, cfg.n_ant),
                        slot_gains: None,
                    };
                    DestinationModel::from_links(&[link], &DelayProfile::new(vec![0]), code, None)
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg: cfg.clone(),
            code,
            profile: cfg.delay_profile(),
            candidates: build_candidate_set(cfg.n_ant),
            channel,
            code_matrix,
            optimizer,
            first_hop_sigma2,
            relay_models,
        })
    }

    fn af_sigma2(&self, sigma_d2: f64) -> f64 {
        if self.cfg.first_hop_snr_db.is_some() {
            self.first_hop_sigma2
        } else {
            sigma_d2
        }
    }

    /// Fixed AF gain of relay `k`: its expected output power equals `P_R / n_r`.
    fn af_gain(&self, k: usize, sigma_r2: f64) -> f64 {
        let phi = self.code_matrix.relay(k);
        let weight = match self.cfg.topology {
            Topology::Mas => self.cfg.t_len as f64 * phi.norm_squared(),
            Topology::Sas => phi.norm_squared(),
        };
        let per_entry = self.cfg.n_ant as f64 * self.cfg.sigma_s2 + sigma_r2;
        af_fixed_gain(self.cfg.p_r / self.cfg.n_r as f64, weight * per_entry)
    }

    fn af_pre(&self, k: usize, gain: f64) -> CMat {
        let f = &self.channel.source_relay[k] * C64::new(gain, 0.0);
        match self.cfg.topology {
            Topology::Mas => self.code_matrix.relay(k) * f,
            Topology::Sas => f,
        }
    }

    fn sas_gains(&self, k: usize) -> Option<Vec<C64>> {
        (self.cfg.topology == Topology::Sas).then(|| self.code_matrix.slot_gains(k))
    }

    /// Destination model for the current code matrices.
    pub fn destination_model(&self, sigma_d2: f64) -> Result<DestinationModel> {
        let direct = self
            .channel
            .source_dest
            .as_ref()
            .filter(|_| self.cfg.direct_link);
        match self.cfg.relay_strategy {
            RelayStrategy::Df => {
                let links: Vec<RelayLink> = (0..self.cfg.n_r)
                    .map(|k| {
                        RelayLink::decode_forward(
                            &self.channel.relay_dest[k],
                            &self.code_matrix,
                            k,
                            self.cfg.n_ant,
                        )
                    })
                    .collect();
                DestinationModel::from_links(&links, &self.profile, self.code, direct)
            }
            RelayStrategy::Af => {
                let sigma_r2 = self.af_sigma2(sigma_d2);
                let nd = self.cfg.dest_antennas();
                let len = self.cfg.received_len();
                let mut cov = CMat::identity(len, len) * C64::new(sigma_d2, 0.0);
                let mut links = Vec::with_capacity(self.cfg.n_r);
                for k in 0..self.cfg.n_r {
                    let gain = self.af_gain(k, sigma_r2);
                    links.push(RelayLink {
                        channel: self.channel.relay_dest[k].clone(),
                        pre: self.af_pre(k, gain),
                        slot_gains: self.sas_gains(k),
                    });
                    let g = &self.channel.relay_dest[k];
                    let gp = match self.cfg.topology {
                        Topology::Mas => g * self.code_matrix.relay(k),
                        Topology::Sas => g.clone(),
                    };
                    let base = &gp * gp.adjoint() * C64::new(sigma_r2 * gain * gain, 0.0);
                    let off = self.profile.offset(k, nd);
                    for t in 0..self.cfg.t_len {
                        let w = self.sas_gains(k).map_or(1.0, |s| s[t].norm_sqr());
                        let mut view = cov.view_mut((off + t * nd, off + t * nd), (nd, nd));
                        view += &base * C64::new(w, 0.0);
                    }
                }
                DestinationModel::from_links(&links, &self.profile, self.code, direct)?
                    .with_noise_covariance(&cov)
            }
        }
    }

    /// Runs one code block; returns `(bit_errors, bits_sent)`. Draw order on
    /// `rng`: symbols, first-hop noise (`B·T` per relay), destination noise.
    pub fn run_block(
        &mut self,
        rng: &mut ChaCha8Rng,
        sigma_d2: f64,
        model: Option<&DestinationModel>,
    ) -> Result<(u64, u64)> {
        let n = self.cfg.n_ant;
        let (idx, s) = random_symbols(rng, n);
        let s_vec: Vec<C64> = s.iter().copied().collect();
        let codeword = self.code.encode(&s_vec)?;
        let b = self.cfg.relay_antennas();
        let t_len = self.cfg.t_len;
        let relay_noise: Vec<CMat> = (0..self.cfg.n_r)
            .map(|_| CMat::from_fn(b, t_len, |_, _| complex_gaussian(rng, 1.0)))
            .collect();

        let mut blocks = Vec::with_capacity(self.cfg.n_r);
        for k in 0..self.cfg.n_r {
            let x = match self.cfg.relay_strategy {
                RelayStrategy::Df => {
                    let s_relay = if self.relay_models.is_empty() {
                        s_vec.clone()
                    } else {
                        let y = &self.channel.source_relay[k] * &codeword
                            + &relay_noise[k] * C64::new(self.first_hop_sigma2.sqrt(), 0.0);
                        let y = CVec::from_column_slice(y.as_slice());
                        let det = Detector::new(&self.relay_models[k], &self.candidates)?;
                        det.detect(&y)?.s_hat.iter().copied().collect()
                    };
                    relay_process(&s_relay, &self.code_matrix, self.code, k)?
                }
                RelayStrategy::Af => {
                    let sigma_r2 = self.af_sigma2(sigma_d2);
                    let gain = self.af_gain(k, sigma_r2);
                    let y = &self.channel.source_relay[k] * &codeword
                        + &relay_noise[k] * C64::new(sigma_r2.sqrt(), 0.0);
                    let y = y * C64::new(gain, 0.0);
                    match self.cfg.topology {
                        Topology::Mas => self.code_matrix.relay(k) * y,
                        Topology::Sas => {
                            let g = self.code_matrix.slot_gains(k);
                            CMat::from_fn(1, t_len, |_, t| y[(0, t)] * g[t])
                        }
                    }
                }
            };
            blocks.push(x);
        }
        let direct = self.cfg.direct_link.then_some(s_vec.as_slice());
        let mut r = noiseless_received(&self.channel, &blocks, &self.profile, direct)?;
        crate::channel::add_noise(&mut r, sigma_d2, rng);

        let owned;
        let model = match model {
            Some(m) => m,
            None => {
                owned = self.destination_model(sigma_d2)?;
                &owned
            }
        };
        let det = Detector::new(model, &self.candidates)?.detect(&r)?;
        let detected = self.candidates.indices(det.candidate_index);
        let errors: u32 = idx
            .iter()
            .zip(&detected)
            .map(|(&a, &b)| qpsk_bit_errors(a, b))
            .sum();

        if let Some(opt) = self.optimizer.as_mut() {
            let s_hat: Vec<C64> = det.s_hat.iter().copied().collect();
            self.code_matrix = opt.sweep(&r, &s_hat, &self.channel, &self.code_matrix)?;
        }
        Ok((errors as u64, 2 * n as u64))
    }

    fn is_adaptive(&self) -> bool {
        self.optimizer.is_some()
    }
}

/// One code block through the full chain with a caller-supplied block stream.
pub fn run_trial(rng: &mut ChaCha8Rng, state: &mut FrameState, snr_db: f64) -> Result<(u64, u64)> {
    let sigma_d2 = noise_variance_for_snr(&state.cfg, snr_db);
    state.run_block(rng, sigma_d2, None)
}

/// Simulates frame `frame` at one SNR; returns `(errors, bits)` over the
/// first `measured` blocks after warm-up.
pub fn run_frame(
    cfg: &SystemConfig,
    scheme: Scheme,
    stream_seed: u64,
    frame: u64,
    sigma_d2: f64,
    measured: usize,
) -> Result<(u64, u64)> {
    let mut ch_rng = stream(stream_seed, &[frame, TAG_CHANNEL]);
    let mut code_rng = stream(stream_seed, &[frame, TAG_CODE]);
    let mut state = FrameState::new(cfg, scheme, &mut ch_rng, &mut code_rng)?;
    if state.is_adaptive() {
        for w in 0..cfg.optimizer.warmup_blocks {
            let mut rng = stream(stream_seed, &[frame, w as u64, TAG_WARMUP]);
            state.run_block(&mut rng, sigma_d2, None)?;
        }
    }
    let fixed = if state.is_adaptive() {
        None
    } else {
        Some(state.destination_model(sigma_d2)?)
    };
    let (mut errors, mut bits) = (0, 0);
    for b in 0..measured {
        let mut rng = stream(stream_seed, &[frame, b as u64, TAG_BLOCK]);
        let (e, n) = state.run_block(&mut rng, sigma_d2, fixed.as_ref())?;
        errors += e;
        bits += n;
    }
    Ok((errors, bits))
}

/// BER of one (scheme, SNR) cell with early stopping between frame batches.
pub fn run_point(
    cfg: &SystemConfig,
    scheme: Scheme,
    stream_seed: u64,
    snr_db: f64,
) -> Result<BerPoint> {
    if cfg.trials_per_point == 0 {
        return Err(Error::EmptyMeasurement("trials_per_point is 0".into()));
    }
    let sigma_d2 = noise_variance_for_snr(cfg, snr_db);
    let per_frame = cfg.blocks_per_frame as u64;
    let frames = cfg.trials_per_point.div_ceil(per_frame);
    let (mut errors, mut bits) = (0u64, 0u64);
    let mut start = 0;
    while start < frames {
        let end = (start + FRAME_BATCH).min(frames);
        let results: Vec<Result<(u64, u64)>> = (start..end)
            .into_par_iter()
            .map(|f| {
                let measured = (cfg.trials_per_point - f * per_frame).min(per_frame) as usize;
                run_frame(cfg, scheme, stream_seed, f, sigma_d2, measured)
            })
            .collect();
        for r in results {
            let (e, n) = r?;
            errors += e;
            bits += n;
        }
        start = end;
        if cfg.min_errors > 0 && errors >= cfg.min_errors {
            break;
        }
    }
    Ok(BerPoint::new(
        scheme,
        cfg.delay_label(),
        snr_db,
        bits,
        errors,
    ))
}

fn run(cfg: &SystemConfig, shared_streams: bool) -> Result<RunResult> {
    let cfg = cfg.clone().validate()?;
    if cfg.trials_per_point == 0 {
        return Err(Error::EmptyMeasurement("trials_per_point is 0".into()));
    }
    let started = Instant::now();
    let mut points = Vec::new();
    for (i, &scheme) in cfg.schemes.iter().enumerate() {
        let stream_seed = if shared_streams {
            cfg.seed
        } else {
            mix(cfg.seed ^ mix(i as u64 + 1))
        };
        for &snr in &cfg.snr_grid_db {
            points.push(run_point(&cfg, scheme, stream_seed, snr)?);
        }
    }
    points.sort_by(|a, b| {
        a.scheme
            .label()
            .cmp(b.scheme.label())
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    Ok(RunResult {
        seed: cfg.seed,
        config: cfg,
        points,
        duration: started.elapsed(),
    })
}

/// Sweep with an independent random stream per scheme.
pub fn run_sweep(cfg: &SystemConfig) -> Result<RunResult> {
    run(cfg, false)
}

/// Sweep with common random numbers: every scheme sees the same channels,
/// symbols and noise at each (frame, block) position.
pub fn run_compare(cfg: &SystemConfig) -> Result<RunResult> {
    run(cfg, true)
}

/// Closed-form BER of Gray QPSK with 2-branch maximal-ratio diversity, where
/// each branch carries half the transmit power. `snr_db` is the received SNR;
/// the per-branch, per-bit SNR is a quarter of it.
pub fn theoretical_alamouti_ber(snr_db: f64) -> f64 {
    let gamma = 10f64.powf(snr_db / 10.0) / 4.0;
    let mu = (gamma / (1.0 + gamma)).sqrt();
    let p = 0.5 * (1.0 - mu);
    p * p * (1.0 + 2.0 * (1.0 - p))
}

/// SNR (dB) where a BER curve crosses `target`, interpolated linearly in
/// `log10(BER)`. `None` when the curve never crosses.
pub fn snr_at_ber(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    points.windows(2).find_map(|w| {
        let ((s0, b0), (s1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 <= target && b0 > 0.0 && b1 > 0.0 {
            let (l0, l1) = (b0.log10(), b1.log10());
            if l0 == l1 {
                Some(s0)
            } else {
                Some(s0 + (lt - l0) / (l1 - l0) * (s1 - s0))
            }
        } else {
            None
        }
    })
}

/// Least-squares slope of `log10(BER)` against `SNR/10` (a diversity-order estimate, negated).
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(s, b)| (s / 10.0, b.log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
