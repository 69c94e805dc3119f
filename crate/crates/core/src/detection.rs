//! Exhaustive ML detection over the QPSK candidate set.
//!
//! With relays at different delays the conjugated slots of one relay overlap
//! the plain slots of another, so the destination model is widely linear:
//! `r̂(s) = A s + B s*`.

use crate::coding::{masked_linear, CodeMatrix, EquivalentModel, SpaceTimeCode};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::system::{CandidateSet, DelayProfile, Topology};

/// Linear map from one relay's input to what it sends: the relay transmits
/// `pre · M(s) · diag(slot_gains)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayLink {
    pub channel: CMat,
    pub pre: CMat,
    pub slot_gains: Option<Vec<C64>>,
}

impl RelayLink {
    /// DF relay `k` under the given code matrix.
    pub fn decode_forward(channel: &CMat, code_matrix: &CodeMatrix, k: usize, n: usize) -> Self {
        match code_matrix.topology() {
            Topology::Mas => Self {
                channel: channel.clone(),
                pre: code_matrix.relay(k).clone(),
                slot_gains: None,
            },
            Topology::Sas => {
                let mut pre = CMat::zeros(1, n);
                pre[(0, k)] = C64::new(1.0, 0.0);
                Self {
                    channel: channel.clone(),
                    pre,
                    slot_gains: Some(code_matrix.slot_gains(k)),
                }
            }
        }
    }
}

/// Widely linear destination model with an optional noise whitener.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationModel {
    a: CMat,
    b: CMat,
    whitener: Option<CMat>,
}

impl DestinationModel {
    pub fn new(a: CMat, b: CMat) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!(
                "A {:?} vs B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            a,
            b,
            whitener: None,
        })
    }

    /// Sum of delayed relay links, followed by `direct` rows when given.
    pub fn from_links(
        links: &[RelayLink],
        profile: &DelayProfile,
        code: SpaceTimeCode,
        direct: Option<&CMat>,
    ) -> Result<Self> {
        if links.len() != profile.len() {
            return Err(Error::Dimension(format!(
                "{} links for {} delays",
                links.len(),
                profile.len()
            )));
        }
        let nd = links.first().map_or(0, |l| l.channel.nrows());
        let relay_len = nd * (profile.delta_max() + code.slots());
        let dl_len = direct.map_or(0, |g| g.nrows());
        let n = code.rows();
        let mut a = CMat::zeros(relay_len + dl_len, n);
        let mut b = CMat::zeros(relay_len + dl_len, n);
        for (k, link) in links.iter().enumerate() {
            if link.channel.nrows() != nd {
                return Err(Error::Dimension("destination antenna count differs".into()));
            }
            let l = masked_linear(&link.channel, &link.pre, code, link.slot_gains.as_deref())?;
            place(&mut a, &mut b, &l, profile.offset(k, nd), nd, code);
        }
        if let Some(g) = direct {
            if g.ncols() != n {
                return Err(Error::Dimension("direct-link channel width".into()));
            }
            a.view_mut((relay_len, 0), (dl_len, n)).copy_from(g);
        }
        Self::new(a, b)
    }

    /// Assembles the model from per-relay equivalent factorizations.
    pub fn from_equivalent(
        models: &[EquivalentModel],
        profile: &DelayProfile,
        code: SpaceTimeCode,
    ) -> Result<Self> {
        let nd = models
            .first()
            .map_or(0, |m| m.conj_mask.len() / code.slots().max(1));
        let relay_len = nd * (profile.delta_max() + code.slots());
        let n = code.rows();
        let mut a = CMat::zeros(relay_len, n);
        let mut b = CMat::zeros(relay_len, n);
        for (k, m) in models.iter().enumerate() {
            let l = m.effective();
            if l.nrows() != nd * code.slots() || l.ncols() != n {
                return Err(Error::Dimension(format!(
                    "equivalent model {:?}",
                    l.shape()
                )));
            }
            place(&mut a, &mut b, &l, profile.offset(k, nd), nd, code);
        }
        Self::new(a, b)
    }

    /// Switches the metric to `‖L⁻¹(r − r̂)‖²` for noise covariance `L Lᴴ`.
    pub fn with_noise_covariance(mut self, cov: &CMat) -> Result<Self> {
        if cov.nrows() != self.a.nrows() || cov.ncols() != self.a.nrows() {
            return Err(Error::Dimension("noise covariance size".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(0))?;
        let linv = chol
            .l()
            .try_inverse()
            .ok_or(Error::Singular("noise covariance factor"))?;
        self.whitener = Some(linv);
        Ok(self)
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn b(&self) -> &CMat {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// `A s + B s*`.
    pub fn predict(&self, s: &CVec) -> CVec {
        &self.a * s + &self.b * s.map(|z| z.conj())
    }

    /// `‖A‖² + ‖B‖²`, the signal gain energy of this realization.
    pub fn gain_energy(&self) -> f64 {
        self.a.norm_squared() + self.b.norm_squared()
    }
}

fn place(a: &mut CMat, b: &mut CMat, l: &CMat, off: usize, nd: usize, code: SpaceTimeCode) {
    for t in 0..code.slots() {
        for i in 0..nd {
            let src = t * nd + i;
            let dst = off + src;
            for j in 0..l.ncols() {
                if code.slot_conjugated(t) {
                    b[(dst, j)] += l[(src, j)].conj();
                } else {
                    a[(dst, j)] += l[(src, j)];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub s_hat: CVec,
    pub candidate_index: usize,
    pub metric: f64,
}

/// Detector with all candidate responses precomputed for one realization.
#[derive(Debug, Clone)]
pub struct Detector<'a> {
    model: &'a DestinationModel,
    candidates: &'a CandidateSet,
    responses: CMat,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a DestinationModel, candidates: &'a CandidateSet) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Dimension("empty candidate set".into()));
        }
        if candidates.n() != model.a.ncols() {
            return Err(Error::Dimension(format!(
                "candidates of length {} vs model width {}",
                candidates.n(),
                model.a.ncols()
            )));
        }
        let s = candidates.matrix();
        let mut responses = &model.a * s + &model.b * s.map(|z| z.conj());
        if let Some(w) = &model.whitener {
            responses = w * responses;
        }
        Ok(Self {
            model,
            candidates,
            responses,
        })
    }

    /// Squared distance from `r` to every candidate's response.
    pub fn metrics(&self, r: &CVec) -> Result<Vec<f64>> {
        if r.len() != self.responses.nrows() {
            return Err(Error::Dimension(format!(
                "received length {} vs model {}",
                r.len(),
                self.responses.nrows()
            )));
        }
        let rw = match &self.model.whitener {
            Some(w) => w * r,
            None => r.clone(),
        };
        Ok((0..self.responses.ncols())
            .map(|c| {
                self.responses
                    .column(c)
                    .iter()
                    .zip(rw.iter())
                    .map(|(p, q)| (q - p).norm_sqr())
                    .sum()
            })
            .collect())
    }

    /// Minimum-metric candidate; ties go to the lowest index.
    pub fn detect(&self, r: &CVec) -> Result<DetectionResult> {
        let metrics = self.metrics(r)?;
        let mut best = 0;
        for (c, &m) in metrics.iter().enumerate() {
            if m < metrics[best] {
                best = c;
            }
        }
        Ok(DetectionResult {
            s_hat: self.candidates.column(best),
            candidate_index: best,
            metric: metrics[best],
        })
    }
}

/// One-shot ML detection.
pub fn ml_detect(
    r: &CVec,
    model: &DestinationModel,
    candidates: &CandidateSet,
) -> Result<DetectionResult> {
    Detector::new(model, candidates)?.detect(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, noiseless_received, relay_process};
    use crate::linalg::complex_gaussian;
    use crate::system::{build_candidate_set, SystemConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn df_model(
        cfg: &SystemConfig,
        seed: u64,
    ) -> (
        DestinationModel,
        crate::channel::ChannelRealization,
        CodeMatrix,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = draw_channel(&mut rng, cfg);
        let cm =
            crate::coding::random_code_matrix(&mut rng, cfg.topology, 2, 2, 4.0, cfg.n_r).unwrap();
        let links: Vec<RelayLink> = (0..cfg.n_r)
            .map(|k| RelayLink::decode_forward(&ch.relay_dest[k], &cm, k, 2))
            .collect();
        let m = DestinationModel::from_links(
            &links,
            &cfg.delay_profile(),
            SpaceTimeCode::Alamouti,
            None,
        )
        .unwrap();
        (m, ch, cm)
    }

    #[test]
    fn prediction_matches_direct_assembly() {
        for topology in [Topology::Mas, Topology::Sas] {
            let cfg = SystemConfig {
                topology,
                delays: vec![0, 1],
                ..SystemConfig::default()
            };
            let (m, ch, cm) = df_model(&cfg, 31);
            let cands = build_candidate_set(2);
            for c in 0..cands.len() {
                let s: Vec<C64> = cands.column(c).iter().copied().collect();
                let blocks: Vec<CMat> = (0..2)
                    .map(|k| relay_process(&s, &cm, SpaceTimeCode::Alamouti, k).unwrap())
                    .collect();
                let direct = noiseless_received(&ch, &blocks, &cfg.delay_profile(), None).unwrap();
                assert!((m.predict(&cands.column(c)) - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let cfg = SystemConfig {
            delays: vec![0, 1],
            ..SystemConfig::default()
        };
        let (m, _, _) = df_model(&cfg, 4);
        let cands = build_candidate_set(2);
        let r = m.predict(&cands.column(7));
        let res = ml_detect(&r, &m, &cands).unwrap();
        assert_eq!(res.candidate_index, 7);
        assert!(res.metric < 1e-24);
    }

    #[test]
    fn single_candidate_always_returned() {
        let a = CMat::from_element(2, 1, C64::new(1.0, 0.0));
        let m = DestinationModel::new(a, CMat::zeros(2, 1)).unwrap();
        let one = CandidateSet::from_columns(CMat::from_element(1, 1, C64::new(0.0, 1.0)));
        let r = CVec::from_element(2, C64::new(-5.0, 3.0));
        assert_eq!(ml_detect(&r, &m, &one).unwrap().candidate_index, 0);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let m = DestinationModel::new(CMat::zeros(2, 2), CMat::zeros(2, 2)).unwrap();
        let cands = build_candidate_set(2);
        let r = CVec::from_element(2, C64::new(1.0, 1.0));
        assert_eq!(ml_detect(&r, &m, &cands).unwrap().candidate_index, 0);
    }

    #[test]
    fn returned_metric_is_minimal() {
        let cfg = SystemConfig {
            delays: vec![0, 1],
            ..SystemConfig::default()
        };
        let cands = build_candidate_set(2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50 {
            let (m, _, _) = df_model(&cfg, seed);
            let truth = cands.column(seed as usize % 16);
            let r =
                m.predict(&truth) + CVec::from_fn(m.len(), |_, _| complex_gaussian(&mut rng, 0.5));
            let res = ml_detect(&r, &m, &cands).unwrap();
            for c in 0..cands.len() {
                let other = (&r - m.predict(&cands.column(c))).norm_squared();
                assert!(res.metric <= other + 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = DestinationModel::new(CMat::zeros(4, 2), CMat::zeros(4, 2)).unwrap();
        let cands = build_candidate_set(2);
        assert!(ml_detect(&CVec::zeros(3), &m, &cands).is_err());
        assert!(ml_detect(&CVec::zeros(4), &m, &build_candidate_set(1)).is_err());
    }

    #[test]
    fn whitening_with_scaled_identity_keeps_decision() {
        let cfg = SystemConfig {
            delays: vec![0, 1],
            ..SystemConfig::default()
        };
        let (m, _, _) = df_model(&cfg, 12);
        let cands = build_candidate_set(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = m.predict(&cands.column(5))
            + CVec::from_fn(m.len(), |_, _| complex_gaussian(&mut rng, 1.0));
        let plain = ml_detect(&r, &m, &cands).unwrap();
        let cov = CMat::identity(m.len(), m.len()) * C64::new(2.5, 0.0);
        let w = m.clone().with_noise_covariance(&cov).unwrap();
        let white = ml_detect(&r, &w, &cands).unwrap();
        assert_eq!(plain.candidate_index, white.candidate_index);
        assert!((white.metric * 2.5 - plain.metric).abs() < 1e-9);
    }
}
