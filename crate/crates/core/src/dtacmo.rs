//! Adaptive code-matrix optimization: exponentially weighted RLS fits of the
//! relay code matrices from decision-directed destination observations,
//! followed by joint power normalization.

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::coding::{build_equivalent_model, random_code_matrix, CodeMatrix, SpaceTimeCode};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64, ZERO};
use crate::system::{DelayProfile, SystemConfig, Topology};

/// State of one exponentially weighted RLS fit of `d ≈ Φ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    lambda: f64,
    delta: f64,
    p: CMat,
    z: CMat,
    phi: CMat,
    iteration: u64,
    p_perturbation: f64,
}

impl RlsState {
    /// `P[0] = δ⁻¹ I` (`dim × dim`), `Z[0] = 0` and `Φ[0] = 0` (`rows × dim`).
    pub fn new(rows: usize, dim: usize, lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "forgetting factor {lambda} outside (0, 1]"
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularizer {delta} must be positive"
            )));
        }
        Ok(Self {
            lambda,
            delta,
            p: CMat::identity(dim, dim) * C64::new(1.0 / delta, 0.0),
            z: CMat::zeros(rows, dim),
            phi: CMat::zeros(rows, dim),
            iteration: 0,
            p_perturbation: 0.0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p(&self) -> &CMat {
        &self.p
    }

    pub fn z(&self) -> &CMat {
        &self.z
    }

    pub fn phi(&self) -> &CMat {
        &self.phi
    }

    /// Number of completed updates (blocks).
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Test hook: adds `eps` to `P[0, 0]` after every update. Only used as a
    /// negative control for the verification suites.
    #[doc(hidden)]
    pub fn set_p_perturbation(&mut self, eps: f64) {
        self.p_perturbation = eps;
    }

    /// `k = λ⁻¹ P x / (1 + λ⁻¹ xᴴ P x)`.
    pub fn gain(&self, x: &CVec) -> Result<CVec> {
        self.gain_with(x, self.lambda)
    }

    fn gain_with(&self, x: &CVec, lambda: f64) -> Result<CVec> {
        if x.len() != self.p.nrows() {
            return Err(Error::Dimension(format!(
                "regressor length {} vs P {}",
                x.len(),
                self.p.nrows()
            )));
        }
        if x.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("regressor"));
        }
        let px = &self.p * x;
        let denom = lambda + x.dotc(&px).re;
        Ok(px / C64::new(denom, 0.0))
    }

    fn step(&mut self, d: &CVec, x: &CVec, lambda: f64) -> Result<()> {
        if d.len() != self.phi.nrows() {
            return Err(Error::Dimension(format!(
                "desired length {} vs Φ rows {}",
                d.len(),
                self.phi.nrows()
            )));
        }
        if d.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("desired response"));
        }
        let k = self.gain_with(x, lambda)?;
        let err = d - &self.phi * x;
        self.phi += &err * k.adjoint();
        let xp = x.adjoint() * &self.p;
        self.p = (&self.p - &k * xp) / C64::new(lambda, 0.0);
        self.p = (&self.p + self.p.adjoint()) * C64::new(0.5, 0.0);
        self.z = &self.z * C64::new(lambda, 0.0) + d * x.adjoint();
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if self.p_perturbation != 0.0 {
            self.p[(0, 0)] += self.p_perturbation;
        }
        self.iteration += 1;
        let pd = (0..self.p.nrows()).all(|i| {
            let v = self.p[(i, i)];
            v.re > 0.0 && v.re.is_finite() && v.im.is_finite()
        });
        if !pd {
            return Err(Error::NotPositiveDefinite(self.iteration));
        }
        Ok(())
    }

    /// One block with a single regressor (MAS).
    pub fn update(&mut self, d: &CVec, x: &CVec) -> Result<()> {
        self.step(d, x, self.lambda)?;
        self.finish()
    }

    /// One block carrying several `(d, x)` observations (SAS: one per received
    /// sample). The past is discounted once per block.
    pub fn update_block(&mut self, rows: &[(CVec, CVec)]) -> Result<()> {
        for (i, (d, x)) in rows.iter().enumerate() {
            let lambda = if i == 0 { self.lambda } else { 1.0 };
            self.step(d, x, lambda)?;
        }
        self.finish()
    }
}

/// Free-function form of [`RlsState::gain`].
pub fn rls_gain(state: &RlsState, x: &CVec) -> Result<CVec> {
    state.gain(x)
}

/// MAS update: one `(d, x)` pair per block.
pub fn rls_update_mas(state: &mut RlsState, d: &CVec, x: &CVec) -> Result<()> {
    state.update(d, x)
}

/// SAS update: the block regressor `B` (one row per received sample) and the
/// matching desired samples; the parameter is the row vector of gains.
pub fn rls_update_sas(state: &mut RlsState, d: &CVec, regressor: &CMat) -> Result<()> {
    if state.phi.nrows() != 1
        || regressor.ncols() != state.p.nrows()
        || regressor.nrows() != d.len()
    {
        return Err(Error::Dimension(format!(
            "SAS regressor {:?} with {} desired samples",
            regressor.shape(),
            d.len()
        )));
    }
    let rows: Vec<(CVec, CVec)> = (0..d.len())
        .map(|m| (CVec::from_element(1, d[m]), regressor.row(m).transpose()))
        .collect();
    state.update_block(&rows)
}

/// `Ψ = λ^i δ I + Σ_b λ^{i−1−b} Σ x xᴴ` over `i` blocks.
pub fn psi_direct(history: &[Vec<(CVec, CVec)>], lambda: f64, delta: f64, dim: usize) -> CMat {
    let i = history.len() as i32;
    let mut psi = CMat::identity(dim, dim) * C64::new(lambda.powi(i) * delta, 0.0);
    for (b, block) in history.iter().enumerate() {
        let w = C64::new(lambda.powi(i - 1 - b as i32), 0.0);
        for (_, x) in block {
            psi += x * x.adjoint() * w;
        }
    }
    psi
}

/// Direct regularized weighted least squares over a block history:
/// `Φ = (Σ λ^{i−1−b} d xᴴ)(λ^i δ I + Σ λ^{i−1−b} x xᴴ)⁻¹`.
pub fn batch_ls_oracle(history: &[Vec<(CVec, CVec)>], lambda: f64, delta: f64) -> Result<CMat> {
    let (d0, x0) = history
        .iter()
        .flat_map(|b| b.first())
        .next()
        .ok_or_else(|| Error::EmptyMeasurement("batch oracle needs at least one pair".into()))?;
    let (rows, dim) = (d0.len(), x0.len());
    let i = history.len() as i32;
    let mut z = CMat::zeros(rows, dim);
    for (b, block) in history.iter().enumerate() {
        let w = C64::new(lambda.powi(i - 1 - b as i32), 0.0);
        for (d, x) in block {
            z += d * x.adjoint() * w;
        }
    }
    let psi = psi_direct(history, lambda, delta, dim);
    let inv = psi.try_inverse().ok_or(Error::Singular("Ψ"))?;
    Ok(z * inv)
}

/// Scales `Φ` so that `Σ_k Tr(Φ_eq,k Φ_eq,kᴴ) = P_R`.
pub fn normalize_power(phi: &CodeMatrix, p_r: f64) -> Result<CodeMatrix> {
    let power = phi.power();
    if power <= 0.0 || !power.is_finite() {
        return Err(Error::ZeroPower);
    }
    Ok(phi.scaled((p_r / power).sqrt()))
}

/// Decision-directed optimizer: one RLS state per relay.
#[derive(Debug, Clone)]
pub struct DtAcmo {
    topology: Topology,
    code: SpaceTimeCode,
    profile: DelayProfile,
    dest_antennas: usize,
    p_r: f64,
    states: Vec<RlsState>,
}

/// Fresh optimizer plus a random, power-normalized initial code matrix.
pub fn rls_init<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> Result<(DtAcmo, CodeMatrix)> {
    let opt = DtAcmo::new(cfg)?;
    let phi0 = random_code_matrix(rng, cfg.topology, cfg.n_ant, cfg.t_len, cfg.p_r, cfg.n_r)?;
    Ok((opt, phi0))
}

impl DtAcmo {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        let code = SpaceTimeCode::for_antennas(cfg.n_ant)?;
        let nd = cfg.dest_antennas();
        let relay_len = nd * (cfg.delta_max() + cfg.t_len);
        let (rows, dim) = match cfg.topology {
            Topology::Mas => (relay_len, nd * cfg.t_len),
            Topology::Sas => (1, cfg.n_ant),
        };
        let states = (0..cfg.n_r)
            .map(|_| RlsState::new(rows, dim, cfg.optimizer.lambda, cfg.optimizer.delta))
            .collect::<Result<_>>()?;
        Ok(Self {
            topology: cfg.topology,
            code,
            profile: cfg.delay_profile(),
            dest_antennas: nd,
            p_r: cfg.p_r,
            states,
        })
    }

    pub fn states(&self) -> &[RlsState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [RlsState] {
        &mut self.states
    }

    fn relay_len(&self) -> usize {
        self.dest_antennas * (self.profile.delta_max() + self.code.slots())
    }

    /// Noiseless unmasked contribution of relay `k` at its delay offset.
    fn contribution(&self, g: &CMat, x: &CMat, k: usize) -> CVec {
        let nd = self.dest_antennas;
        let mut out = CVec::zeros(self.relay_len());
        let y = g * x;
        let off = self.profile.offset(k, nd);
        for t in 0..y.ncols() {
            for a in 0..nd {
                out[off + t * nd + a] = y[(a, t)];
            }
        }
        out
    }

    /// Conjugates relay `k`'s conjugated-slot samples in place.
    fn mask_for(&self, k: usize, v: &mut CVec) {
        let nd = self.dest_antennas;
        let off = self.profile.offset(k, nd);
        for t in 0..self.code.slots() {
            if self.code.slot_conjugated(t) {
                for a in 0..nd {
                    let i = off + t * nd + a;
                    v[i] = v[i].conj();
                }
            }
        }
    }

    /// One sweep over all relays. `r` is the received vector (direct-link
    /// samples, if any, are ignored), `s_hat` the detected symbols and
    /// `current` the code matrix that produced `r`. Each relay fits against
    /// the residual left after removing the other relays' predicted
    /// contributions. Returns the power-normalized code matrix to feed back;
    /// if every estimate is still zero the current matrix is kept.
    pub fn sweep(
        &mut self,
        r: &CVec,
        s_hat: &[C64],
        channel: &ChannelRealization,
        current: &CodeMatrix,
    ) -> Result<CodeMatrix> {
        let relay_len = self.relay_len();
        if r.len() < relay_len || s_hat.len() != self.code.rows() {
            return Err(Error::Dimension(format!(
                "received length {} (need {relay_len}), {} symbols",
                r.len(),
                s_hat.len()
            )));
        }
        let n_r = self.states.len();
        if current.n_relays() != n_r || channel.relay_dest.len() != n_r {
            return Err(Error::Dimension("relay count mismatch".into()));
        }
        let r_relay = r.rows(0, relay_len).into_owned();
        let contributions: Vec<CVec> = (0..n_r)
            .map(|k| {
                let x = crate::channel::relay_process(s_hat, current, self.code, k)?;
                Ok(self.contribution(&channel.relay_dest[k], &x, k))
            })
            .collect::<Result<_>>()?;
        let total: CVec = contributions
            .iter()
            .fold(CVec::zeros(relay_len), |acc, c| acc + c);
        let s = CVec::from_column_slice(s_hat);
        let mut next = current.clone();
        for k in 0..n_r {
            let mut d = &r_relay - (&total - &contributions[k]);
            self.mask_for(k, &mut d);
            let model = build_equivalent_model(
                self.topology,
                self.code,
                k,
                &channel.relay_dest[k],
                current,
            )?;
            match self.topology {
                Topology::Mas => {
                    let x = &model.g_eq * &s;
                    self.states[k].update(&d, &x)?;
                    next.set_relay(k, self.mas_code_estimate(k));
                }
                Topology::Sas => {
                    let b = self.sas_regressor(k, &model.g_eq, s_hat);
                    rls_update_sas(&mut self.states[k], &d, &b)?;
                    next.set_relay(k, self.sas_gain_estimate(k));
                }
            }
        }
        match normalize_power(&next, self.p_r) {
            Ok(c) => Ok(c),
            Err(Error::ZeroPower) => Ok(current.clone()),
            Err(e) => Err(e),
        }
    }

    /// Averages the diagonal slot blocks of relay `k`'s delayed estimate,
    /// undoing the conjugation of conjugated slots.
    fn mas_code_estimate(&self, k: usize) -> CMat {
        let nd = self.dest_antennas;
        let off = self.profile.offset(k, nd);
        let phi = self.states[k].phi();
        let t_len = self.code.slots();
        let mut acc = CMat::zeros(nd, nd);
        for t in 0..t_len {
            let block = phi.view((off + t * nd, t * nd), (nd, nd)).into_owned();
            acc += if self.code.slot_conjugated(t) {
                block.map(|z| z.conj())
            } else {
                block
            };
        }
        acc / C64::new(t_len as f64, 0.0)
    }

    /// `Δ_k G_eq,k diag(ŝ)`.
    fn sas_regressor(&self, k: usize, g_eq: &CMat, s_hat: &[C64]) -> CMat {
        let nd = self.dest_antennas;
        let off = self.profile.offset(k, nd);
        let mut b = CMat::zeros(self.relay_len(), s_hat.len());
        for i in 0..g_eq.nrows() {
            for j in 0..s_hat.len() {
                b[(off + i, j)] = g_eq[(i, j)] * s_hat[j];
            }
        }
        b
    }

    /// Per-slot gains recovered from the per-symbol estimate.
    fn sas_gain_estimate(&self, k: usize) -> CMat {
        let est = self.states[k].phi();
        let mut gains = CMat::from_element(1, self.code.slots(), ZERO);
        for t in 0..self.code.slots() {
            let v = est[(0, self.code.entry(k, t).symbol)];
            gains[(0, t)] = if self.code.slot_conjugated(t) {
                v.conj()
            } else {
                v
            };
        }
        gains
    }
}
