//! Space-time encoders, relay code matrices and the linearized
//! (conjugation-masked) destination model.
//!
//! Received blocks are stacked time-slot-major: all destination antennas of
//! slot 0, then slot 1, and so on. For Alamouti the second slot carries
//! conjugated symbols, so conjugating those samples turns the received
//! vector into a linear function of the symbol vector.

use rand::Rng;

use crate::dtacmo::normalize_power;
use crate::error::{Error, Result};
use crate::linalg::{block_diag, energy, gaussian_matrix, CMat, CVec, C64, ONE};
use crate::system::Topology;

/// One codeword entry: `sign · s_symbol`, conjugated when the slot is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeEntry {
    pub symbol: usize,
    pub sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTimeCode {
    /// 2×2 Alamouti: `[[s1, −s2*], [s2, s1*]]`.
    Alamouti,
    /// 1×1 pass-through used by the single-antenna baseline.
    Uncoded,
}

impl SpaceTimeCode {
    pub fn for_antennas(n: usize) -> Result<Self> {
        match n {
            2 => Ok(SpaceTimeCode::Alamouti),
            1 => Ok(SpaceTimeCode::Uncoded),
            _ => Err(Error::Unsupported(format!(
                "no space-time code for N = {n}"
            ))),
        }
    }

    /// Codeword rows; equals the number of symbols per block.
    pub fn rows(self) -> usize {
        match self {
            SpaceTimeCode::Alamouti => 2,
            SpaceTimeCode::Uncoded => 1,
        }
    }

    pub fn slots(self) -> usize {
        self.rows()
    }

    pub fn slot_conjugated(self, t: usize) -> bool {
        matches!(self, SpaceTimeCode::Alamouti) && t == 1
    }

    pub fn entry(self, row: usize, t: usize) -> CodeEntry {
        match (self, row, t) {
            (SpaceTimeCode::Uncoded, _, _) => CodeEntry {
                symbol: 0,
                sign: 1.0,
            },
            (SpaceTimeCode::Alamouti, 0, 0) => CodeEntry {
                symbol: 0,
                sign: 1.0,
            },
            (SpaceTimeCode::Alamouti, 1, 0) => CodeEntry {
                symbol: 1,
                sign: 1.0,
            },
            (SpaceTimeCode::Alamouti, 0, 1) => CodeEntry {
                symbol: 1,
                sign: -1.0,
            },
            (SpaceTimeCode::Alamouti, _, _) => CodeEntry {
                symbol: 0,
                sign: 1.0,
            },
        }
    }

    /// Signed permutation `E_t` with `M[:, t] = E_t s` (or `E_t s*` in a
    /// conjugated slot).
    pub fn slot_map(self, t: usize) -> CMat {
        let n = self.rows();
        let mut e = CMat::zeros(n, n);
        for r in 0..n {
            let entry = self.entry(r, t);
            e[(r, entry.symbol)] = C64::new(entry.sign, 0.0);
        }
        e
    }

    pub fn encode(self, s: &[C64]) -> Result<CMat> {
        let n = self.rows();
        if s.len() != n {
            return Err(Error::Dimension(format!(
                "code expects {n} symbols, got {}",
                s.len()
            )));
        }
        let mut m = CMat::zeros(n, self.slots());
        for t in 0..self.slots() {
            for r in 0..n {
                let e = self.entry(r, t);
                let v = s[e.symbol] * e.sign;
                m[(r, t)] = if self.slot_conjugated(t) { v.conj() } else { v };
            }
        }
        Ok(m)
    }

    /// Conjugation mask for a `T`-slot block with `per_slot` samples per slot.
    pub fn conj_mask(self, per_slot: usize) -> Vec<bool> {
        (0..self.slots())
            .flat_map(|t| std::iter::repeat_n(self.slot_conjugated(t), per_slot))
            .collect()
    }
}

/// `[[s1, −s2*], [s2, s1*]]`.
pub fn alamouti_encode(s: &[C64]) -> Result<CMat> {
    if s.len() != 2 {
        return Err(Error::Dimension(format!(
            "Alamouti needs N = 2 symbols, got {}",
            s.len()
        )));
    }
    SpaceTimeCode::Alamouti.encode(s)
}

/// Row `k` (zero-based) of a codeword, the share transmitted by SAS relay `k`.
pub fn sas_allocate_row(codeword: &CMat, k: usize) -> Result<Vec<C64>> {
    if k >= codeword.nrows() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: codeword.nrows(),
        });
    }
    Ok(codeword.row(k).iter().copied().collect())
}

/// Adjustable relay code matrices: `N×N` per MAS relay, a `1×T` vector of
/// per-slot gains per SAS relay.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    topology: Topology,
    blocks: Vec<CMat>,
}

impl CodeMatrix {
    pub fn new(topology: Topology, blocks: Vec<CMat>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Dimension(
                "code matrix needs at least one relay".into(),
            ));
        };
        let shape = first.shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(Error::Dimension(
                "relay code matrices differ in shape".into(),
            ));
        }
        match topology {
            Topology::Mas if shape.0 != shape.1 => {
                return Err(Error::Dimension("MAS code matrices must be square".into()))
            }
            Topology::Sas if shape.0 != 1 => {
                return Err(Error::Dimension("SAS code vectors must be 1×T".into()))
            }
            _ => {}
        }
        Ok(Self { topology, blocks })
    }

    /// Identity matrices (MAS) or all-ones gains (SAS).
    pub fn identity(topology: Topology, n_r: usize, n: usize, t: usize) -> Self {
        let block = match topology {
            Topology::Mas => CMat::identity(n, n),
            Topology::Sas => CMat::from_element(1, t, ONE),
        };
        Self {
            topology,
            blocks: vec![block; n_r],
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn n_relays(&self) -> usize {
        self.blocks.len()
    }

    pub fn relay(&self, k: usize) -> &CMat {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    /// Per-slot gains of a SAS relay.
    pub fn slot_gains(&self, k: usize) -> Vec<C64> {
        self.blocks[k].iter().copied().collect()
    }

    /// Relay-side equivalent code matrix `Φ_eq,k`: block diagonal
    /// `diag(Φ_k, Φ_k*, …)` over the slots for MAS, the diagonal of symbol
    /// gains for SAS.
    pub fn equivalent(&self, k: usize, code: SpaceTimeCode) -> CMat {
        let b = &self.blocks[k];
        match self.topology {
            Topology::Mas => {
                let blocks: Vec<CMat> = (0..code.slots())
                    .map(|t| {
                        if code.slot_conjugated(t) {
                            b.map(|z| z.conj())
                        } else {
                            b.clone()
                        }
                    })
                    .collect();
                block_diag(&blocks)
            }
            Topology::Sas => {
                let mut d = CMat::zeros(code.rows(), code.rows());
                for t in 0..code.slots() {
                    let e = code.entry(k, t);
                    let g = b[(0, t)];
                    d[(e.symbol, e.symbol)] = if code.slot_conjugated(t) { g.conj() } else { g };
                }
                d
            }
        }
    }

    /// `Σ_k Tr(Φ_eq,k Φ_eq,k^H)`.
    pub fn power(&self) -> f64 {
        let per_block: f64 = self.blocks.iter().map(energy).sum();
        match self.topology {
            Topology::Mas => per_block * self.blocks[0].nrows() as f64,
            Topology::Sas => per_block,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            topology: self.topology,
            blocks: self.blocks.iter().map(|b| b * C64::new(c, 0.0)).collect(),
        }
    }

    pub(crate) fn set_relay(&mut self, k: usize, block: CMat) {
        self.blocks[k] = block;
    }
}

/// Random complex Gaussian code matrices scaled to total power `p_r`.
pub fn random_code_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    topology: Topology,
    n: usize,
    t: usize,
    p_r: f64,
    n_r: usize,
) -> Result<CodeMatrix> {
    let blocks = (0..n_r)
        .map(|_| match topology {
            Topology::Mas => gaussian_matrix(rng, n, n),
            Topology::Sas => gaussian_matrix(rng, 1, t),
        })
        .collect();
    normalize_power(&CodeMatrix::new(topology, blocks)?, p_r)
}

/// Masked equivalent matrix of one relay transmitting `W · M(s) · diag(gains)`
/// over `channel`: row block `t` equals `G W E_t g_t`, conjugated for
/// conjugated slots. The result maps `s` to the masked received samples.
pub fn masked_linear(
    channel: &CMat,
    pre: &CMat,
    code: SpaceTimeCode,
    slot_gains: Option<&[C64]>,
) -> Result<CMat> {
    if channel.ncols() != pre.nrows() || pre.ncols() != code.rows() {
        return Err(Error::Dimension(format!(
            "channel {:?} · precoder {:?} incompatible with {} code rows",
            channel.shape(),
            pre.shape(),
            code.rows()
        )));
    }
    if let Some(g) = slot_gains {
        if g.len() != code.slots() {
            return Err(Error::Dimension("one gain per slot required".into()));
        }
    }
    let nd = channel.nrows();
    let gw = channel * pre;
    let mut out = CMat::zeros(nd * code.slots(), code.rows());
    for t in 0..code.slots() {
        let gain = slot_gains.map_or(ONE, |g| g[t]);
        let mut block = &gw * code.slot_map(t) * gain;
        if code.slot_conjugated(t) {
            block = block.map(|z| z.conj());
        }
        out.view_mut((t * nd, 0), (nd, code.rows()))
            .copy_from(&block);
    }
    Ok(out)
}

/// Order in which the equivalent factors multiply the symbol vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factorization {
    /// `Φ_eq · G_eq · s` (MAS).
    CodeThenChannel,
    /// `G_eq · Φ_eq · s` (SAS).
    ChannelThenCode,
}

/// Linearized destination-side view of one relay.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentModel {
    pub g_eq: CMat,
    pub phi_eq: CMat,
    pub order: Factorization,
    /// True for samples that must be conjugated to make the model linear.
    pub conj_mask: Vec<bool>,
}

impl EquivalentModel {
    /// The `N_d T × N` matrix mapping `s` to the masked samples.
    pub fn effective(&self) -> CMat {
        match self.order {
            Factorization::CodeThenChannel => &self.phi_eq * &self.g_eq,
            Factorization::ChannelThenCode => &self.g_eq * &self.phi_eq,
        }
    }

    /// Conjugates the masked entries; the operation is its own inverse.
    pub fn apply_mask(&self, v: &[C64]) -> CVec {
        apply_mask(&self.conj_mask, v)
    }
}

pub fn apply_mask(mask: &[bool], v: &[C64]) -> CVec {
    CVec::from_iterator(
        v.len(),
        v.iter()
            .zip(mask.iter().chain(std::iter::repeat(&false)))
            .map(|(z, &m)| if m { z.conj() } else { *z }),
    )
}

/// Builds `(G_eq,k, Φ_eq,k, mask)` for relay `k`.
///
/// SAS: `G_eq` places `±g_k` (or `±g_k*`) in the column of the symbol relay
/// `k` sends in each slot and `Φ_eq` is the diagonal of per-symbol gains, so
/// `G_eq Φ_eq s` reproduces the masked samples exactly.
///
/// MAS: `G_eq` is the Alamouti equivalent channel of `G_k` and `Φ_eq` the
/// destination-side code matrix `diag(A, A*)` with `A = G_k Φ_k G_k⁻¹`, the
/// matrix that acts on the channel output (`G_k Φ_k = A G_k`). For a singular
/// channel `A` falls back to `Φ_k`, which is exact only when `G_k = 0`.
pub fn build_equivalent_model(
    topology: Topology,
    code: SpaceTimeCode,
    k: usize,
    channel: &CMat,
    code_matrix: &CodeMatrix,
) -> Result<EquivalentModel> {
    if code_matrix.topology() != topology {
        return Err(Error::Unsupported("code matrix topology mismatch".into()));
    }
    if k >= code_matrix.n_relays() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: code_matrix.n_relays(),
        });
    }
    let nd = channel.nrows();
    let mask = code.conj_mask(nd);
    match topology {
        Topology::Mas => {
            if channel.ncols() != code.rows() || nd != code.rows() {
                return Err(Error::Unsupported(
                    "MAS equivalent model needs a square N×N relay channel".into(),
                ));
            }
            let g_eq = masked_linear(channel, &CMat::identity(nd, nd), code, None)?;
            let phi = code_matrix.relay(k);
            let a = match channel.clone().try_inverse() {
                Some(inv) => channel * phi * inv,
                None => phi.clone(),
            };
            let blocks: Vec<CMat> = (0..code.slots())
                .map(|t| {
                    if code.slot_conjugated(t) {
                        a.map(|z| z.conj())
                    } else {
                        a.clone()
                    }
                })
                .collect();
            Ok(EquivalentModel {
                g_eq,
                phi_eq: block_diag(&blocks),
                order: Factorization::CodeThenChannel,
                conj_mask: mask,
            })
        }
        Topology::Sas => {
            if channel.ncols() != 1 {
                return Err(Error::Dimension("SAS relay channel must be N_d×1".into()));
            }
            if k >= code.rows() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: code.rows(),
                });
            }
            let mut g_eq = CMat::zeros(nd * code.slots(), code.rows());
            for t in 0..code.slots() {
                let e = code.entry(k, t);
                for a in 0..nd {
                    let g = channel[(a, 0)] * e.sign;
                    g_eq[(t * nd + a, e.symbol)] =
                        if code.slot_conjugated(t) { g.conj() } else { g };
                }
            }
            Ok(EquivalentModel {
                g_eq,
                phi_eq: code_matrix.equivalent(k, code),
                order: Factorization::ChannelThenCode,
                conj_mask: mask,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rel_err, ZERO};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn alamouti_examples() {
        let id = alamouti_encode(&[ONE, ZERO]).unwrap();
        assert_eq!(id, CMat::identity(2, 2));
        assert_eq!(alamouti_encode(&[ZERO, ZERO]).unwrap(), CMat::zeros(2, 2));
        let a = C64::new(H, H);
        let b = C64::new(H, -H);
        let m = alamouti_encode(&[a, b]).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[a, -a, b, b]);
        assert!(rel_err(&m, &expected) < 1e-15);
        assert!(alamouti_encode(&[a]).is_err());
    }

    #[test]
    fn alamouti_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = gaussian_matrix(&mut rng, 2, 1);
            let m = alamouti_encode(s.as_slice()).unwrap();
            let gram = &m * m.adjoint();
            let e = s.norm_squared();
            assert!(rel_err(&gram, &(CMat::identity(2, 2) * C64::new(e, 0.0))) < 1e-14);
        }
    }

    #[test]
    fn sas_rows_partition_the_codeword() {
        let s = [C64::new(0.3, -1.0), C64::new(2.0, 0.5)];
        let m = alamouti_encode(&s).unwrap();
        assert_eq!(sas_allocate_row(&m, 0).unwrap(), vec![s[0], -s[1].conj()]);
        let rows: Vec<C64> = (0..2)
            .flat_map(|k| sas_allocate_row(&m, k).unwrap())
            .collect();
        assert_eq!(CMat::from_row_slice(2, 2, &rows), m);
        assert!(matches!(
            sas_allocate_row(&m, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn random_code_matrix_power_and_determinism() {
        for topo in [Topology::Mas, Topology::Sas] {
            let a =
                random_code_matrix(&mut ChaCha8Rng::seed_from_u64(5), topo, 2, 2, 3.5, 2).unwrap();
            let b =
                random_code_matrix(&mut ChaCha8Rng::seed_from_u64(5), topo, 2, 2, 3.5, 2).unwrap();
            let c =
                random_code_matrix(&mut ChaCha8Rng::seed_from_u64(6), topo, 2, 2, 3.5, 2).unwrap();
            assert!((a.power() - 3.5).abs() <= 1e-12 * 3.5);
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn power_matches_equivalent_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for topo in [Topology::Mas, Topology::Sas] {
            let cm = random_code_matrix(&mut rng, topo, 2, 2, 2.0, 2).unwrap();
            let traced: f64 = (0..2)
                .map(|k| energy(&cm.equivalent(k, SpaceTimeCode::Alamouti)))
                .sum();
            assert!((traced - cm.power()).abs() < 1e-12);
        }
    }

    #[test]
    fn mas_identity_example() {
        let cm = CodeMatrix::identity(Topology::Mas, 1, 2, 2);
        let eq = build_equivalent_model(
            Topology::Mas,
            SpaceTimeCode::Alamouti,
            0,
            &CMat::identity(2, 2),
            &cm,
        )
        .unwrap();
        let r = eq.effective() * CVec::from_vec(vec![ONE, ZERO]);
        assert_eq!(r.as_slice(), &[ONE, ZERO, ZERO, ONE]);
    }

    #[test]
    fn zero_channel_gives_zero_model() {
        let cm = CodeMatrix::identity(Topology::Mas, 1, 2, 2);
        let eq = build_equivalent_model(
            Topology::Mas,
            SpaceTimeCode::Alamouti,
            0,
            &CMat::zeros(2, 2),
            &cm,
        )
        .unwrap();
        assert_eq!(eq.g_eq, CMat::zeros(4, 2));
        assert_eq!(eq.effective(), CMat::zeros(4, 2));
    }

    #[test]
    fn sas_phi_eq_is_diagonal_gain_fold() {
        let cm = CodeMatrix::new(
            Topology::Sas,
            vec![
                CMat::from_row_slice(1, 2, &[C64::new(1.0, 1.0), C64::new(0.0, 2.0)]),
                CMat::from_row_slice(1, 2, &[C64::new(3.0, 0.0), C64::new(0.5, -1.0)]),
            ],
        )
        .unwrap();
        let d0 = cm.equivalent(0, SpaceTimeCode::Alamouti);
        assert_eq!(d0[(0, 0)], C64::new(1.0, 1.0));
        assert_eq!(d0[(1, 1)], C64::new(0.0, -2.0));
        let d1 = cm.equivalent(1, SpaceTimeCode::Alamouti);
        assert_eq!(d1[(1, 1)], C64::new(3.0, 0.0));
        assert_eq!(d1[(0, 0)], C64::new(0.5, 1.0));
    }
}
