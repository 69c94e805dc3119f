//! Global configuration, the QPSK constellation, symbol candidates and
//! delay-profile machinery shared by the rest of the crate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::linalg::{CMat, CVec, C64, ONE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Relays carry `N` antennas and each transmits a full codeword.
    Mas,
    /// Single-antenna relays, one codeword row per relay.
    Sas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelayStrategy {
    Df,
    Af,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Plain distributed Alamouti: identity code matrices.
    DAlamouti,
    /// Randomized Alamouti: static random code matrices per fading frame.
    RAlamouti,
    /// Full Alamouti at every MAS relay with code matrices adapted by DT-ACMO.
    FullAlamoutiPerRelay,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::DAlamouti => "DAlamouti",
            Scheme::RAlamouti => "RAlamouti",
            Scheme::FullAlamoutiPerRelay => "FullAlamoutiPerRelay",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "dalamouti" => Ok(Scheme::DAlamouti),
            "ralamouti" => Ok(Scheme::RAlamouti),
            "fullalamoutiperrelay" | "dtacmo" => Ok(Scheme::FullAlamoutiPerRelay),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Mas => "MAS",
            Topology::Sas => "SAS",
        })
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MAS" => Ok(Topology::Mas),
            "SAS" => Ok(Topology::Sas),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

impl fmt::Display for RelayStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelayStrategy::Df => "DF",
            RelayStrategy::Af => "AF",
        })
    }
}

impl FromStr for RelayStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DF" => Ok(RelayStrategy::Df),
            "AF" => Ok(RelayStrategy::Af),
            other => Err(format!("unknown relay strategy `{other}`")),
        }
    }
}

/// RLS settings for the adaptive code-matrix optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Adapt the code matrices of every scheme, not only `FullAlamoutiPerRelay`.
    pub enabled: bool,
    /// Forgetting factor in (0, 1].
    pub lambda: f64,
    /// Initialization regularizer, `P[0] = δ⁻¹ I`.
    pub delta: f64,
    /// Adaptation blocks per fading frame before errors are counted.
    pub warmup_blocks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            lambda: 0.998,
            delta: 0.01,
            warmup_blocks: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub topology: Topology,
    pub n_r: usize,
    /// Antennas at source and destination (and at MAS relays).
    pub n_ant: usize,
    /// Code block length in symbol slots.
    pub t_len: usize,
    /// Destination antennas; defaults to `n_ant`. Only SAS may differ.
    pub dest_antennas: Option<usize>,
    /// Per-relay delays in symbol slots, relative to the earliest relay.
    pub delays: Vec<i64>,
    pub direct_link: bool,
    pub relay_strategy: RelayStrategy,
    pub schemes: Vec<Scheme>,
    pub p_r: f64,
    pub sigma_s2: f64,
    /// SNR of the source-relay hop. `None` means error-free DF relays
    /// (AF relays then use the destination noise level).
    pub first_hop_snr_db: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub snr_grid_db: Vec<f64>,
    /// Upper bound on code blocks simulated per (SNR, scheme) cell.
    pub trials_per_point: u64,
    /// Early stop once this many bit errors were counted (0 disables).
    pub min_errors: u64,
    /// Code blocks sharing one quasi-static channel realization.
    pub blocks_per_frame: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Mas,
            n_r: 2,
            n_ant: 2,
            t_len: 2,
            dest_antennas: None,
            delays: vec![0, 1],
            direct_link: false,
            relay_strategy: RelayStrategy::Df,
            schemes: vec![Scheme::DAlamouti],
            p_r: 4.0,
            sigma_s2: 1.0,
            first_hop_snr_db: None,
            optimizer: OptimizerConfig::default(),
            snr_grid_db: vec![0.0, 4.0, 8.0, 12.0, 16.0],
            trials_per_point: 100_000,
            min_errors: 200,
            blocks_per_frame: 1,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Checks every configuration invariant and returns the config unchanged.
    pub fn validate(self) -> Result<Self> {
        validate_config(self)
    }

    pub fn delta_max(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0).max(0) as usize
    }

    pub fn delay(&self, k: usize) -> usize {
        self.delays[k].max(0) as usize
    }

    pub fn delay_profile(&self) -> DelayProfile {
        DelayProfile::new(self.delays.iter().map(|&d| d.max(0) as usize).collect())
    }

    pub fn dest_antennas(&self) -> usize {
        self.dest_antennas.unwrap_or(self.n_ant)
    }

    /// Antennas per relay: `N` for MAS, one for SAS.
    pub fn relay_antennas(&self) -> usize {
        match self.topology {
            Topology::Mas => self.n_ant,
            Topology::Sas => 1,
        }
    }

    /// Length of the relay part of the stacked received vector, `N_d (δ_max + T)`.
    pub fn relay_rows(&self) -> usize {
        self.dest_antennas() * (self.delta_max() + self.t_len)
    }

    /// Full received-vector length including the appended direct-link slot.
    pub fn received_len(&self) -> usize {
        self.relay_rows()
            + if self.direct_link {
                self.dest_antennas()
            } else {
                0
            }
    }

    pub fn is_adaptive(&self, scheme: Scheme) -> bool {
        scheme == Scheme::FullAlamoutiPerRelay || self.optimizer.enabled
    }

    pub fn delay_label(&self) -> String {
        let parts: Vec<String> = self.delays.iter().map(|d| d.to_string()).collect();
        format!("[{}]", parts.join(";"))
    }
}

/// Validates a configuration against the system invariants.
pub fn validate_config(cfg: SystemConfig) -> Result<SystemConfig> {
    if cfg.n_r == 0 {
        return Err(config_err("n_r", "at least one relay is required"));
    }
    if cfg.delays.len() != cfg.n_r {
        return Err(config_err(
            "delays",
            format!("expected {} delays, got {}", cfg.n_r, cfg.delays.len()),
        ));
    }
    if let Some(d) = cfg.delays.iter().find(|&&d| d < 0) {
        return Err(config_err("delays", format!("negative delay {d}")));
    }
    if cfg.delays.iter().min() != Some(&0) {
        return Err(config_err(
            "delays",
            "delays are relative to the earliest relay, so the minimum must be 0",
        ));
    }
    match cfg.n_ant {
        2 => {
            if cfg.t_len != 2 {
                return Err(config_err("T", "Alamouti requires T = 2"));
            }
        }
        1 => {
            if cfg.topology != Topology::Sas || cfg.t_len != 1 {
                return Err(config_err(
                    "N",
                    "N = 1 is only supported for the single-antenna SAS baseline with T = 1",
                ));
            }
        }
        n => return Err(config_err("N", format!("N must be 1 or 2, got {n}"))),
    }
    if cfg.topology == Topology::Sas && cfg.n_r != cfg.n_ant {
        return Err(config_err(
            "n_r",
            format!(
                "SAS allocates one codeword row per relay: n_r must equal N = {}",
                cfg.n_ant
            ),
        ));
    }
    match cfg.dest_antennas {
        Some(0) => return Err(config_err("dest_antennas", "must be at least 1")),
        Some(n) if cfg.topology == Topology::Mas && n != cfg.n_ant => {
            return Err(config_err(
                "dest_antennas",
                "MAS requires as many destination antennas as relay antennas",
            ))
        }
        _ => {}
    }
    if cfg.schemes.is_empty() {
        return Err(config_err("scheme", "at least one scheme is required"));
    }
    for &s in &cfg.schemes {
        if s == Scheme::FullAlamoutiPerRelay && cfg.topology == Topology::Sas {
            return Err(config_err(
                "scheme",
                "FullAlamoutiPerRelay needs multi-antenna relays (MAS)",
            ));
        }
        if cfg.relay_strategy == RelayStrategy::Af && cfg.is_adaptive(s) {
            return Err(config_err(
                "relay_strategy",
                "code-matrix adaptation requires DF relays",
            ));
        }
    }
    if !(cfg.p_r.is_finite() && cfg.p_r > 0.0) {
        return Err(config_err("P_R", "relay power budget must be positive"));
    }
    if cfg.sigma_s2 != 1.0 {
        return Err(config_err("sigma_s2", "source symbol power is fixed to 1"));
    }
    if let Some(s) = cfg.first_hop_snr_db {
        if !s.is_finite() {
            return Err(config_err("first_hop_snr_db", "must be finite"));
        }
    }
    let opt = &cfg.optimizer;
    if !(opt.lambda > 0.0 && opt.lambda <= 1.0) {
        return Err(config_err("lambda", "forgetting factor must lie in (0, 1]"));
    }
    if !(opt.delta.is_finite() && opt.delta > 0.0) {
        return Err(config_err("delta", "regularizer must be positive"));
    }
    if cfg.snr_grid_db.is_empty() || cfg.snr_grid_db.iter().any(|s| !s.is_finite()) {
        return Err(config_err(
            "snr_grid_db",
            "need at least one finite SNR point",
        ));
    }
    if cfg.blocks_per_frame == 0 {
        return Err(config_err("blocks_per_frame", "must be at least 1"));
    }
    Ok(cfg)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gray-mapped unit-energy QPSK points indexed by `2·b0 + b1`.
pub const QPSK: [C64; 4] = [
    C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// 00 → (1+j)/√2, 01 → (−1+j)/√2, 11 → (−1−j)/√2, 10 → (1−j)/√2.
pub fn qpsk_map(bits: [bool; 2]) -> C64 {
    QPSK[qpsk_index(bits)]
}

/// Nearest-point decision; ties resolve toward zero bits.
pub fn qpsk_demap(symbol: C64) -> [bool; 2] {
    [symbol.im < 0.0, symbol.re < 0.0]
}

pub fn qpsk_index(bits: [bool; 2]) -> usize {
    (bits[0] as usize) << 1 | bits[1] as usize
}

pub fn qpsk_bits(index: usize) -> [bool; 2] {
    [index & 2 != 0, index & 1 != 0]
}

/// Bit differences between two QPSK indices.
#[inline]
pub fn qpsk_bit_errors(a: usize, b: usize) -> u32 {
    ((a ^ b) & 3).count_ones()
}

/// Draws a uniformly random vector of `n` QPSK symbols, returning the point
/// indices together with the symbol values.
pub fn random_symbols<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (Vec<usize>, CVec) {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let values = CVec::from_iterator(n, idx.iter().map(|&i| QPSK[i]));
    (idx, values)
}

/// Every QPSK vector of length `N`, one per column.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    n: usize,
    columns: CMat,
}

impl CandidateSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn matrix(&self) -> &CMat {
        &self.columns
    }

    pub fn column(&self, c: usize) -> CVec {
        self.columns.column(c).into_owned()
    }

    /// Per-antenna QPSK indices of candidate `c`; the first symbol is the most
    /// significant base-4 digit.
    pub fn indices(&self, c: usize) -> Vec<usize> {
        (0..self.n)
            .map(|j| (c >> (2 * (self.n - 1 - j))) & 3)
            .collect()
    }

    /// Candidate column index of a vector of QPSK indices.
    pub fn index_of(&self, symbols: &[usize]) -> usize {
        symbols.iter().fold(0, |acc, &s| (acc << 2) | s)
    }

    /// Builds a candidate set from explicit columns (used for degenerate sets).
    pub fn from_columns(columns: CMat) -> Self {
        Self {
            n: columns.nrows(),
            columns,
        }
    }
}

/// Enumerates all `4^N` QPSK vectors.
pub fn build_candidate_set(n: usize) -> CandidateSet {
    let d = 1usize << (2 * n);
    let mut columns = CMat::zeros(n, d);
    let set = CandidateSet {
        n,
        columns: CMat::zeros(0, 0),
    };
    for c in 0..d {
        for (j, q) in set.indices(c).into_iter().enumerate() {
            columns[(j, c)] = QPSK[q];
        }
    }
    CandidateSet { n, columns }
}

/// `[0_{δ_k×rows}; I_rows; 0_{(δ_max−δ_k)×rows}]`.
pub fn build_delay_matrix(delta_k: usize, delta_max: usize, rows: usize) -> Result<CMat> {
    if delta_k > delta_max {
        return Err(Error::DelayOutOfRange {
            delay: delta_k,
            max: delta_max,
        });
    }
    if rows == 0 {
        return Err(Error::Dimension(
            "delay matrix needs at least one row".into(),
        ));
    }
    let mut m = CMat::zeros(delta_max + rows, rows);
    for i in 0..rows {
        m[(delta_k + i, i)] = ONE;
    }
    Ok(m)
}

/// Per-relay integer slot delays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayProfile {
    delays: Vec<usize>,
    max: usize,
}

impl DelayProfile {
    pub fn new(delays: Vec<usize>) -> Self {
        let max = delays.iter().copied().max().unwrap_or(0);
        Self { delays, max }
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn delta_max(&self) -> usize {
        self.max
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// First received-vector row of relay `k` when each slot carries
    /// `per_slot` samples (time-slot-major stacking).
    pub fn offset(&self, k: usize, per_slot: usize) -> usize {
        self.delays[k] * per_slot
    }

    /// Sample-level delay matrix of relay `k` for a `T`-slot block of `per_slot`
    /// samples per slot: `N_d(δ_max+T) × N_d T`.
    pub fn matrix(&self, k: usize, per_slot: usize, slots: usize) -> Result<CMat> {
        build_delay_matrix(
            self.delays[k] * per_slot,
            self.max * per_slot,
            per_slot * slots,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_cfg() -> SystemConfig {
        SystemConfig {
            topology: Topology::Mas,
            n_r: 2,
            n_ant: 2,
            t_len: 2,
            delays: vec![0, 1],
            ..SystemConfig::default()
        }
    }

    #[test]
    fn accepts_unit_delay_profile() {
        let cfg = validate_config(reference_cfg()).unwrap();
        assert_eq!(cfg.delta_max(), 1);
    }

    #[test]
    fn accepts_synchronized_relays() {
        let cfg = validate_config(SystemConfig {
            delays: vec![0, 0],
            ..reference_cfg()
        })
        .unwrap();
        assert_eq!(cfg.delta_max(), 0);
    }

    #[test]
    fn rejects_profile_without_zero_reference() {
        let err = validate_config(SystemConfig {
            delays: vec![1, 2],
            ..reference_cfg()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "delays"));
    }

    #[test]
    fn rejects_negative_delay_and_empty_relays() {
        assert!(validate_config(SystemConfig {
            delays: vec![0, -1],
            ..reference_cfg()
        })
        .is_err());
        assert!(validate_config(SystemConfig {
            n_r: 0,
            delays: vec![],
            ..reference_cfg()
        })
        .is_err());
    }

    #[test]
    fn rejects_full_alamouti_on_sas() {
        let err = validate_config(SystemConfig {
            topology: Topology::Sas,
            schemes: vec![Scheme::FullAlamoutiPerRelay],
            ..reference_cfg()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "scheme"));
    }

    #[test]
    fn single_antenna_only_for_sas_baseline() {
        assert!(validate_config(SystemConfig {
            n_ant: 1,
            t_len: 1,
            n_r: 1,
            delays: vec![0],
            ..reference_cfg()
        })
        .is_err());
        assert!(validate_config(SystemConfig {
            topology: Topology::Sas,
            n_ant: 1,
            t_len: 1,
            n_r: 1,
            delays: vec![0],
            ..reference_cfg()
        })
        .is_ok());
    }

    #[test]
    fn qpsk_mapping_table() {
        let s = FRAC_1_SQRT_2;
        assert_eq!(qpsk_map([false, false]), C64::new(s, s));
        assert_eq!(qpsk_map([false, true]), C64::new(-s, s));
        assert_eq!(qpsk_map([true, true]), C64::new(-s, -s));
        assert_eq!(qpsk_map([true, false]), C64::new(s, -s));
        for i in 0..4 {
            let b = qpsk_bits(i);
            assert_relative_eq!(qpsk_map(b).norm_sqr(), 1.0, epsilon = 1e-15);
            assert_eq!(qpsk_demap(qpsk_map(b)), b);
        }
    }

    #[test]
    fn qpsk_demap_decisions() {
        assert_eq!(qpsk_demap(C64::new(0.9, 0.8)), [false, false]);
        assert_eq!(qpsk_demap(C64::new(0.0, 0.0)), [false, false]);
        assert_eq!(qpsk_demap(C64::new(-0.1, -3.0)), [true, true]);
    }

    #[test]
    fn delay_matrix_examples() {
        assert_eq!(build_delay_matrix(0, 0, 2).unwrap(), CMat::identity(2, 2));
        let shifted = build_delay_matrix(1, 1, 2).unwrap();
        let expected = CMat::from_row_slice(
            3,
            2,
            &[
                C64::default(),
                C64::default(),
                ONE,
                C64::default(),
                C64::default(),
                ONE,
            ],
        );
        assert_eq!(shifted, expected);
        let padded = build_delay_matrix(0, 1, 2).unwrap();
        let expected = CMat::from_row_slice(
            3,
            2,
            &[
                ONE,
                C64::default(),
                C64::default(),
                ONE,
                C64::default(),
                C64::default(),
            ],
        );
        assert_eq!(padded, expected);
        assert!(matches!(
            build_delay_matrix(2, 1, 2),
            Err(Error::DelayOutOfRange { .. })
        ));
    }

    #[test]
    fn delay_matrices_have_orthonormal_columns() {
        for dmax in 0..4 {
            for dk in 0..=dmax {
                for rows in 1..5 {
                    let m = build_delay_matrix(dk, dmax, rows).unwrap();
                    assert_eq!(m.adjoint() * &m, CMat::identity(rows, rows));
                    for c in 0..rows {
                        let s: f64 = m.column(c).iter().map(|z| z.norm()).sum();
                        assert_eq!(s, 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_sets() {
        let one = build_candidate_set(1);
        assert_eq!(one.len(), 4);
        for c in 0..4 {
            assert_eq!(one.matrix()[(0, c)], QPSK[c]);
        }
        let two = build_candidate_set(2);
        assert_eq!((two.n(), two.len()), (2, 16));
        for a in 0..16 {
            assert_relative_eq!(two.column(a).norm_squared(), 2.0, epsilon = 1e-14);
            assert_eq!(two.index_of(&two.indices(a)), a);
            for b in 0..a {
                assert_ne!(two.column(a), two.column(b));
            }
        }
    }
}
