use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{draw_channel, noiseless_received, relay_process};
use crate::coding::{build_equivalent_model, random_code_matrix, CodeMatrix, SpaceTimeCode};
use crate::detection::DestinationModel;
use crate::dtacmo::{batch_ls_oracle, normalize_power, psi_direct, RlsState};
use crate::error::Result;
use crate::linalg::{gaussian_matrix, rel_err, CMat, CVec};
use crate::simulator::{run_compare, theoretical_alamouti_ber};
use crate::system::{build_delay_matrix, Scheme, SystemConfig, Topology};

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e} (tolerance {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Negative control: perturb every RLS `P` update by this amount.
    pub p_perturbation: Option<f64>,
}

fn report(name: &'static str, measured: f64, tolerance: f64, detail: String) -> SuiteReport {
    SuiteReport {
        name,
        passed: measured.is_finite() && measured <= tolerance,
        measured,
        tolerance,
        detail,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_column_slice(gaussian_matrix(rng, n, 1).as_slice())
}

/// Worst recursive-vs-batch deviation and worst `‖PΨ − I‖` over `histories`
/// random histories of `iterations` blocks with `per_block` observations each.
pub fn rls_batch_deviation(
    seed: u64,
    histories: usize,
    iterations: usize,
    rows: usize,
    dim: usize,
    per_block: usize,
    p_perturbation: Option<f64>,
) -> Result<(f64, f64)> {
    let (mut worst_phi, mut worst_psi) = (0.0f64, 0.0f64);
    for h in 0..histories {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (h as u64).wrapping_mul(0x9E37_79B9));
        let lambda = rng.random_range(0.9..=1.0);
        let delta = rng.random_range(1e-3..1.0);
        let mut st = RlsState::new(rows, dim, lambda, delta)?;
        if let Some(eps) = p_perturbation {
            st.set_p_perturbation(eps);
        }
        let mut history = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let block: Vec<(CVec, CVec)> = (0..per_block)
                .map(|_| (random_vec(&mut rng, rows), random_vec(&mut rng, dim)))
                .collect();
            st.update_block(&block)?;
            history.push(block);
            let batch = batch_ls_oracle(&history, lambda, delta)?;
            worst_phi = worst_phi.max(rel_err(st.phi(), &batch));
            let psi = psi_direct(&history, lambda, delta, dim);
            worst_psi = worst_psi.max((st.p() * psi - CMat::identity(dim, dim)).norm());
        }
    }
    Ok((worst_phi, worst_psi))
}

/// Worst relative mismatch between direct assembly and the linearized
/// equivalent-model assembly.
pub fn equivalent_model_deviation(seed: u64, draws: usize) -> Result<f64> {
    let code = SpaceTimeCode::Alamouti;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for topology in [Topology::Mas, Topology::Sas] {
        for delays in [vec![0, 0], vec![0, 1], vec![0, 2]] {
            let cfg = SystemConfig {
                topology,
                delays,
                ..SystemConfig::default()
            };
            let profile = cfg.delay_profile();
            for _ in 0..draws {
                let ch = draw_channel(&mut rng, &cfg);
                let cm = random_code_matrix(&mut rng, topology, 2, 2, cfg.p_r, cfg.n_r)?;
                let (_, s) = crate::system::random_symbols(&mut rng, 2);
                let sv: Vec<_> = s.iter().copied().collect();
                let blocks: Vec<CMat> = (0..cfg.n_r)
                    .map(|k| relay_process(&sv, &cm, code, k))
                    .collect::<Result<_>>()?;
                let direct = noiseless_received(&ch, &blocks, &profile, None)?;
                let models = (0..cfg.n_r)
                    .map(|k| build_equivalent_model(topology, code, k, &ch.relay_dest[k], &cm))
                    .collect::<Result<Vec<_>>>()?;
                let lin = DestinationModel::from_equivalent(&models, &profile, code)?.predict(&s);
                worst = worst.max((&lin - &direct).norm() / direct.norm());
            }
        }
    }
    Ok(worst)
}

/// Checks the delay matrices against the offset-based assembly.
pub fn delay_algebra_deviation(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for dmax in 0..4 {
        for dk in 0..=dmax {
            let d = build_delay_matrix(dk, dmax, 4)?;
            worst = worst.max((d.adjoint() * &d - CMat::identity(4, 4)).norm());
            let v = random_vec(&mut rng, 4);
            let shifted = &d * &v;
            worst = worst.max((shifted.rows(dk, 4) - &v).norm());
            worst = worst.max((shifted.norm_squared() - v.norm_squared()).abs());
        }
    }
    for delays in [vec![0, 0], vec![0, 1], vec![2, 0], vec![0, 3]] {
        let cfg = SystemConfig {
            delays,
            ..SystemConfig::default()
        };
        let profile = cfg.delay_profile();
        let ch = draw_channel(&mut rng, &cfg);
        let blocks: Vec<CMat> = (0..2).map(|_| gaussian_matrix(&mut rng, 2, 2)).collect();
        let r = noiseless_received(&ch, &blocks, &profile, None)?;
        let mut expect = CVec::zeros(r.len());
        for k in 0..2 {
            let y = &ch.relay_dest[k] * &blocks[k];
            expect += profile.matrix(k, 2, 2)? * CVec::from_column_slice(y.as_slice());
        }
        worst = worst.max((r - expect).norm());
    }
    Ok(worst)
}

/// Worst relative power error after normalization over random code matrices.
pub fn power_normalization_deviation(seed: u64, count: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let topology = if i % 2 == 0 {
            Topology::Mas
        } else {
            Topology::Sas
        };
        let n_r = rng.random_range(1..=4);
        let p_r: f64 = rng.random_range(0.1..10.0);
        let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let blocks = (0..n_r)
            .map(|_| match topology {
                Topology::Mas => gaussian_matrix(&mut rng, 2, 2),
                Topology::Sas => gaussian_matrix(&mut rng, 1, 2),
            } * crate::linalg::C64::new(scale, 0.0))
            .collect();
        let cm = normalize_power(&CodeMatrix::new(topology, blocks)?, p_r)?;
        worst = worst.max((cm.power() - p_r).abs() / p_r);
    }
    Ok(worst)
}

/// Simulated 2×1 Alamouti BER vs the closed form at one SNR: relative error.
pub fn alamouti_theory_deviation(
    seed: u64,
    snr_db: f64,
    min_errors: u64,
) -> Result<(f64, f64, f64)> {
    let cfg = SystemConfig {
        topology: Topology::Sas,
        dest_antennas: Some(1),
        delays: vec![0, 0],
        schemes: vec![Scheme::DAlamouti],
        snr_grid_db: vec![snr_db],
        trials_per_point: 50_000_000,
        min_errors,
        seed,
        ..SystemConfig::default()
    };
    let res = run_compare(&cfg)?;
    let sim = res.points[0].ber;
    let theory = theoretical_alamouti_ber(snr_db);
    Ok(((sim - theory).abs() / theory, sim, theory))
}

/// Runs every suite once, in a fixed order.
pub fn verify(opts: &VerifyOptions) -> Vec<SuiteReport> {
    let seed = opts.seed;
    let mut out = Vec::new();

    out.push(
        match (
            rls_batch_deviation(seed, 20, 50, 6, 4, 1, opts.p_perturbation),
            rls_batch_deviation(seed ^ 1, 20, 50, 1, 2, 4, opts.p_perturbation),
        ) {
            (Ok((a, pa)), Ok((b, pb))) => report(
                "rls_batch_equivalence",
                a.max(b),
                1e-8,
                format!(
                    "(MAS {a:.2e}, SAS {b:.2e}; inversion lemma {:.2e})",
                    pa.max(pb)
                ),
            ),
            (Err(e), _) | (_, Err(e)) => report(
                "rls_batch_equivalence",
                f64::INFINITY,
                1e-8,
                format!("({e})"),
            ),
        },
    );
    out.push(match equivalent_model_deviation(seed, 200) {
        Ok(d) => report("equivalent_model_consistency", d, 1e-12, String::new()),
        Err(e) => report(
            "equivalent_model_consistency",
            f64::INFINITY,
            1e-12,
            format!("({e})"),
        ),
    });
    out.push(match delay_algebra_deviation(seed) {
        Ok(d) => report("delay_matrix_algebra", d, 1e-12, String::new()),
        Err(e) => report(
            "delay_matrix_algebra",
            f64::INFINITY,
            1e-12,
            format!("({e})"),
        ),
    });
    out.push(match power_normalization_deviation(seed, 10_000) {
        Ok(d) => report("power_normalization", d, 1e-12, String::new()),
        Err(e) => report(
            "power_normalization",
            f64::INFINITY,
            1e-12,
            format!("({e})"),
        ),
    });
    out.push(match alamouti_theory_deviation(seed, 10.0, 1000) {
        Ok((d, sim, th)) => report(
            "alamouti_vs_theory",
            d,
            0.10,
            format!("(simulated {sim:.4e}, closed form {th:.4e} at 10 dB)"),
        ),
        Err(e) => report("alamouti_vs_theory", f64::INFINITY, 0.10, format!("({e})")),
    });
    out
}
