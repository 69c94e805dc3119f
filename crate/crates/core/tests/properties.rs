use dtstc::channel::{draw_channel, noiseless_received, relay_process};
use dtstc::coding::{build_equivalent_model, CodeMatrix, SpaceTimeCode};
use dtstc::detection::{ml_detect, DestinationModel, RelayLink};
use dtstc::dtacmo::{batch_ls_oracle, normalize_power, DtAcmo, RlsState};
use dtstc::linalg::{complex_gaussian, gaussian_matrix, rel_err, CMat, CVec, C64};
use dtstc::simulator::{run_compare, run_frame};
use dtstc::system::{
    build_candidate_set, build_delay_matrix, qpsk_bits, qpsk_demap, qpsk_map, random_symbols,
    Scheme, SystemConfig, Topology,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn column(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_column_slice(gaussian_matrix(rng, n, 1).as_slice())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qpsk_round_trip(b0: bool, b1: bool) {
        prop_assert_eq!(qpsk_demap(qpsk_map([b0, b1])), [b0, b1]);
        prop_assert!((qpsk_map([b0, b1]).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_hits_budget_and_keeps_direction(
        seed in any::<u64>(), p_r in 0.01f64..100.0, n_r in 1usize..5, sas: bool,
    ) {
        let mut g = rng(seed);
        let topology = if sas { Topology::Sas } else { Topology::Mas };
        let blocks = (0..n_r)
            .map(|_| if sas { gaussian_matrix(&mut g, 1, 2) } else { gaussian_matrix(&mut g, 2, 2) })
            .collect();
        let cm = CodeMatrix::new(topology, blocks).unwrap();
        let out = normalize_power(&cm, p_r).unwrap();
        prop_assert!((out.power() - p_r).abs() <= 1e-12 * p_r);
        let c = (p_r / cm.power()).sqrt();
        for k in 0..n_r {
            prop_assert!(rel_err(out.relay(k), &(cm.relay(k) * C64::new(c, 0.0))) < 1e-14);
        }
    }

    #[test]
    fn rls_matches_batch_at_every_step(
        seed in any::<u64>(), lambda in 0.8f64..=1.0, delta in 1e-3f64..10.0,
        rows in 1usize..7, dim in 1usize..5, per_block in 1usize..4,
    ) {
        let mut g = rng(seed);
        let mut st = RlsState::new(rows, dim, lambda, delta).unwrap();
        let mut history = Vec::new();
        for _ in 0..15 {
            let block: Vec<(CVec, CVec)> =
                (0..per_block).map(|_| (column(&mut g, rows), column(&mut g, dim))).collect();
            st.update_block(&block).unwrap();
            history.push(block);
            let batch = batch_ls_oracle(&history, lambda, delta).unwrap();
            prop_assert!(rel_err(st.phi(), &batch) <= 1e-8);
            prop_assert!((st.p() - st.p().adjoint()).norm() <= 1e-10 * st.p().norm());
            prop_assert!((st.p().clone() * C64::new(1.0, 0.0)).cholesky().is_some());
        }
    }

    #[test]
    fn delay_matrix_shifts_without_loss(seed in any::<u64>(), dmax in 0usize..5, rows in 1usize..6) {
        let mut g = rng(seed);
        for dk in 0..=dmax {
            let d = build_delay_matrix(dk, dmax, rows).unwrap();
            let v = column(&mut g, rows);
            let w = &d * &v;
            prop_assert_eq!(w.rows(dk, rows).into_owned(), v.clone());
            prop_assert!((w.norm_squared() - v.norm_squared()).abs() < 1e-12 * (1.0 + v.norm_squared()));
        }
        prop_assert!(build_delay_matrix(dmax + 1, dmax, rows).is_err());
    }

    #[test]
    fn received_vector_is_additive_and_supported(seed in any::<u64>(), d1 in 0i64..3) {
        let cfg = SystemConfig { delays: vec![0, d1], ..SystemConfig::default() };
        let mut g = rng(seed);
        let ch = draw_channel(&mut g, &cfg);
        let x: Vec<CMat> = (0..2).map(|_| gaussian_matrix(&mut g, 2, 2)).collect();
        let z = CMat::zeros(2, 2);
        let p = cfg.delay_profile();
        let both = noiseless_received(&ch, &x, &p, None).unwrap();
        let a = noiseless_received(&ch, &[x[0].clone(), z.clone()], &p, None).unwrap();
        let b = noiseless_received(&ch, &[z, x[1].clone()], &p, None).unwrap();
        prop_assert_eq!(&both, &(&a + &b));
        let off = 2 * d1 as usize;
        for (i, v) in b.iter().enumerate() {
            if i < off || i >= off + 4 {
                prop_assert_eq!(v.norm(), 0.0);
            }
        }
    }

    #[test]
    fn detector_never_loses_to_a_rescan(seed in any::<u64>(), sas: bool, d1 in 0i64..3) {
        let topology = if sas { Topology::Sas } else { Topology::Mas };
        let cfg = SystemConfig { topology, delays: vec![0, d1], ..SystemConfig::default() };
        let mut g = rng(seed);
        let ch = draw_channel(&mut g, &cfg);
        let cm = dtstc::coding::random_code_matrix(&mut g, topology, 2, 2, 4.0, 2).unwrap();
        let links: Vec<RelayLink> =
            (0..2).map(|k| RelayLink::decode_forward(&ch.relay_dest[k], &cm, k, 2)).collect();
        let model = DestinationModel::from_links(&links, &cfg.delay_profile(), SpaceTimeCode::Alamouti, None).unwrap();
        let (_, s) = random_symbols(&mut g, 2);
        let r = model.predict(&s) + CVec::from_fn(model.len(), |_, _| complex_gaussian(&mut g, 2.0));
        let cands = build_candidate_set(2);
        let res = ml_detect(&r, &model, &cands).unwrap();
        for c in 0..cands.len() {
            let m = (&r - model.predict(&cands.column(c))).norm_squared();
            prop_assert!(res.metric <= m + 1e-12);
            if m == res.metric {
                prop_assert!(res.candidate_index <= c);
            }
        }
    }

    #[test]
    fn equivalent_model_reproduces_direct_assembly(seed in any::<u64>(), sas: bool, d1 in 0i64..3) {
        let topology = if sas { Topology::Sas } else { Topology::Mas };
        let cfg = SystemConfig { topology, delays: vec![d1, 0], ..SystemConfig::default() };
        let code = SpaceTimeCode::Alamouti;
        let mut g = rng(seed);
        let ch = draw_channel(&mut g, &cfg);
        let cm = dtstc::coding::random_code_matrix(&mut g, topology, 2, 2, 4.0, 2).unwrap();
        let (_, s) = random_symbols(&mut g, 2);
        let sv: Vec<C64> = s.iter().copied().collect();
        let blocks: Vec<CMat> = (0..2).map(|k| relay_process(&sv, &cm, code, k).unwrap()).collect();
        let direct = noiseless_received(&ch, &blocks, &cfg.delay_profile(), None).unwrap();
        let models: Vec<_> = (0..2)
            .map(|k| build_equivalent_model(topology, code, k, &ch.relay_dest[k], &cm).unwrap())
            .collect();
        let lin = DestinationModel::from_equivalent(&models, &cfg.delay_profile(), code).unwrap().predict(&s);
        prop_assert!((lin - &direct).norm() <= 1e-12 * direct.norm());
    }
}

#[test]
fn optimizer_keeps_power_budget_and_is_decision_directed() {
    let cfg = SystemConfig::default();
    let mut g = rng(3);
    let ch = draw_channel(&mut g, &cfg);
    let (mut opt, mut phi) = dtstc::dtacmo::rls_init(&mut g, &cfg).unwrap();
    let links = |phi: &CodeMatrix| -> Vec<RelayLink> {
        (0..2)
            .map(|k| RelayLink::decode_forward(&ch.relay_dest[k], phi, k, 2))
            .collect()
    };
    for _ in 0..50 {
        let model = DestinationModel::from_links(
            &links(&phi),
            &cfg.delay_profile(),
            SpaceTimeCode::Alamouti,
            None,
        )
        .unwrap();
        let (_, s) = random_symbols(&mut g, 2);
        let r = model.predict(&s);
        let sv: Vec<C64> = s.iter().copied().collect();
        phi = opt.sweep(&r, &sv, &ch, &phi).unwrap();
        assert!((phi.power() - cfg.p_r).abs() <= 1e-12 * cfg.p_r);
    }
    assert_eq!(opt.states()[0].iteration(), 50);
    let _ = DtAcmo::new(&cfg).unwrap();
}

#[test]
fn sas_optimizer_recovers_gains_that_produced_the_data() {
    // Noiseless, static gains: the per-relay fit converges to the transmitted gains.
    let cfg = SystemConfig {
        topology: Topology::Sas,
        delays: vec![0, 1],
        optimizer: dtstc::system::OptimizerConfig {
            lambda: 1.0,
            delta: 1e-6,
            ..Default::default()
        },
        ..SystemConfig::default()
    };
    let mut g = rng(8);
    let ch = draw_channel(&mut g, &cfg);
    let truth = dtstc::coding::random_code_matrix(&mut g, Topology::Sas, 2, 2, 4.0, 2).unwrap();
    let mut opt = DtAcmo::new(&cfg).unwrap();
    let links: Vec<RelayLink> = (0..2)
        .map(|k| RelayLink::decode_forward(&ch.relay_dest[k], &truth, k, 2))
        .collect();
    let model =
        DestinationModel::from_links(&links, &cfg.delay_profile(), SpaceTimeCode::Alamouti, None)
            .unwrap();
    let mut fed_back = truth.clone();
    for _ in 0..60 {
        let (_, s) = random_symbols(&mut g, 2);
        let sv: Vec<C64> = s.iter().copied().collect();
        fed_back = opt.sweep(&model.predict(&s), &sv, &ch, &truth).unwrap();
    }
    for k in 0..2 {
        assert!(rel_err(fed_back.relay(k), truth.relay(k)) < 1e-6);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = SystemConfig {
        schemes: vec![Scheme::DAlamouti, Scheme::FullAlamoutiPerRelay],
        snr_grid_db: vec![4.0, 8.0],
        trials_per_point: 300,
        min_errors: 0,
        optimizer: dtstc::system::OptimizerConfig {
            warmup_blocks: 10,
            ..Default::default()
        },
        ..SystemConfig::default()
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| run_compare(&cfg).unwrap());
    let b = four.install(|| run_compare(&cfg).unwrap());
    assert_eq!(a.points, b.points);
}

#[test]
fn ber_falls_with_snr() {
    let cfg = SystemConfig {
        delays: vec![0, 0],
        snr_grid_db: vec![0.0, 10.0, 20.0],
        trials_per_point: 100_000,
        min_errors: 0,
        ..SystemConfig::default()
    };
    let res = run_compare(&cfg).unwrap();
    let b: Vec<f64> = res.points.iter().map(|p| p.ber).collect();
    assert!(b[2] < b[1] && b[1] < b[0]);
}

#[test]
fn aligned_two_by_one_slope_shows_second_order_diversity() {
    let cfg = SystemConfig {
        topology: Topology::Sas,
        dest_antennas: Some(1),
        delays: vec![0, 0],
        snr_grid_db: vec![15.0, 20.0],
        trials_per_point: 4_000_000,
        min_errors: 400,
        ..SystemConfig::default()
    };
    let res = run_compare(&cfg).unwrap();
    let pts: Vec<(f64, f64)> = res.points.iter().map(|p| (p.snr_db, p.ber)).collect();
    let slope = dtstc::simulator::log_slope(&pts);
    assert!((-2.6..=-1.6).contains(&slope), "slope {slope}");
}

#[test]
fn noiseless_frames_are_error_free() {
    for delays in [vec![0, 0], vec![0, 1]] {
        let cfg = SystemConfig {
            delays,
            ..SystemConfig::default()
        };
        for f in 0..20 {
            let (e, _) = run_frame(&cfg, Scheme::DAlamouti, 1, f, 1e-300, 2).unwrap();
            assert_eq!(e, 0);
        }
    }
    let _ = qpsk_bits(0);
}
