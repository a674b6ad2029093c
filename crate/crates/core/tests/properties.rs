use dashsim::adapters::{
    discretize_state, pd_compute_gains, pd_decide, q_update, virtual_step, ClientState, DiscreteState, PdConfig,
    QTable, StepEnv,
};
use dashsim::channel::{build_markov_matrix, ChannelSampler};
use dashsim::controller::{iams_select, imms_select, RewardHistories};
use dashsim::engine::{stream_rng, RngStream};
use dashsim::qoe::{buffer_penalty, qoe_metric_a, qoe_metric_b, reward, MetricAParams};
use dashsim::{ChannelModel, Level, MethodKind, QualityLadder, QualityMap, RewardParams, SessionLog, StepRecord, SystemState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ladder_strategy() -> impl Strategy<Value = QualityLadder> {
    prop::collection::btree_set(1u32..20_000, 2..8).prop_map(|set| {
        QualityLadder::new(set.into_iter().map(f64::from).collect(), 2.0).unwrap()
    })
}

fn log_strategy() -> impl Strategy<Value = SessionLog> {
    prop::collection::vec((1usize..=5, 0.0f64..3.0, 0.0f64..20.0, 100.0f64..6000.0), 1..40).prop_map(|rows| {
        let ladder = QualityLadder::default();
        let quality = QualityMap::default();
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (level, rebuffer, buffer, beta))| {
                let level = Level(level);
                let bitrate = ladder.bitrate(level);
                StepRecord {
                    episode: 0,
                    segment: i as u64,
                    method: MethodKind::RateBased,
                    level,
                    bitrate_kbps: bitrate,
                    ssim: quality.quality_of(level, 3).unwrap(),
                    reward: 0.0,
                    buffer_s: buffer,
                    rebuffer_s: rebuffer,
                    beta_est_kbps: beta,
                    beta_real_kbps: beta,
                    download_s: bitrate * 2.0 / beta,
                    virtual_rewards: [None; 3],
                }
            })
            .collect();
        SessionLog {
            segment_duration: 2.0,
            startup_delay: 0.0,
            records,
        }
    })
}

proptest! {
    // media

    #[test]
    fn nearest_level_is_idempotent_on_rungs(ladder in ladder_strategy()) {
        for level in ladder.levels() {
            prop_assert_eq!(ladder.nearest_level(ladder.bitrate(level)), level);
        }
    }

    #[test]
    // Power-of-two factors keep the scaled midpoints exact, so ties stay ties.
    fn nearest_level_is_scale_invariant(ladder in ladder_strategy(), query in 0.0f64..25_000.0, e in -10i32..10) {
        let s = 2f64.powi(e);
        let scaled = QualityLadder::new(ladder.bitrates_kbps.iter().map(|b| b * s).collect(), 2.0).unwrap();
        prop_assert_eq!(scaled.nearest_level(query * s), ladder.nearest_level(query));
    }

    // channel

    #[test]
    fn markov_rows_are_stochastic(k in 3usize..12, p in 0.0f64..=0.5) {
        let m = build_markov_matrix(k, p).unwrap();
        for i in 0..k {
            let sum: f64 = m.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(m.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn markov_without_transitions_is_constant(seed: u64, initial in 0usize..5) {
        let model = ChannelModel::Markov {
            states_kbps: vec![1000.0, 2000.0, 3000.0, 4000.0, 5000.0],
            p: 0.0,
            initial_state: initial,
        };
        let mut s = ChannelSampler::new(&model, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let first = s.sample(0);
        for t in 1..200 {
            prop_assert_eq!(s.sample(t), first);
        }
    }

    #[test]
    fn channel_replay_is_bit_identical(seed: u64, p in 0.0f64..=0.5) {
        let model = ChannelModel::default_markov(p);
        let draw = || {
            let mut s = ChannelSampler::new(&model, stream_rng(seed, RngStream::Channel)).unwrap();
            (0..300).map(|t| s.sample(t).to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn square_wave_visits_each_level_half_the_time(half in 1u64..50, start in 0u64..1000) {
        let model = ChannelModel::SquareWave { low_kbps: 2000.0, high_kbps: 4000.0, half_period: half };
        let mut s = ChannelSampler::new(&model, ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in 0..start {
            s.sample(t);
        }
        let lows = (start..start + 2 * half).filter(|&t| s.sample(t) == 2000.0).count() as u64;
        prop_assert_eq!(lows, half);
    }

    // qoe

    #[test]
    fn reward_is_quality_at_zero_penalties(q in 0.0f64..1.0, b in 2.0f64..20.0) {
        let p = RewardParams { reference_buffer: b, ..RewardParams::default() };
        let s = SystemState { q_prev: q, beta_est: 3000.0, complexity: 2, buffer: b };
        prop_assert_eq!(reward(q, &s, 2.0, 2.0, &p), q);
    }

    #[test]
    fn reward_does_not_increase_with_estimated_download(
        q in 0.0f64..1.0, q_prev in 0.0f64..1.0, b in 0.0f64..20.0, d in 0.01f64..10.0, extra in 0.0f64..10.0,
    ) {
        let p = RewardParams::default();
        let s = SystemState { q_prev, beta_est: 3000.0, complexity: 4, buffer: b };
        let (r0, r1) = (reward(q, &s, d, 2.0, &p), reward(q, &s, d + extra, 2.0, &p));
        if b + 2.0 - d <= p.reference_buffer {
            prop_assert!(r1 <= r0);
        } else {
            // Above the reference a longer download moves the predicted buffer
            // back toward it, so the gain is capped by the above-reference slope.
            prop_assert!(r1 <= r0 + p.w_buffer * p.above_penalty * extra + 1e-12);
        }
    }

    #[test]
    fn reward_ignores_complexity_directly(q in 0.0f64..1.0, b in 0.0f64..20.0, d in 0.01f64..10.0, c1 in 1usize..=5, c2 in 1usize..=5) {
        let p = RewardParams::default();
        let s1 = SystemState { q_prev: 0.9, beta_est: 3000.0, complexity: c1, buffer: b };
        let s2 = SystemState { complexity: c2, ..s1 };
        prop_assert_eq!(reward(q, &s1, d, 2.0, &p), reward(q, &s2, d, 2.0, &p));
    }

    #[test]
    fn below_reference_costs_four_times_above(delta in 0.0f64..6.0) {
        let p = RewardParams::default();
        // buffer + T - d_est = b0 ± delta with T = 2 and buffer = 8.
        let (_, below) = buffer_penalty(8.0, 2.0, 2.0 + delta, &p);
        let (_, above_full) = buffer_penalty(8.0 + delta, 2.0, 2.0, &p);
        prop_assert!((below - 4.0 * above_full).abs() < 1e-12);
    }

    #[test]
    fn metric_b_is_affine_in_mean_quality_without_events(level in 1usize..=5, n in 1usize..50) {
        let quality = QualityMap::default();
        let q = quality.quality_of(Level(level), 2).unwrap();
        let records = (0..n)
            .map(|i| StepRecord {
                episode: 0,
                segment: i as u64,
                method: MethodKind::PdController,
                level: Level(level),
                bitrate_kbps: 1000.0,
                ssim: q,
                reward: 0.0,
                buffer_s: 4.0,
                rebuffer_s: 0.0,
                beta_est_kbps: 1000.0,
                beta_real_kbps: 1000.0,
                download_s: 2.0,
                virtual_rewards: [None; 3],
            })
            .collect();
        let log = SessionLog { segment_duration: 2.0, startup_delay: 0.0, records };
        let b = qoe_metric_b(&log);
        prop_assert_eq!(b.freeze, 0.0);
        prop_assert_eq!(b.switching, 0.0);
        prop_assert!((b.value - (4.85 * b.q_norm + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_pure(log in log_strategy(), clamp: bool) {
        let p = MetricAParams { clamp_stall: clamp, ..MetricAParams::default() };
        prop_assert_eq!(qoe_metric_a(&log, p).to_bits(), qoe_metric_a(&log, p).to_bits());
        prop_assert_eq!(qoe_metric_b(&log), qoe_metric_b(&log));
    }

    // adapters

    #[test]
    fn pd_gain_relation_holds(k_d in 0.01f64..1.99, bump in 0.0f64..5.0) {
        let g0 = pd_compute_gains(2.0, k_d, None).unwrap();
        let g = pd_compute_gains(2.0, k_d, Some(g0.eta + bump)).unwrap();
        prop_assert_eq!(g.k_p, g.eta * (4.0 - k_d * k_d).sqrt());
    }

    #[test]
    fn pd_dead_band_holds_level(
        level in 1usize..=5, buffer in 6.0f64..=10.0, beta in 100.0f64..10_000.0, last_d in 0.1f64..10.0,
    ) {
        let ladder = QualityLadder::default();
        let cfg = PdConfig::default();
        let gains = pd_compute_gains(2.0, 1.0, None).unwrap();
        let client = ClientState {
            buffer,
            last_level: Some(Level(level)),
            last_bitrate: Some(ladder.bitrate(Level(level))),
            last_download: Some(last_d),
            segments: 3,
            ..ClientState::default()
        };
        let state = SystemState { q_prev: 0.9, beta_est: beta, complexity: 3, buffer };
        prop_assert_eq!(pd_decide(&client, &state, &cfg, &gains, 2.0, &ladder), Level(level));
    }

    #[test]
    fn q_update_is_a_no_op_at_the_fixed_point(
        r in -5.0f64..5.0, alpha in 0.0f64..=1.0, gamma in 0.0f64..1.0, next in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let mut t = QTable::new(5, 5, 20.0);
        let s = DiscreteState { q_idx: 2, beta_idx: 3, complexity: 4, buf_bin: 5 };
        let s2 = DiscreteState { q_idx: 4, beta_idx: 1, complexity: 2, buf_bin: 9 };
        for (i, v) in next.iter().enumerate() {
            t.set(&s2, Level(i + 1), *v);
        }
        let fixed = r + gamma * t.max_value(&s2);
        t.set(&s, Level(3), fixed);
        q_update(&mut t, &s, Level(3), r, &s2, alpha, gamma);
        prop_assert_eq!(t.get(&s, Level(3)), fixed);
    }

    #[test]
    fn greedy_is_shift_invariant(row in prop::collection::vec(-5i32..5, 5), shift in -100.0f64..100.0) {
        let s = DiscreteState { q_idx: 1, beta_idx: 1, complexity: 1, buf_bin: 0 };
        let mut a = QTable::new(5, 1, 1.0);
        let mut b = a.clone();
        for (i, v) in row.iter().enumerate() {
            a.set(&s, Level(i + 1), f64::from(*v) * 0.25);
            b.set(&s, Level(i + 1), f64::from(*v) * 0.25 + shift.round());
        }
        prop_assert_eq!(a.greedy(&s), b.greedy(&s));
    }

    #[test]
    fn virtual_buffer_stays_in_bounds(
        steps in prop::collection::vec((1usize..=5, 50.0f64..8000.0, 100.0f64..8000.0, 1usize..=5), 1..200),
        b_max in 2.0f64..30.0,
    ) {
        let ladder = QualityLadder::default();
        let quality = QualityMap::default();
        let params = RewardParams::default();
        let mut client = ClientState::default();
        for (level, bw, est, c) in steps {
            let env = StepEnv { ladder: &ladder, quality: &quality, params: &params, b_max, beta_est: est, complexity: c };
            let o = virtual_step(&mut client, Level(level), bw, &env).unwrap();
            prop_assert!(o.buffer_after >= 0.0 && o.buffer_after <= b_max);
            prop_assert!(o.rebuffer_s >= 0.0);
            let _ = discretize_state(
                &SystemState { q_prev: o.quality, beta_est: est, complexity: c, buffer: client.buffer },
                &ladder,
                &quality,
                b_max,
            );
        }
    }

    // controller

    #[test]
    fn selection_is_scale_invariant(
        rows in prop::collection::vec(prop::collection::vec(-8i32..8, 8), 3),
        scale in prop::sample::select(vec![0.5, 2.0, 4.0, 0.125]),
        incumbent in 0usize..3,
    ) {
        let base: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| f64::from(v) / 8.0).collect()).collect();
        let scaled: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let (h, hs) = (RewardHistories::from_rows(&base), RewardHistories::from_rows(&scaled));
        for w in [1, 2, 4, 8] {
            prop_assert_eq!(iams_select(&h, w, incumbent).unwrap(), iams_select(&hs, w, incumbent).unwrap());
            prop_assert_eq!(imms_select(&h, w, incumbent).unwrap(), imms_select(&hs, w, incumbent).unwrap());
        }
    }

    #[test]
    fn selection_ignores_rewards_older_than_the_window(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 3),
        older in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 3),
        incumbent in 0usize..3,
    ) {
        let longer: Vec<Vec<f64>> = older.iter().zip(&rows).map(|(o, r)| o.iter().chain(r).copied().collect()).collect();
        let (h, hl) = (RewardHistories::from_rows(&rows), RewardHistories::from_rows(&longer));
        for w in [1, 3, 6] {
            prop_assert_eq!(iams_select(&h, w, incumbent).unwrap(), iams_select(&hl, w, incumbent).unwrap());
            prop_assert_eq!(imms_select(&h, w, incumbent).unwrap(), imms_select(&hl, w, incumbent).unwrap());
        }
    }
}
