use proptest::prelude::*;
use selfex::env::radio;
use selfex::env::{MobileEnv, SimConfig};

fn actions_strategy() -> impl Strategy<Value = Vec<[usize; 3]>> {
    prop::collection::vec(prop::array::uniform3(0usize..4), 1..120)
}

fn run(seed: u64, actions: &[[usize; 3]]) -> Vec<(Vec<Vec<f64>>, Vec<f64>, bool)> {
    let mut env = MobileEnv::new(SimConfig::default()).unwrap();
    env.reset(seed);
    let mut out = Vec::new();
    for a in actions {
        if env.is_done() {
            env.reset(seed + 1);
        }
        let r = env.step(a).unwrap();
        out.push((r.observations.iter().map(|o| o.features()).collect(), r.rewards, r.done));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_deterministic(seed in any::<u64>(), actions in actions_strategy()) {
        prop_assert_eq!(run(seed, &actions), run(seed, &actions));
    }

    #[test]
    fn every_step_satisfies_the_domain(seed in any::<u64>(), actions in actions_strategy()) {
        let cfg = SimConfig::default();
        let mut env = MobileEnv::new(cfg.clone()).unwrap();
        let first = env.reset(seed);
        prop_assert!(first.iter().all(|o| o.is_valid(3) && o.features().len() == 13));
        for a in &actions {
            if env.is_done() {
                env.reset(seed ^ 1);
            }
            let r = env.step(a).unwrap();
            prop_assert_eq!(r.done, env.step_count() == cfg.episode_length);
            for (o, &rew) in r.observations.iter().zip(&r.rewards) {
                prop_assert!(o.is_valid(3));
                prop_assert!((-20.0..=20.0).contains(&rew));
                prop_assert!((o.ue_utility - rew / 20.0).abs() < 1e-15);
            }
            for ue in env.ues() {
                let h = ue.heading[0].hypot(ue.heading[1]);
                prop_assert!((h - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=cfg.width).contains(&ue.position[0]));
                prop_assert!((0.0..=cfg.height).contains(&ue.position[1]));
            }
        }
    }

    #[test]
    fn rates_follow_equal_sharing(seed in any::<u64>(), actions in actions_strategy()) {
        let cfg = SimConfig::default();
        let mut env = MobileEnv::new(cfg.clone()).unwrap();
        env.reset(seed);
        for a in actions.iter().take(99) {
            env.step(a).unwrap();
            let shares = env.bandwidth_shares();
            let load = env.load();
            for b in 0..3 {
                let total: f64 = shares.iter().map(|s| s[b]).sum();
                if load[b] > 0 {
                    prop_assert!((total - cfg.bandwidth_hz).abs() < 1e-6);
                } else {
                    prop_assert_eq!(total, 0.0);
                }
            }
            // Independent rate oracle: bandwidth / k · log2(1 + SNR_linear).
            let rates = env.rates();
            for (u, ue) in env.ues().iter().enumerate() {
                let mut expect = 0.0;
                for b in 0..3 {
                    if ue.connections[b] {
                        let d = ((ue.position[0] - cfg.bs_positions[b][0]).powi(2)
                            + (ue.position[1] - cfg.bs_positions[b][1]).powi(2)).sqrt().max(1.0) / 1000.0;
                        let f = cfg.carrier_mhz.log10();
                        let a_hm = (1.1 * f - 0.7) * cfg.ue_height_m - (1.56 * f - 0.8);
                        let pl = 69.55 + 26.16 * f - 13.82 * cfg.bs_height_m.log10() - a_hm
                            + (44.9 - 6.55 * cfg.bs_height_m.log10()) * d.log10();
                        let snr = cfg.tx_power_dbm - pl - cfg.noise_dbm;
                        expect += cfg.bandwidth_hz / load[b] as f64 * (1.0 + 10f64.powf(snr / 10.0)).log2();
                    }
                }
                prop_assert!((rates[u] - expect).abs() <= 1e-9 * expect.max(1.0));
            }
            let obs = env.observations();
            let scaled: Vec<f64> = env.utilities().iter().map(|u| u / 20.0).collect();
            for b in 0..3 {
                let members: Vec<f64> = env.ues().iter().zip(&scaled)
                    .filter(|(u, _)| u.connections[b]).map(|(_, s)| *s).collect();
                let expect = if members.is_empty() { 0.0 } else { members.iter().sum::<f64>() / members.len() as f64 };
                prop_assert!((obs[0].bs_utility[b] - expect).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn observed_snr_stays_open_unit() {
    let cfg = SimConfig::default();
    for d in [0.0, 0.5, 1.0, 10.0, 1e3, 1e5, 1e9] {
        let s = radio::snr_observed([0.0, 0.0], [d, 0.0], &cfg);
        assert!(s > 0.0 && s < 1.0, "{d} -> {s}");
    }
}
