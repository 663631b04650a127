use ofdma_sched::learner::LagrangePair;
use ofdma_sched::model::{ChannelSpec, SimConfig};
use ofdma_sched::oracle::*;

fn two_state(gamma: LagrangePair) -> (SimConfig, PowerGrid) {
    let mut c = SimConfig::tiny(1, 1, 1, 1);
    c.channel = ChannelSpec::Explicit {
        levels: vec![1.0],
        pmf: vec![1.0],
    };
    c.initial_multipliers.gamma_bar = gamma.gamma_bar;
    c.initial_multipliers.gamma_under = gamma.gamma_under;
    let p = c.power_budget(0);
    (c, PowerGrid::uniform(1, vec![0.0, p]))
}

#[test]
fn two_state_chain_matches_closed_form() {
    let gamma = LagrangePair::new(0.02, 0.5);
    let (c, grid) = two_state(gamma);
    let cmdp = build_cmdp(&c, &grid, &[gamma], Restriction::None).unwrap();
    assert_eq!(cmdp.num_states(), 2);
    let sol = relative_value_iteration(&cmdp).unwrap();

    let p = c.power_budget(0);
    let a0 = (-c.arrival_mean(0)).exp();
    let a1 = 1.0 - a0;
    let pd = c.users[0].drop_budget;
    let f1 = c.utility_cost(0, 1);
    let g0 = -gamma.gamma_bar * p - gamma.gamma_under * pd;
    // Q = 1 transmitting at P or idle
    let mu = (c.service_scale(0) * (1.0 + p).ln()).min(1.0);
    let g1_on = f1 + gamma.gamma_under * (1.0 - pd);
    let g1_off = f1 - gamma.gamma_bar * p + gamma.gamma_under * (1.0 - pd);
    let v_on = (g1_on - g0) / (a1 + mu * a0);
    let v_off = (g1_off - g0) / a1;
    let (theta, v1) = [(g0 + a1 * v_on, v_on), (g0 + a1 * v_off, v_off)]
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert!((sol.theta - theta).abs() < 1e-8, "{} vs {theta}", sol.theta);
    assert!(sol.vfunction[0].abs() < 1e-12);
    assert!((sol.vfunction[1] - v1).abs() < 1e-7, "{} vs {v1}", sol.vfunction[1]);
}

#[test]
fn two_state_kernel_entries_by_hand() {
    let gamma = LagrangePair::new(0.02, 0.5);
    let (c, grid) = two_state(gamma);
    let cmdp = build_cmdp(&c, &grid, &[gamma], Restriction::None).unwrap();
    let a0 = (-c.arrival_mean(0)).exp();
    let mu = (c.service_scale(0) * (1.0 + c.power_budget(0)).ln()).min(1.0);
    // state 1 is Q = 1; action 1 transmits at P
    let row = cmdp.kernel_row(1, 1);
    assert!((row[0] - mu * a0).abs() < 1e-15);
    assert!((row[1] - (1.0 - mu * a0)).abs() < 1e-15);
    let row = cmdp.kernel_row(0, 1);
    assert!((row[0] - a0).abs() < 1e-15);
}

#[test]
fn kernel_rows_are_stochastic() {
    let c = SimConfig::tiny(2, 1, 2, 2);
    let grid = PowerGrid::geometric(&c);
    let cmdp = build_cmdp(&c, &grid, &[LagrangePair::new(0.1, 0.0); 2], Restriction::None).unwrap();
    for s in 0..cmdp.num_states() {
        for j in 0..cmdp.admissible(s).len() {
            let sum: f64 = cmdp.kernel_row(s, j).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn zero_arrivals_zero_power_is_static() {
    let mut c = SimConfig::tiny(2, 1, 2, 2);
    for u in &mut c.users {
        u.arrival_rate = 0.0;
    }
    let grid = PowerGrid::uniform(2, vec![0.0]);
    let gamma = [LagrangePair::new(0.3, 2.0), LagrangePair::new(0.1, 1.0)];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::None).unwrap();
    for s in 0..cmdp.num_states() {
        let (_, q) = cmdp.split_state(s);
        let row = cmdp.kernel_row(s, 0);
        let stay: f64 = (0..cmdp.num_channel_states()).map(|h| row[cmdp.state_index(h, q)]).sum();
        assert!((stay - 1.0).abs() < 1e-12);
    }
    let sol = relative_value_iteration(&cmdp).unwrap();
    assert_eq!(sol.reachable.iter().filter(|&&r| r).count(), cmdp.num_channel_states());
    let d = c.users[0].drop_budget;
    let expect = -(0.3 * c.power_budget(0) + 2.0 * d) - (0.1 * c.power_budget(1) + 1.0 * d);
    assert!((sol.theta - expect).abs() < 1e-9);
    // recurrent states are those with empty queues: a single class per Q
    for h in 0..cmdp.num_channel_states() {
        assert!(sol.vfunction[cmdp.state_index(h, 0)].abs() < 1e-9);
    }
}

#[test]
fn value_is_min_over_assignments_and_gauge_is_free() {
    let c = SimConfig::tiny(2, 1, 2, 2);
    let grid = PowerGrid::geometric(&c);
    let gamma = [LagrangePair::new(0.1, 0.5); 2];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::None).unwrap();
    let sol = relative_value_iteration(&cmdp).unwrap();
    for s in 0..cmdp.num_states() {
        let m = (0..sol.assignments).map(|a| sol.q(s, a)).fold(f64::INFINITY, f64::min);
        assert_eq!(m, sol.vfunction[s]);
    }
    let r = bellman_span_residual(&cmdp, &sol);
    assert!(r <= 1e-8, "residual {r:e} after {} sweeps", sol.sweeps);
    let shifted: Vec<f64> = sol.vfunction.iter().map(|v| v + 17.5).collect();
    // a shift can only change which of several tied actions is picked
    let rates: Vec<f64> = c.users.iter().map(|u| u.arrival_rate).collect();
    let lagrangian = |v: &[f64]| {
        let m = evaluate_policy(&cmdp, &Policy::deterministic(greedy_policy(&cmdp, v)), &rates).unwrap();
        (0..2)
            .map(|k| {
                m.avg_utility[k]
                    + gamma[k].gamma_bar * (m.avg_power[k] - c.power_budget(k))
                    + gamma[k].gamma_under * (m.drop_rate[k] - c.users[k].drop_budget)
            })
            .sum::<f64>()
    };
    assert!((lagrangian(&shifted) - sol.theta).abs() < 1e-8);
    assert!((lagrangian(&sol.vfunction) - sol.theta).abs() < 1e-8);
    let warm = relative_value_iteration_with(&cmdp, RviOptions::default(), Some(&shifted)).unwrap();
    assert!((warm.theta - sol.theta).abs() < 1e-8);
}

#[test]
fn size_guard_rejects_large_instances() {
    let c = SimConfig::tiny(3, 3, 4, 4);
    let grid = PowerGrid::geometric(&c);
    let r = build_cmdp(&c, &grid, &[LagrangePair::zero(); 3], Restriction::None);
    assert!(matches!(r, Err(ofdma_sched::Error::TooLarge(_))));
}

/// The same policy with the two users' roles exchanged.
fn swapped(cmdp: &EnumeratedCmdp, policy: &[usize]) -> Vec<usize> {
    let swap_state = |s: usize| {
        let (h, q) = cmdp.split_state(s);
        let mut hm = cmdp.channel_levels(h);
        let tmp: Vec<usize> = hm.row(0).to_vec();
        let other: Vec<usize> = hm.row(1).to_vec();
        hm.row_mut(0).copy_from_slice(&other);
        hm.row_mut(1).copy_from_slice(&tmp);
        let mut ql = cmdp.queue_levels(q);
        ql.swap(0, 1);
        cmdp.state_index(cmdp.channel_index(&hm), cmdp.queue_index(&ql))
    };
    (0..cmdp.num_states())
        .map(|s| {
            let act = &cmdp.actions()[policy[swap_state(s)]];
            let flipped = Action {
                winners: act.winners.iter().map(|&k| 1 - k).collect(),
                grid: act.grid.clone(),
            };
            cmdp.actions().iter().position(|a| *a == flipped).unwrap()
        })
        .collect()
}

#[test]
fn symmetric_users_get_symmetric_metrics() {
    let c = SimConfig::tiny(2, 1, 2, 2);
    let grid = PowerGrid::geometric(&c);
    let gamma = [LagrangePair::new(0.1, 0.5); 2];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::None).unwrap();
    let sol = relative_value_iteration(&cmdp).unwrap();
    let rates: Vec<f64> = c.users.iter().map(|u| u.arrival_rate).collect();
    let alt = swapped(&cmdp, &sol.policy);
    let m = evaluate_policy(&cmdp, &Policy::mixed(sol.policy.clone(), alt, 0.5), &rates).unwrap();
    for (a, b) in [
        (&m.avg_queue, "queue"),
        (&m.avg_power, "power"),
        (&m.drop_rate, "drop"),
    ]
    .map(|(v, n)| ((v[0], v[1]), n))
    {
        assert!((a.0 - a.1).abs() < 1e-10, "{b}: {} vs {}", a.0, a.1);
    }
    let total: f64 = m.queue_distribution.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn zero_arrivals_give_zero_delay_and_drop() {
    let mut c = SimConfig::tiny(1, 1, 2, 2);
    c.users[0].arrival_rate = 0.0;
    let grid = PowerGrid::geometric(&c);
    let gamma = [LagrangePair::new(0.1, 0.0)];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::None).unwrap();
    let sol = relative_value_iteration(&cmdp).unwrap();
    let m = evaluate_policy(&cmdp, &Policy::deterministic(sol.policy), &[0.0]).unwrap();
    assert!(m.avg_queue[0].abs() < 1e-12);
    assert!(m.drop_rate[0].abs() < 1e-12);
    assert!(m.avg_power[0].abs() < 1e-12);
}

#[test]
fn idle_policy_with_zero_arrivals_is_reducible() {
    let mut c = SimConfig::tiny(1, 1, 2, 2);
    c.users[0].arrival_rate = 0.0;
    let grid = PowerGrid::uniform(1, vec![0.0]);
    let cmdp = build_cmdp(&c, &grid, &[LagrangePair::zero()], Restriction::None).unwrap();
    let pol = Policy::deterministic(vec![0; cmdp.num_states()]);
    assert!(matches!(
        evaluate_policy(&cmdp, &pol, &[0.0]),
        Err(ofdma_sched::Error::Reducible(3))
    ));
}

#[test]
fn best_csi_values_decompose_per_user() {
    let c = SimConfig::tiny(2, 2, 2, 2);
    let grid = PowerGrid::geometric(&c);
    let gamma = [LagrangePair::new(0.08, 0.4), LagrangePair::new(0.12, 0.2)];
    let cmdp = build_cmdp(&c, &grid, &gamma, Restriction::BestCsi).unwrap();
    let sol = relative_value_iteration(&cmdp).unwrap();
    let vt = channel_average(&cmdp, &sol.vfunction);
    let parts: Vec<PerUserValues> = (0..2)
        .map(|k| per_user_best_csi(&c, &grid, gamma[k], k, RviOptions::default()).unwrap())
        .collect();
    assert!((sol.theta - parts.iter().map(|p| p.theta).sum::<f64>()).abs() < 1e-7);
    let mut worst: f64 = 0.0;
    for q in 0..cmdp.num_queue_states() {
        let ql = cmdp.queue_levels(q);
        let sum: f64 = (0..2).map(|k| parts[k].w[ql[k]]).sum();
        worst = worst.max(((vt[q] - vt[0]) - sum).abs());
    }
    assert!(worst <= 1e-6, "max deviation {worst}");
}

#[test]
fn dual_ascent_huge_budget_leaves_power_free() {
    let mut c = SimConfig::tiny(1, 1, 2, 2);
    c.users[0].power_budget = 1e6;
    c.users[0].drop_budget = 1.0;
    let grid = PowerGrid::uniform(1, vec![0.0, 1.0, 4.0, 16.0]);
    let d = dual_ascent(&c, &grid, DualOptions::default()).unwrap();
    assert!(d.converged);
    assert_eq!(d.gamma_star[0].gamma_bar, 0.0);
    assert_eq!(d.gamma_star[0].gamma_under, 0.0);
    assert!(d.metrics.avg_power[0] < c.power_budget(0));
}

#[test]
fn dual_ascent_meets_an_active_power_budget() {
    let mut c = SimConfig::tiny(1, 1, 2, 2);
    c.users[0].drop_budget = 1.0;
    // a budget well below what the delay-optimal policy would spend
    c.users[0].power_budget = 0.2;
    let grid = PowerGrid::uniform(1, vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    let d = dual_ascent(&c, &grid, DualOptions::default()).unwrap();
    assert!(d.gamma_star[0].gamma_bar > 0.0);
    let p = c.power_budget(0);
    let achieved = match &d.randomized {
        Some((_, m)) => m.avg_power[0],
        None => d.metrics.avg_power[0],
    };
    assert!(d.converged);
    assert!((achieved - p).abs() <= 1e-3 * p, "{achieved} vs {p}");
}
