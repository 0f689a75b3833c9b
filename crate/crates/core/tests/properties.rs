//! Property tests over the geometric and reward invariants.

use crowdnav::env::{action_set, Action, CrowdSim, EnvConfig, PolicyMode};
use crowdnav::orca::{compute_orca_lines, orca_policy_step, solve_velocity, Disc, OrcaLine, OrcaParams};
use crowdnav::vec2::Vec2;
use proptest::prelude::*;

fn arb_unit() -> impl Strategy<Value = Vec2> {
    (0.0..std::f64::consts::TAU).prop_map(|a| Vec2::new(a.cos(), a.sin()))
}

fn arb_line() -> impl Strategy<Value = OrcaLine> {
    (arb_unit(), arb_unit(), 0.0..0.9f64)
        .prop_map(|(dir, pd, r)| OrcaLine {
            point: pd * r,
            direction: dir,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The solver output always respects the speed cap, and whenever the
    /// preference itself is feasible it is returned unchanged.
    #[test]
    fn lp_respects_speed_and_keeps_feasible_preference(
        lines in prop::collection::vec(arb_line(), 0..6),
        pref in (arb_unit(), 0.0..1.5f64).prop_map(|(d, s)| d * s),
    ) {
        let v = solve_velocity(&lines, pref, 1.0);
        prop_assert!(v.norm() <= 1.0 + 1e-9);
        let pref_clamped = pref.clamp_norm(1.0);
        if lines.iter().all(|l| l.permits(pref_clamped)) {
            prop_assert!((v - pref_clamped).norm() < 1e-9);
        }
    }

    /// Pairwise constraints are reciprocal: the two agents' half-planes
    /// split one correction, so the midpoint relative velocity lands on the
    /// constraint boundary of both.
    #[test]
    fn orca_lines_are_reciprocal(
        dx in 0.8..6.0f64,
        dy in -3.0..3.0f64,
        vax in -1.0..1.0f64,
        vay in -1.0..1.0f64,
        vbx in -1.0..1.0f64,
        vby in -1.0..1.0f64,
    ) {
        let a = Disc {
            position: Vec2::default(),
            velocity: Vec2::new(vax, vay),
            radius: 0.3,
            pref_velocity: Vec2::default(),
            max_speed: 1.0,
        };
        let b = Disc {
            position: Vec2::new(dx, dy),
            velocity: Vec2::new(vbx, vby),
            radius: 0.3,
            pref_velocity: Vec2::default(),
            max_speed: 1.0,
        };
        prop_assume!((b.position - a.position).norm() > 0.61);
        let la = compute_orca_lines(&a, &[b], 5.0, 0.25)[0];
        let lb = compute_orca_lines(&b, &[a], 5.0, 0.25)[0];
        // Each line passes through own_velocity + u/2 for the same u (with
        // opposite signs), so the points mirror around the velocity pair.
        let ua = (la.point - a.velocity) * 2.0;
        let ub = (lb.point - b.velocity) * 2.0;
        prop_assert!((ua + ub).norm() < 1e-9, "u_a = {ua:?}, u_b = {ub:?}");
    }

    /// Stepping the crowd policy never exceeds any agent's speed cap.
    #[test]
    fn crowd_step_respects_speed_caps(seed in 0u64..500) {
        let cfg = EnvConfig { n: 6, ..EnvConfig::default() };
        let (_, peds) = crowdnav::env::generate_scenario(&cfg, seed).unwrap();
        let agents: Vec<Disc> = peds
            .iter()
            .map(|p| Disc {
                position: p.position,
                velocity: p.velocity,
                radius: p.radius,
                pref_velocity: (p.goal - p.position).normalized_or(Vec2::default()),
                max_speed: 1.0,
            })
            .collect();
        for v in orca_policy_step(&agents, 0.25, &OrcaParams::default()) {
            prop_assert!(v.norm() <= 1.0 + 1e-9);
        }
    }

    /// Every step's reward decomposes exactly and stays inside the bounds
    /// implied by the reward constants.
    #[test]
    fn step_rewards_decompose_and_stay_bounded(
        seed in 0u64..200,
        actions in prop::collection::vec((0u8..17u8), 1..40),
    ) {
        let cfg = EnvConfig { n: 4, ..EnvConfig::default() };
        let set = action_set(PolicyMode::L2b);
        let mut sim = CrowdSim::new(cfg, seed).unwrap();
        for a in actions {
            let out = sim.step(set[a as usize]).unwrap();
            prop_assert_eq!(out.reward, out.reward_env + out.reward_social);
            prop_assert!(out.reward >= -0.45 - 1e-12);
            prop_assert!(out.reward <= 1.0 + 1e-12);
            if out.terminal.is_over() {
                break;
            }
        }
    }
}

/// With no beep actions ever taken, dynamics are independent of beta: the
/// 9-action restriction reproduces a no-beep build exactly.
#[test]
fn sarl_actions_make_dynamics_independent_of_beta() {
    let run = |beta: f64| {
        let cfg = EnvConfig {
            n: 4,
            beta,
            ..EnvConfig::default()
        };
        let mut sim = CrowdSim::new(cfg, 99).unwrap();
        let mut history = Vec::new();
        for k in 0..50u8 {
            let action = Action::new(k % 8, false).unwrap();
            let out = sim.step(action).unwrap();
            history.push((
                out.next_state.robot.position,
                out.next_state.pedestrians.clone(),
                out.reward.to_bits(),
            ));
            if out.terminal.is_over() {
                break;
            }
        }
        history
    };
    assert_eq!(run(0.2), run(1000.0));
}
