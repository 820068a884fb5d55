use masgame::attack::AttackModel;
use masgame::game::{compare_anticipation, Event, GameTrace};
use masgame::scenario::{equilibrium_report, fixture, ScenarioConfig, Snapshot};
use masgame::sdp::Player;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(name: &str) -> ScenarioConfig {
    fixture(name).unwrap()
}

/// The run ended at a fixed point, and the λ₂ sequence continued by that
/// fixed point varies by less than 1e-6 over its last 10 steps.
fn settled(trace: &GameTrace) -> bool {
    let n = trace.steps.len();
    let fixed = trace.steps[n - 2..].windows(2).all(|s| s[0].positions == s[1].positions);
    let mut w = trace.worst_lambda2_series();
    w.extend(std::iter::repeat_n(trace.last().worst_lambda2, 10));
    let tail = &w[w.len() - 10..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    fixed && hi - lo < 1e-6
}

fn monotone(trace: &GameTrace) -> bool {
    trace.worst_lambda2_series().windows(2).all(|w| w[1] >= w[0] - 1e-9)
}

#[test]
fn identical_inputs_give_identical_traces() {
    let mut c = cfg("base_case");
    c.engine.max_steps = 15;
    assert_eq!(c.run(None).unwrap(), c.run(None).unwrap());

    let s = cfg("spoof_early");
    let plan = s.spoofing_plan().unwrap().unwrap();
    assert_eq!(plan, s.spoofing_plan().unwrap().unwrap());
}

#[test]
fn shipped_fixtures_rise_monotonically_and_settle() {
    for name in ["base_case", "alt_start"] {
        let c = cfg(name);
        let t = c.run(None).unwrap();
        assert!(monotone(&t), "{name}");
        assert!(t.converged && t.steps_used < c.engine.max_steps, "{name}");
        assert!(settled(&t), "{name}");
    }
    let c = cfg("low_range_naive_vs_secure");
    let cmp = compare_anticipation(
        &c.agents(),
        &c.engine_params(),
        &c.player_params(Player::P1),
        &c.player_params(Player::P2),
        &c.weights,
        &c.attack_model(),
    )
    .unwrap();
    assert!(monotone(&cmp.anticipating) && cmp.anticipating.converged && settled(&cmp.anticipating));
    assert!(cmp.naive.converged && settled(&cmp.naive));
    assert!(cmp.lambda2_anticipating >= cmp.lambda2_naive);
}

#[test]
fn equilibrium_verdict_ignores_common_translation() {
    let c = cfg("base_case");
    let t = c.run(None).unwrap();
    let snap = Snapshot::from_trace(&t, t.steps_used).unwrap();
    let verdict = equilibrium_report(&c, &snap.agents).unwrap();
    assert!(verdict.holds);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let shift = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0];
        let r = equilibrium_report(&c, &snap.translated(shift).agents).unwrap();
        assert_eq!(r.holds, verdict.holds);
        assert!((r.worst_lambda2 - verdict.worst_lambda2).abs() < 1e-9);
        assert_eq!(r.attack.removed, verdict.attack.removed);
    }
}

#[test]
fn early_snapshot_is_not_an_equilibrium() {
    let mut c = cfg("base_case");
    c.engine.max_steps = 5;
    let t = c.run(None).unwrap();
    let snap = Snapshot::from_trace(&t, 5).unwrap();
    let r = equilibrium_report(&c, &snap.agents).unwrap();
    assert!(!r.holds);
    assert!(r.improvement_p1.max(r.improvement_p2) > 1e-4);
    assert!(r.attack_is_best_response);
}

#[test]
fn without_a_budget_both_arms_agree() {
    let mut c = cfg("alt_start");
    c.engine.max_steps = 30;
    let model = AttackModel { budget_psi: 0, ..c.attack_model() };
    let cmp = compare_anticipation(
        &c.agents(),
        &c.engine_params(),
        &c.player_params(Player::P1),
        &c.player_params(Player::P2),
        &c.weights,
        &model,
    )
    .unwrap();
    assert_eq!(cmp.anticipating.steps, cmp.naive.steps);
    assert_eq!(cmp.lambda2_anticipating, cmp.lambda2_naive);
}

#[test]
fn spoof_window_freezes_then_reboots_the_target() {
    let c = cfg("spoof_at_equilibrium");
    let plan = c.spoofing_plan().unwrap().unwrap();
    let t = c.run(Some(&plan)).unwrap();
    let idx = t.ids.iter().position(|&id| id == plan.target).unwrap();
    let before = t.steps[plan.start_step - 1].positions[idx];
    for k in plan.start_step..=plan.end_step() {
        assert!(t.steps[k].spoofed);
        // Operators do not move the target; only the disturbance does.
        let expected = t.steps[k - 1].positions[idx] + plan.disturbances[k - plan.start_step];
        assert!((t.steps[k].positions[idx] - expected).norm() < 1e-12);
    }
    assert!(t.events.contains(&Event::SpoofStart { step: plan.start_step, target: plan.target }));
    assert!(t.events.contains(&Event::Reboot { step: plan.end_step() + 1, target: plan.target }));
    assert!(t.steps_used > plan.end_step() + 1);
    assert!(!t.steps[plan.end_step() + 1].spoofed);
    // The reboot happens before the operators move in that step.
    let after = t.steps[plan.end_step() + 1].positions[idx];
    assert!((after - before).norm() <= c.players.p2.d_max + 1e-9);
}
