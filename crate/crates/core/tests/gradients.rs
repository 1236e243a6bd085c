use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_rank::data::Role;
use robust_rank::loss::{total_loss, Divergence, GroupPrediction, LossConfig};
use robust_rank::ranker::{init_params, LinearHead, RankingHead};

const STEP: f64 = 1e-5;
const KINK: f64 = 1e-3;

struct Case {
    head: RankingHead,
    labels: Vec<usize>,
    // [group][role position] -> embedding
    inputs: Vec<Vec<Vec<f64>>>,
    roles: Vec<Role>,
    cfg: LossConfig,
}

fn loss_and_grad(head: &RankingHead, case: &Case) -> (f64, RankingHead, bool) {
    let mut traces = Vec::new();
    for g in &case.inputs {
        for (e, &role) in g.iter().zip(&case.roles) {
            traces.push(head.forward(e, role).unwrap());
        }
    }
    let k = case.roles.len();
    let groups: Vec<GroupPrediction> = case
        .labels
        .iter()
        .enumerate()
        .map(|(gi, &label)| GroupPrediction {
            label,
            preds: (0..k).map(|j| (case.roles[j], traces[gi * k + j].probs.as_slice())).collect(),
        })
        .collect();
    let (b, grads) = total_loss(&groups, &case.roles, &case.cfg).unwrap();
    let flat: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
    let grad = head.backward(&traces, &flat).unwrap();
    let near_kink = traces.iter().any(|t| {
        let pre_close = t.experts.as_ref().is_some_and(|ex| {
            ex.agent.pre.iter().chain(&ex.shared.pre).any(|x| x.abs() < KINK)
        });
        let clamp_close = t.probs.iter().any(|&p| p < 10.0 * case.cfg.epsilon || p > 1.0 - 10.0 * case.cfg.epsilon);
        pre_close || clamp_close
    });
    (b.total, grad, near_kink)
}

fn loss_only(head: &RankingHead, case: &Case) -> f64 {
    loss_and_grad(head, case).0
}

/// Largest relative error between the analytic and central-difference
/// gradient over every parameter.
fn max_rel_error(case: &Case) -> f64 {
    let (_, analytic, _) = loss_and_grad(&case.head, case);
    let analytic: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = case.head.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let shapes: Vec<usize> = case.head.tensors().iter().map(|t| t.len()).collect();
    for (ti, len) in shapes.into_iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + STEP;
            let up = loss_only(&probe, case);
            probe.tensors_mut()[ti][i] = orig - STEP;
            let down = loss_only(&probe, case);
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    worst
}

fn random_case(rng: &mut ChaCha8Rng, d: usize, levels: usize, linear: bool) -> Case {
    let mut head = if linear {
        RankingHead::Linear(LinearHead::init(d, levels, rng.random()).unwrap())
    } else {
        RankingHead::Mmoe(init_params(d, d / 2, levels, rng.random()).unwrap())
    };
    // Non-zero biases so their gradients are exercised too.
    for t in head.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.random_range(-0.6..0.6);
        }
    }
    let roles = Role::ALL.to_vec();
    let n_groups = rng.random_range(1..=3);
    let inputs = (0..n_groups)
        .map(|_| {
            (0..roles.len()).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        })
        .collect();
    let labels = (0..n_groups).map(|_| rng.random_range(0..levels)).collect();
    let cfg = LossConfig {
        alpha: rng.random_range(0.0..30.0),
        include_original_in_robust: rng.random(),
        include_original_in_accuracy: rng.random(),
        divergence: if rng.random() { Divergence::SymmetrizedKl } else { Divergence::MixtureJs },
        ..LossConfig::default()
    };
    Case { head, labels, inputs, roles, cfg }
}

fn sweep(linear: bool, configs: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut resampled = 0;
    let mut done = 0;
    while done < configs {
        let d = [6, 8, 16][done % 3];
        let levels = [3, 5][(done / 3) % 2];
        let case = random_case(&mut rng, d, levels, linear);
        if loss_and_grad(&case.head, &case).2 {
            resampled += 1;
            continue;
        }
        worst = worst.max(max_rel_error(&case));
        done += 1;
    }
    (worst, resampled)
}

#[test]
fn mmoe_head_and_total_loss_match_finite_differences() {
    let (worst, resampled) = sweep(false, 120, 11);
    assert!(worst < 1e-4, "max relative error {worst:e}");
    assert!(resampled < 1000);
}

#[test]
fn linear_head_and_total_loss_match_finite_differences() {
    let (worst, _) = sweep(true, 60, 12);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn zero_alpha_gradient_equals_accuracy_only_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut case = random_case(&mut rng, 8, 5, false);
    case.cfg.alpha = 0.0;
    let (_, with_zero_alpha, _) = loss_and_grad(&case.head, &case);
    // Dropping the robustness term must not change anything when α = 0.
    case.cfg.divergence = Divergence::MixtureJs;
    let (_, other_divergence, _) = loss_and_grad(&case.head, &case);
    assert_eq!(with_zero_alpha, other_divergence);
}

#[test]
fn role_examples_only_touch_their_own_adapter_and_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let case = random_case(&mut rng, 6, 3, false);
    let RankingHead::Mmoe(p) = &case.head else { unreachable!() };
    let head = RankingHead::Mmoe(p.clone());
    let trace = head.forward(&case.inputs[0][2], Role::Man).unwrap();
    let RankingHead::Mmoe(g) = head.backward(&[trace], &[vec![1.0, -0.5, 0.2]]).unwrap() else { unreachable!() };
    for role in Role::ALL {
        let touched = g.agents[role.index()].w_down.data.iter().any(|x| *x != 0.0)
            || g.gates[role.index()].w.data.iter().any(|x| *x != 0.0);
        assert_eq!(touched, role == Role::Man, "{role:?}");
    }
}
