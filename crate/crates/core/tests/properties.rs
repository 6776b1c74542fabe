use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Rotation3};
use ndarray::Array2;
use proptest::prelude::*;
use ran_core::control::{norm, pd_step, servo_to, sub, ControllerGains, PointEffector, Plant};
use ran_core::corpus::{
    decode_actions, encode_actions, generate_corpus, split_corpus, ActionKind, Corpus, Slots, SplitRatios, SubAction,
    TaskKind, TemplateConfig, Vocab,
};
use ran_core::datrn::{
    demos, fit, ridge_solve, rollout, AxisWeights, DatrnConfig, InputSignal, Normalization, RbfTrajectoryModel,
    Trajectory,
};
use ran_core::embed::{embed_text, tile_embedding};
use ran_core::executor::{suite_trial, Event, Executor, EpisodeConfig, SUITE_TASKS};
use ran_core::seqmodel::predict::{ground, Lexicon};
use ran_core::seqmodel::{forward, loss, ModelDims, SequenceModel};
use ran_core::vision::{
    analyze_scene, back_project, locate, project, resolve_missing, CameraIntrinsics, RigidTransform, Scene,
    SceneObject, ScriptedPrompter,
};

fn kinds() -> impl Strategy<Value = Vec<ActionKind>> {
    proptest::collection::vec(proptest::sample::select(&ActionKind::ALL[..11]), 0..=12)
}

fn small_corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| generate_corpus(&TemplateConfig::default(), 300, 9).unwrap())
}

fn executor() -> &'static Executor {
    static E: OnceLock<Executor> = OnceLock::new();
    E.get_or_init(|| Executor::new(EpisodeConfig::default()).unwrap())
}

fn truth_plan(task: TaskKind, instruction: &str) -> Vec<SubAction> {
    ground(task.pattern(), instruction, &Lexicon::from_templates(&TemplateConfig::default()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trip(ks in kinds()) {
        let vocab = Vocab::default();
        let plan: Vec<SubAction> = ks.iter().map(|k| SubAction::bare(*k)).collect();
        let onehot = encode_actions(&plan, 12, &vocab).unwrap();
        let back = decode_actions(onehot.matrix.view(), &vocab, &Slots::default()).unwrap();
        let got: Vec<ActionKind> = back.iter().map(|a| a.kind).collect();
        prop_assert_eq!(got, ks);
    }

    #[test]
    fn splits_partition_the_corpus(a in 0.05f64..1.0, b in 0.0f64..1.0, c in 0.05f64..1.0, seed in 0u64..50) {
        let total = a + b + c;
        let corpus = small_corpus();
        let (tr, va, te) = split_corpus(corpus, SplitRatios::new(a / total, b / total, 1.0 - a / total - b / total).unwrap(), seed).unwrap();
        prop_assert_eq!(tr.len() + va.len() + te.len(), corpus.len());
        let mut seen: Vec<&str> = tr.examples.iter().chain(&va.examples).chain(&te.examples).map(|e| e.instruction.as_str()).collect();
        let mut all: Vec<&str> = corpus.examples.iter().map(|e| e.instruction.as_str()).collect();
        seen.sort();
        all.sort();
        prop_assert_eq!(seen, all);
        let held_out: Vec<&str> = te.examples.iter().map(|e| e.template.as_str()).collect();
        prop_assert!(tr.examples.iter().chain(&va.examples).all(|e| !held_out.contains(&e.template.as_str())));
    }

    #[test]
    fn embedding_is_pure_and_unit(text in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
        let a = embed_text(&text, 64).unwrap();
        let b = embed_text(&text, 64).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rows_are_distributions(seed in 0u64..1000, text in "[a-z]{1,8}( [a-z]{1,8}){0,4}") {
        let dims = ModelDims::tiny();
        let model = SequenceModel::new(dims, seed).unwrap();
        let r = tile_embedding(&embed_text(&text, dims.input).unwrap(), dims.seq_len);
        let out = forward(&model, &r).unwrap();
        for row in out.probs.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        prop_assert_eq!(out.bottleneck.dim(), (dims.seq_len, dims.bottleneck_width()));
        prop_assert_eq!(out.bottleneck.dim(), out.reconstruction.dim());
        let mut labels = Array2::zeros((dims.seq_len, dims.classes));
        for t in 0..dims.seq_len {
            labels[(t, (seed as usize + t) % dims.classes)] = 1.0;
        }
        let l = loss(out.probs.view(), labels.view(), out.bottleneck.view(), out.reconstruction.view(), 0.1);
        prop_assert!(l > 0.0 && l.is_finite());
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda(seed in 0u64..1000, l1 in 1e-6f64..1.0, k in 1.0f64..100.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phi = DMatrix::from_fn(40, 8, |_, _| rng.random_range(-1.0..1.0));
        let t = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let w1 = ridge_solve(&phi, &t, l1).unwrap().norm();
        let w2 = ridge_solve(&phi, &t, l1 * k).unwrap().norm();
        prop_assert!(w2 <= w1 * (1.0 + 1e-12));
    }

    #[test]
    fn zero_weight_asymptote_increases_with_goal(g1 in -2.0f64..2.0, gap in 1e-3f64..2.0) {
        let model = RbfTrajectoryModel {
            centers1: vec![0.0],
            centers2: vec![0.0],
            sigma: 1.0,
            weights: std::array::from_fn(|_| AxisWeights { w1: vec![0.0], w2: vec![0.0] }),
            goal: [0.0; 3],
            dt: 0.01,
            ridge_lambda: 0.0,
            input: InputSignal::Zero,
            duration: 1.0,
            normalization: Normalization { mean: [0.0; 3], range: [1.0; 3] },
        };
        let end = |g: f64| rollout(&model, [0.0; 3], [g; 3], 3000).unwrap().last()[0];
        prop_assert!(end(g1 + gap) > end(g1));
    }

    #[test]
    fn pure_proportional_error_contracts(kp in 0.1f64..10.0, target in proptest::array::uniform3(-1.0f64..1.0)) {
        let gains = ControllerGains { kp, kd: 0.0, dt: 0.05, max_speed: None, ..ControllerGains::default() };
        prop_assume!(kp * gains.dt < 1.0 && norm(target) > 1e-3);
        let mut p = PointEffector { position: [0.0; 3] };
        let mut prev = norm(target);
        let mut last_e = sub(target, p.position);
        for _ in 0..50 {
            let (v, e) = pd_step(&gains, p.position, target, last_e);
            p.advance(v, gains.dt);
            last_e = e;
            let now = norm(sub(target, p.position));
            prop_assert!(now < prev || now == 0.0);
            prev = now;
        }
    }

    #[test]
    fn servo_convergence_means_inside_epsilon(
        kp in 0.5f64..10.0,
        kd in 0.0f64..0.3,
        eps in 1e-4f64..1e-2,
        target in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        let gains = ControllerGains { kp, kd, epsilon: eps, max_steps: 400, ..ControllerGains::default() };
        let mut p = PointEffector { position: [0.0; 3] };
        let r = servo_to(&gains, &mut p, target);
        if r.converged {
            prop_assert!(norm(sub(r.final_pose, target)) < eps);
        }
    }

    #[test]
    fn pd_velocity_is_linear_in_target_shift(
        p in proptest::array::uniform3(-1.0f64..1.0),
        q in proptest::array::uniform3(-1.0f64..1.0),
        e in proptest::array::uniform3(-1.0f64..1.0),
        d in proptest::array::uniform3(-1.0f64..1.0),
        s in -3.0f64..3.0,
    ) {
        let g = ControllerGains { max_speed: None, ..ControllerGains::default() };
        let shifted = |k: f64| std::array::from_fn::<f64, 3, _>(|a| q[a] + k * d[a]);
        let base = pd_step(&g, p, q, e).0;
        let one = pd_step(&g, p, shifted(1.0), e).0;
        let many = pd_step(&g, p, shifted(s), e).0;
        for a in 0..3 {
            prop_assert!(((many[a] - base[a]) - s * (one[a] - base[a])).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_inverts_back_projection(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.05f64..5.0) {
        let intr = CameraIntrinsics::default();
        let p = back_project(u, v, d, &intr).unwrap();
        let (u2, v2, d2) = project(p, &intr).unwrap();
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (d - d2).abs() < 1e-9);
    }

    #[test]
    fn transform_inverse_round_trip(
        angles in proptest::array::uniform3(-3.1f64..3.1),
        t in proptest::array::uniform3(-2.0f64..2.0),
        p in proptest::array::uniform3(-2.0f64..2.0),
    ) {
        let rot = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).into_inner();
        let tf = RigidTransform::from_parts(rot, t).unwrap();
        let back = tf.inverse().apply(tf.apply(p));
        for a in 0..3 {
            prop_assert!((back[a] - p[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn detections_locate_stored_pose(x in 0.05f64..0.75, y in -0.45f64..0.45, z in 0.0f64..0.5) {
        let scene = Scene::new(vec![SceneObject::item("cup", [x, y, z])]).unwrap();
        let det = analyze_scene(&scene, "cup", 0.5).unwrap();
        let got = locate(&scene, &det);
        prop_assert!(norm(sub(got, [x, y, z])) < 1e-9);
    }

    #[test]
    fn resolution_leaves_grounded_plans_alone(task in proptest::sample::select(&SUITE_TASKS[..]), seed in 0u64..100) {
        let (text, scene, _) = suite_trial(task, seed).unwrap();
        let plan = truth_plan(task, &text);
        let mut prompter = ScriptedPrompter::default();
        let resolved = resolve_missing(&plan, &scene, &mut prompter, 0.5).unwrap();
        prop_assert_eq!(&resolved, &plan);
        prop_assert!(prompter.asked.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn targets_are_fixed_before_the_first_grasp(task in proptest::sample::select(&SUITE_TASKS[..]), seed in 0u64..1000) {
        let (text, scene, _) = suite_trial(task, seed).unwrap();
        let r = executor().execute_plan(&text, truth_plan(task, &text), &scene, &mut ScriptedPrompter::default());
        let first_grasp = r.trace.iter().position(|e| matches!(e.event, Event::Grasp { .. }));
        if let Some(g) = first_grasp {
            for e in &r.trace[g..] {
                let late = matches!(e.event, Event::TargetsPlanned { .. } | Event::TargetRefreshed { .. });
                prop_assert!(!late, "target computed after the first grasp");
            }
            let planned = r.trace[..g].iter().any(|e| matches!(e.event, Event::TargetsPlanned { .. }));
            prop_assert!(planned, "no targets before the first grasp");
        }
    }

    #[test]
    fn episodes_repeat_exactly(task in proptest::sample::select(&SUITE_TASKS[..]), seed in 0u64..1000) {
        let (text, scene, _) = suite_trial(task, seed).unwrap();
        let run = || executor().execute_plan(&text, truth_plan(task, &text), &scene, &mut ScriptedPrompter::default()).without_timing();
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn permuting_axes_permutes_weights() {
    let demo = demos::by_name("min_jerk_400").unwrap();
    let perm = [2usize, 0, 1];
    let swapped = Trajectory::new(demo.samples.iter().map(|p| perm.map(|a| p[a])).collect(), demo.dt).unwrap();
    for input in [InputSignal::Zero, InputSignal::Ramp] {
        let cfg = DatrnConfig { input, ..DatrnConfig::default() };
        let a = fit(&demo, &cfg).unwrap();
        let b = fit(&swapped, &cfg).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            let (x, y) = (&b.weights[i], &a.weights[src]);
            let scale = x.w1.iter().chain(&x.w2).fold(0.0f64, |m, v| m.max(v.abs()));
            for (p, q) in x.w1.iter().chain(&x.w2).zip(y.w1.iter().chain(&y.w2)) {
                assert!((p - q).abs() <= 1e-9 * scale, "{input:?} axis {i}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn generated_corpus_covers_every_kind() {
    let corpus = generate_corpus(&TemplateConfig::default(), 600, 2).unwrap();
    for k in &ActionKind::ALL[..11] {
        assert!(corpus.examples.iter().any(|e| e.actions.iter().any(|a| a.kind == *k)), "{k:?}");
    }
}
