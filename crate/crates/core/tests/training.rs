use increc::data::temporal_split;
use increc::eval::{run_protocol, MethodSpec, RunPlan};
use increc::synthetic::{shaped_log, two_phase, ShapedConfig, TwoPhaseConfig, TwoPhaseData};
use increc::train::{train_incremental, IncrementalInputs, Method, NoopObserver, TrainConfig, TrainOutcome};
use increc::rng::{stream, Stream};
use increc::{BipartiteGraph, BlockSplit, DistillConfig, ModelState, TeacherSnapshot};

fn small_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        batch_size: 128,
        n_neg: 3,
        lr_base: 1e-2,
        lr_inc: 5e-3,
        max_epochs_base: 8,
        patience_base: 3,
        max_epochs_inc: 4,
        deterministic: true,
        k: 10,
        ..Default::default()
    };
    cfg.model.dim = 8;
    cfg
}

fn small_data(seed: u64) -> TwoPhaseData {
    let cfg = TwoPhaseConfig { n_users: 60, n_items: 50, n_groups: 5, phase1_per_user: 10, phase2_per_user: 5, ..Default::default() };
    two_phase(&cfg, seed).unwrap()
}

fn update(data: &TwoPhaseData, base: &ModelState<f32>, cfg: &TrainConfig, method: Method, d: &DistillConfig) -> TrainOutcome<f32> {
    let bg = data.base_graph().unwrap();
    let cum = data.cumulative_graph().unwrap();
    let local = BipartiteGraph::build(&data.inc_train, data.n_users, data.n_items, None).unwrap();
    let snap = TeacherSnapshot::build(base, &bg, bg.clone(), &local, d, &cfg.forward_options(), &mut stream(cfg.seed, Stream::Teacher, 1))
        .unwrap();
    let inputs = IncrementalInputs { prev_model: base, snapshot: &snap, block: &data.inc_train, agg_graph: &cum, val: &data.inc_val, block_id: 1 };
    train_incremental(inputs, cfg, d, method, &mut NoopObserver).unwrap()
}

#[test]
fn zero_weight_graphsail_replays_finetune_bit_for_bit() {
    for seed in 0..3 {
        let data = small_data(seed);
        let cfg = small_cfg(seed);
        let base = data.train_base_model::<f32>(&cfg).unwrap();
        let zero = DistillConfig { lambda_self: 0.0, lambda_local: 0.0, lambda_global: 0.0, k: 3, ..Default::default() };
        let ft = update(&data, &base, &cfg, Method::Finetune, &zero);
        let gs = update(&data, &base, &cfg, Method::GraphSail, &zero);
        assert_eq!(ft.model, gs.model);
        let losses = |o: &TrainOutcome<f32>| o.history.iter().map(|h| (h.loss.clone(), h.val_recall)).collect::<Vec<_>>();
        assert_eq!(losses(&ft), losses(&gs));
    }
}

/// Distance of the student's final embeddings from the teacher's over the
/// nodes the teacher covers.
fn drift(student: &ModelState<f32>, teacher: &ModelState<f32>, data: &TwoPhaseData, cfg: &TrainConfig) -> f64 {
    let fwd = cfg.forward_options();
    let s = student.full_embeddings(&data.cumulative_graph().unwrap(), &fwd, &mut stream(0, Stream::Eval, 0)).unwrap();
    let t = teacher.full_embeddings(&data.base_graph().unwrap(), &fwd, &mut stream(0, Stream::Eval, 0)).unwrap();
    let mut sum = 0.0f64;
    for (a, b) in [(&s.users, &t.users), (&s.items, &t.items)] {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            sum += ((x - y) as f64).powi(2);
        }
    }
    sum.sqrt()
}

#[test]
fn strong_self_distillation_limits_drift() {
    let data = small_data(7);
    let cfg = small_cfg(7);
    let base = data.train_base_model::<f32>(&cfg).unwrap();
    let strong = DistillConfig { lambda_self: 1e9, lambda_local: 0.0, lambda_global: 0.0, k: 3, ..Default::default() };
    let ft = update(&data, &base, &cfg, Method::Finetune, &strong);
    let gs = update(&data, &base, &cfg, Method::GraphSail, &strong);
    assert!(drift(&gs.model, &base, &data, &cfg) < drift(&ft.model, &base, &data, &cfg));
}

fn small_split(seed: u64, n_inc: usize) -> BlockSplit {
    let cfg = ShapedConfig { n_users: 80, n_items: 120, n_records: 3000, n_groups: 4, drift: 0.5, noise: 0.05 };
    temporal_split(shaped_log(&cfg, seed).unwrap(), 0.6, n_inc).unwrap()
}

fn small_plan(methods: &[Method], seeds: Vec<u64>) -> RunPlan {
    let methods = methods
        .iter()
        .map(|&m| MethodSpec { distill: DistillConfig { k: 3, ..Default::default() }, ..MethodSpec::new(m) })
        .collect();
    RunPlan::new(methods, seeds, small_cfg(0))
}

#[test]
fn protocol_layout() {
    let split = small_split(1, 4);
    let plan = small_plan(&[Method::Finetune], vec![0]);
    let r = run_protocol::<f32>(&split, &plan, &mut NoopObserver).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.blocks, vec![1, 2, 3]);
    let ft: Vec<usize> = r.results("finetune").map(|x| x.block).collect();
    assert_eq!(ft, vec![1, 2, 3]);
    assert_eq!(r.summaries.len(), 1);
    let per_block: Vec<f64> = r.results("finetune").map(|x| x.recall).collect();
    let mean = per_block.iter().sum::<f64>() / 3.0;
    assert!((r.summary("finetune").unwrap().mean.unwrap() - mean).abs() < 1e-12);

    let five = small_split(1, 5);
    let r = run_protocol::<f32>(&five, &plan, &mut NoopObserver).unwrap();
    assert_eq!(r.blocks, vec![1, 2, 3, 4]);
}

#[test]
fn deterministic_protocol_reports_are_identical() {
    let split = small_split(2, 3);
    let plan = small_plan(&[Method::Finetune, Method::GraphSail, Method::Lsp, Method::Embd], vec![0, 1]);
    let a = run_protocol::<f32>(&split, &plan, &mut NoopObserver).unwrap().to_json();
    let b = run_protocol::<f32>(&split, &plan, &mut NoopObserver).unwrap().to_json();
    assert_eq!(a, b);
    let mut threaded = plan.clone();
    threaded.train.deterministic = false;
    let c = run_protocol::<f32>(&split, &threaded, &mut NoopObserver).unwrap();
    let strip = |s: &str| s.replace("\"deterministic\": false", "\"deterministic\": true");
    assert_eq!(strip(&c.to_json()), a);
}

#[test]
fn protocol_needs_two_incremental_blocks() {
    let split = small_split(1, 1);
    assert!(run_protocol::<f32>(&split, &small_plan(&[Method::Finetune], vec![0]), &mut NoopObserver).is_err());
}
