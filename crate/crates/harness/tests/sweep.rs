use ope_absorb::prelude::*;
use ope_harness::config::*;
use ope_harness::sweep::*;
use ope_harness::truth::{ground_truth, monte_carlo_truth};

const DESK: &str = r#"
env = { kind = "desk" }
alphas = [0.3]
horizons = [20]
episode_counts = [200]
replicates = 2
methods = ["MWLA"]

[ground_truth]
episodes = 0
"#;

fn desk_config(edit: impl FnOnce(&mut SweepConfig)) -> SweepConfig {
    let mut cfg = SweepConfig::from_toml(DESK, None).unwrap();
    edit(&mut cfg);
    cfg.validate().unwrap();
    cfg
}

#[test]
fn config_defaults() {
    let cfg = SweepConfig::from_toml(DESK, None).unwrap();
    assert_eq!(cfg.lambda, 0.001);
    assert!(cfg.nonneg);
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.ground_truth.truncation, 500);
    assert_eq!(cfg.ground_truth.source, TruthSource::Exact);
    assert_eq!(GroundTruthSpec::default().episodes, 2_000_000);

    let taxi = SweepConfig::from_toml(
        r#"
env = { kind = "taxi" }
policies = { kind = "train", target_iterations = 1000 }
alphas = [0.2, 0.4]
horizons = [20, 50, 100, 150, 200]
episode_counts = [15000, 20000, 30000, 40000, 50000]
replicates = 100
methods = ["MWLA", "mwl_gamma"]
gammas = [0.99]
"#,
        None,
    )
    .unwrap();
    assert_eq!(taxi.env, EnvSpec::Taxi { appear_prob: 0.05 });
    assert_eq!(taxi.methods().unwrap(), vec![Method::Mwla, Method::MwlGamma]);
    match taxi.policies {
        Some(PolicySpec::Train(t)) => {
            assert_eq!(t.target_iterations, 1000);
            assert_eq!(t.plus_iterations, 60_000);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_validation() {
    let bad = [
        ("alphas = [0.3]", "alphas = []"),
        ("horizons = [20]", "horizons = [0]"),
        ("episode_counts = [200]", "episode_counts = []"),
        ("replicates = 2", "replicates = 0"),
        ("methods = [\"MWLA\"]", "methods = [\"MWL\"]"),
        ("methods = [\"MWLA\"]", "methods = [\"MWL_GAMMA\"]"),
        ("alphas = [0.3]", "alphas = [1.5]"),
        ("env = { kind = \"desk\" }", "env = { kind = \"taxi\" }"),
        ("replicates = 2", "replicates = 2\nextra = 1"),
    ];
    for (from, to) in bad {
        let text = DESK.replace(from, to);
        assert!(SweepConfig::from_toml(&text, None).is_err(), "{to}");
    }
    let relative = DESK.replace("env = { kind = \"desk\" }", "env = { kind = \"model\", path = \"m.json\" }")
        + "\n[policies]\nkind = \"files\"\ntarget = \"t.json\"\nplus = \"p.json\"\n";
    let cfg = SweepConfig::from_toml(&relative, Some(std::path::Path::new("/data"))).unwrap();
    assert_eq!(cfg.env, EnvSpec::Model { path: "/data/m.json".into() });
}

#[test]
fn one_method_one_point_two_replicates() {
    let out = run_sweep(&desk_config(|_| {}), SweepOptions::default()).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.diagnostics.len(), 2);
    assert_eq!(out.records[0].replicate, 0);
    assert_eq!(out.records[1].replicate, 1);
    assert_ne!(out.records[0].seed, out.records[1].seed);
    for r in &out.records {
        let e = r.estimate.unwrap();
        assert_eq!(r.squared_error.unwrap(), (e - out.meta.truth) * (e - out.meta.truth));
        assert!(r.runtime_ms.is_none());
    }
    assert_eq!(out.meta.truth, exact_return(&DeskInstance::new().mdp, &DeskInstance::new().target).unwrap());
}

#[test]
fn record_count_and_order() {
    let cfg = desk_config(|c| {
        c.alphas = vec![0.2, 0.7];
        c.horizons = vec![5, 30];
        c.episode_counts = vec![50, 100, 150];
        c.replicates = 3;
        c.methods = ["MWL_GAMMA", "NAIVE", "ON_POLICY"].map(String::from).to_vec();
        c.gammas = vec![0.5, 0.9];
    });
    let out = run_sweep(&cfg, SweepOptions { threads: Some(3), ..Default::default() }).unwrap();
    assert_eq!(out.records.len(), (2 + 1 + 1) * 2 * 2 * 3 * 3);
    let first = &out.records[0];
    assert_eq!((first.method, first.gamma), (Method::MwlGamma, Some(0.5)));
    assert_eq!(out.records.last().unwrap().method, Method::OnPolicy);
    let method_order: Vec<Method> = out.records.iter().map(|r| r.method).collect();
    assert!(method_order.windows(2).all(|w| {
        let idx = |m: Method| [Method::MwlGamma, Method::Naive, Method::OnPolicy].iter().position(|x| *x == m);
        idx(w[0]) <= idx(w[1])
    }));
    assert_eq!(out.meta.moments.len(), 2);
}

#[test]
fn identical_policies_make_naive_and_is_agree() {
    let desk = DeskInstance::new();
    let exp = Experiment { mdp: desk.mdp.clone(), target: desk.target.clone(), plus: desk.target, label: "same".into() };
    let cfg = desk_config(|c| {
        c.alphas = vec![0.0, 0.5];
        c.replicates = 5;
        c.methods = vec!["NAIVE".into(), "IS".into()];
    });
    let rows = run_sweep_with(&cfg, &exp, 1.0, SweepOptions::default()).unwrap();
    let (naive, is): (Vec<_>, Vec<_>) = rows.iter().map(|(r, _)| r).partition(|r| r.method == Method::Naive);
    assert_eq!(naive.len(), 10);
    for (a, b) in naive.iter().zip(&is) {
        assert_eq!((a.alpha, a.replicate, a.seed), (b.alpha, b.replicate, b.seed));
        assert_eq!(a.estimate, b.estimate);
    }
}

#[test]
fn records_do_not_depend_on_worker_count_or_neighbours() {
    let cfg = desk_config(|c| {
        c.episode_counts = vec![100, 400];
        c.replicates = 4;
        c.methods = ["MWLA", "MSWLA", "IS"].map(String::from).to_vec();
    });
    let one = run_sweep(&cfg, SweepOptions { threads: Some(1), ..Default::default() }).unwrap();
    let many = run_sweep(&cfg, SweepOptions { threads: Some(6), ..Default::default() }).unwrap();
    assert_eq!(one.records, many.records);

    let alone = run_sweep(&desk_config(|c| {
        c.episode_counts = vec![400];
        c.replicates = 4;
        c.methods = vec!["MSWLA".into()];
    }), SweepOptions::default())
    .unwrap();
    let matching: Vec<_> = one.records.iter().filter(|r| r.method == Method::Mswla && r.m == 400).cloned().collect();
    assert_eq!(alone.records, matching);
}

#[test]
fn failures_are_recorded_not_fatal() {
    // The state-ratio estimator needs π_b > 0 wherever π_e > 0.
    let desk = DeskInstance::new();
    let probs: Vec<f64> = (0..8).flat_map(|_| [0.5, 0.5, 0.0]).collect();
    let plus = Policy::new(8, 3, probs).unwrap();
    let exp = Experiment { mdp: desk.mdp, target: desk.target, plus, label: "gap".into() };
    let cfg = desk_config(|c| {
        c.alphas = vec![0.0];
        c.methods = vec!["MSWLA".into(), "NAIVE".into()];
    });
    let rows = run_sweep_with(&cfg, &exp, 0.0, SweepOptions::default()).unwrap();
    assert_eq!(rows.len(), 4);
    for (r, d) in &rows {
        match r.method {
            Method::Mswla => {
                assert!(r.estimate.is_none() && r.squared_error.is_none());
                assert!(d.error.is_some());
            }
            _ => assert!(r.estimate.is_some() && d.error.is_none()),
        }
    }
}

#[test]
fn results_csv_round_trips() {
    let cfg = desk_config(|c| {
        c.alphas = vec![0.1, 1.0 / 3.0];
        c.methods = vec!["MWLA".into(), "MWL_GAMMA".into()];
        c.gammas = vec![0.95];
    });
    let out = run_sweep(&cfg, SweepOptions::default()).unwrap();
    let mut bytes = Vec::new();
    write_results(&mut bytes, &out.records).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.starts_with("method,alpha,H,m,gamma,replicate,estimate,squared_error,seed,runtime_ms\n"));
    assert_eq!(read_results(&bytes[..]).unwrap(), out.records);
    assert!(read_results("a,b\n1,2\n".as_bytes()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_sweep(&path, &out).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(sidecar(&path, ".meta.json").exists());
    assert!(sidecar(&path, ".diagnostics.csv").exists());
}

#[test]
fn timing_fills_runtime_column() {
    let out = run_sweep(&desk_config(|_| {}), SweepOptions { timing: true, ..Default::default() }).unwrap();
    assert!(out.records.iter().all(|r| r.runtime_ms.is_some_and(|t| t >= 0.0)));
}

#[test]
fn thread_count_override() {
    assert_eq!(thread_count(Some(3)).unwrap(), 3);
}

#[test]
fn ground_truth_of_zero_reward_model_is_zero() {
    let desk = DeskInstance::new();
    let zero = TabularMdp::new(
        8,
        3,
        &desk.mdp.dense_transition(),
        vec![0.0; 24],
        desk.mdp.initial_dist().to_vec(),
        0.0,
    )
    .unwrap();
    let gt = ground_truth(&zero, &desk.target, 1000, 500, 1).unwrap();
    assert_eq!(gt.exact, Some(0.0));
    assert_eq!(gt.monte_carlo.unwrap().mean, 0.0);
}

#[test]
fn monte_carlo_truth_within_four_standard_errors() {
    let desk = DeskInstance::new();
    let exact = exact_return(&desk.mdp, &desk.target).unwrap();
    let mc = monte_carlo_truth(&desk.mdp, &desk.target, 200_000, 500, 17);
    assert_eq!(mc.episodes, 200_000);
    assert!(mc.absorbed_fraction > 0.999);
    assert!((mc.mean - exact).abs() <= 4.0 * mc.standard_error, "{} vs {exact}", mc.mean);
    let again = monte_carlo_truth(&desk.mdp, &desk.target, 200_000, 500, 17);
    assert_eq!(mc, again);
}
