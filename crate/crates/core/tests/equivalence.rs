use std::sync::Arc;

use mfsim_core::benchmarks::{generate_runtime_sequence, FidelityScale, Hartmann};
use mfsim_core::optimizers::HalvingSettings;
use mfsim_core::verify::suites::{
    continual_check, handcrafted_suite, mcs_sequence, reduction_run, scs_sequence, SuiteOptions,
};
use mfsim_core::verify::{compare, oracle_sequence, oracle_simulate, timeline, OracleCost};
use mfsim_core::{
    run_mcs, run_scs, Ask, AskTellOptimizer, BenchmarkObjective, Config, EvalArgs, Error, McsOptions,
    MfBenchmark, Objectives, RuntimeDist, RuntimeSequence, SamplingCost, ScsOptions, SuccessiveHalving,
    WrapperConfig,
};

fn cfg(p: usize, n: usize) -> WrapperConfig {
    WrapperConfig {
        n_workers: p,
        n_evals: n,
        check_interval_time: 0.001,
        ..Default::default()
    }
}

#[test]
fn mcs_and_scs_match_oracle_on_random_sequences() {
    let dir = tempfile::tempdir().unwrap();
    for dist in RuntimeDist::ALL {
        for cost in [SamplingCost::Cheap, SamplingCost::Expensive { c: 0.05 }] {
            for seed in 0..2 {
                let seq = generate_runtime_sequence(dist, 5.0, 40, seed).unwrap();
                let reference = oracle_sequence(&seq, cost, 4).unwrap().trajectory;
                let run_dir = dir.path().join(format!("{}_{seed}", dist.as_str()));
                let mcs = mcs_sequence(&seq, cost, cfg(4, 40), &run_dir, false).unwrap();
                let scs = scs_sequence(&seq, cost, &cfg(4, 40)).unwrap();
                let a = compare("mcs", &reference, &mcs, 0.0);
                let b = compare("scs", &reference, &scs, 0.0);
                assert!(a.passed(), "{dist:?} {cost:?} {seed}: {a}");
                assert!(b.passed(), "{dist:?} {cost:?} {seed}: {b}");
                assert_eq!(mcs, scs);
            }
        }
    }
}

#[test]
fn worker_counts_from_one_to_eight() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate_runtime_sequence(RuntimeDist::Exponential, 5.0, 30, 7).unwrap();
    for p in 1..=8 {
        let cost = SamplingCost::Expensive { c: 0.01 };
        let reference = oracle_sequence(&seq, cost, p).unwrap().trajectory;
        let mcs = mcs_sequence(&seq, cost, cfg(p, 30), &dir.path().join(p.to_string()), false).unwrap();
        assert!(compare("p", &reference, &mcs, 0.0).passed(), "P={p}");
    }
}

#[test]
fn handcrafted_timelines_without_sleeping() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = SuiteOptions::new(dir.path());
    opts.real_sleep = false;
    opts.time_scale = 1.0;
    opts.check_interval = 0.001;
    for report in handcrafted_suite(&opts) {
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn case_one_has_four_alternating_rows() {
    let run = oracle_sequence(
        &RuntimeSequence(mfsim_core::verify::suites::CASE1.to_vec()),
        SamplingCost::Cheap,
        4,
    )
    .unwrap();
    let iv = timeline::intervals(&run.trajectory);
    let workers: std::collections::BTreeSet<usize> = iv.iter().map(|i| i.worker).collect();
    assert_eq!(workers.len(), 4);
    // Cheap sampling never makes a worker wait.
    assert!(iv.iter().all(|i| i.kind == timeline::IntervalKind::Evaluating));
    assert_eq!(iv, run.intervals);
}

#[test]
fn reduction_run_is_identical_across_simulators() {
    let dir = tempfile::tempdir().unwrap();
    let r = reduction_run(3, 4, 40, &dir.path().join("run"), 0.001).unwrap();
    assert!(r.identical);
    assert!(r.simulated > 0.0);
}

#[test]
fn successive_halving_restarts_pay_the_difference() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        for report in continual_check(seed, &dir.path().join(seed.to_string())) {
            assert!(report.passed(), "{report}");
        }
    }
}

/// Evaluates one configuration at each fidelity in turn, waiting for every
/// result before moving up.
struct Chain {
    fidels: Vec<f64>,
    next: usize,
    waiting: bool,
}

impl AskTellOptimizer for Chain {
    fn ask(&mut self) -> mfsim_core::Result<Ask> {
        if self.waiting {
            return Ok(Ask::Wait);
        }
        let Some(&f) = self.fidels.get(self.next) else {
            return Ok(Ask::Finished);
        };
        self.next += 1;
        self.waiting = true;
        let config: Config = (0..6).map(|j| (format!("x{j}"), 0.3)).collect();
        Ok(Ask::Suggest(mfsim_core::Suggestion {
            config,
            args: EvalArgs::new([("epoch".to_string(), f)].into(), None),
            overhead: Some(0.0),
        }))
    }

    fn tell(&mut self, _: &Config, _: &EvalArgs, _: &Objectives, _: f64) -> mfsim_core::Result<()> {
        self.waiting = false;
        Ok(())
    }
}

#[test]
fn continual_chain_telescopes() {
    let fidels = vec![3.0, 9.0, 27.0, 81.0, 243.0];
    let bench = Hartmann::new(6, 100.0)
        .unwrap()
        .with_fidelity(FidelityScale::Epochs {
            key: "epoch".into(),
            max: 243.0,
        });
    let objective = Arc::new(BenchmarkObjective(bench.clone()));
    let cfg = WrapperConfig {
        continual_max_fidel: Some(243.0),
        fidel_keys: vec!["epoch".into()],
        ..cfg(2, 5)
    };
    let chain = || Chain {
        fidels: fidels.clone(),
        next: 0,
        waiting: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let mcs = run_mcs(&mut chain(), objective.clone(), cfg.clone(), dir.path(), &McsOptions::default())
        .unwrap()
        .trajectory;
    let scs = run_scs(&mut chain(), objective.as_ref(), &cfg, &ScsOptions::default())
        .unwrap()
        .trajectory;
    let oracle = oracle_simulate(&mut chain(), objective.as_ref(), &cfg, OracleCost::Declared)
        .unwrap()
        .trajectory;
    assert_eq!(mcs, oracle);
    assert_eq!(scs, oracle);
    let config: Config = (0..6).map(|j| (format!("x{j}"), 0.3)).collect();
    let full = |f: f64| {
        bench
            .evaluate(&config, &[("epoch".to_string(), f)].into(), None)
            .unwrap()
            .runtime
    };
    let total: f64 = mcs.iter().map(|r| r.runtime).sum();
    assert!((total - full(243.0)).abs() <= 1e-9 * full(243.0));
    assert_eq!(mcs.last().unwrap().finish_cumtime, total);
}

struct AlwaysWait;

impl AskTellOptimizer for AlwaysWait {
    fn ask(&mut self) -> mfsim_core::Result<Ask> {
        Ok(Ask::Wait)
    }

    fn tell(&mut self, _: &Config, _: &EvalArgs, _: &Objectives, _: f64) -> mfsim_core::Result<()> {
        Ok(())
    }
}

#[test]
fn waiting_forever_is_reported() {
    let objective = Arc::new(BenchmarkObjective(Hartmann::new(3, 1.0).unwrap()));
    let dir = tempfile::tempdir().unwrap();
    let err = run_mcs(&mut AlwaysWait, objective.clone(), cfg(3, 5), dir.path(), &McsOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    let err = run_scs(&mut AlwaysWait, objective.as_ref(), &cfg(3, 5), &ScsOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    let err = oracle_simulate(&mut AlwaysWait, objective.as_ref(), &cfg(3, 5), OracleCost::Cheap).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn halving_matches_across_worker_counts() {
    let bench = Hartmann::new(3, 10.0).unwrap().with_fidelity(FidelityScale::Epochs {
        key: "epoch".into(),
        max: 27.0,
    });
    let space = bench.search_space();
    let objective = Arc::new(BenchmarkObjective(bench));
    let settings = HalvingSettings {
        eta: 3,
        min_fidel: 1.0,
        max_fidel: 27.0,
        fidel_key: "epoch".into(),
        obj_key: "loss".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    for p in [1, 3, 5] {
        let make = || SuccessiveHalving::new(space.clone(), settings.clone(), 11).unwrap();
        let cfg = WrapperConfig {
            continual_max_fidel: Some(27.0),
            fidel_keys: vec!["epoch".into()],
            ..cfg(p, make().bracket_size())
        };
        let oracle = oracle_simulate(&mut make(), objective.as_ref(), &cfg, OracleCost::Declared).unwrap();
        let quiet = McsOptions {
            measure_overhead: false,
        };
        let mcs = run_mcs(&mut make(), objective.clone(), cfg, dir.path().join(p.to_string()), &quiet).unwrap();
        assert_eq!(mcs.trajectory, oracle.trajectory, "P={p}");
    }
}
