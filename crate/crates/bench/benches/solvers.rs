use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prox_adc::adc::AdcFamily;
use prox_adc::pme::{PmeFamily, PmeSchedule};
use prox_adc::protocol::{default_start, solve_unconstrained, ProtocolConfig};
use prox_adc::qp::{self, QpSettings, Vector};
use prox_adc_bench::{default_instance, random_qp};
use std::hint::black_box;

fn qp_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("qp");
    for (n, m) in [(10, 15), (40, 60), (100, 150)] {
        let prob = random_qp(7, n, m);
        let settings = QpSettings::with_tol(1e-8);
        group.bench_with_input(BenchmarkId::new("dense", format!("{n}x{m}")), &prob, |b, p| {
            b.iter(|| qp::solve_with(black_box(p), &settings).unwrap())
        });
    }
    group.finish();
}

fn pme_oracle(c: &mut Criterion) {
    let inst = default_instance(1);
    let sched = PmeSchedule {
        gamma0: 1.0,
        rho: 1.5,
        k_tilde: 1,
        lipschitz_l: 1.0,
    };
    let fam = PmeFamily::new(inst.functions[0].clone(), sched).unwrap();
    let x = Vector::from_element(inst.n, 0.1);
    let mut k = 0;
    // Distinct levels so the oracle cache never answers.
    c.bench_function("pme_eval", |b| {
        b.iter(|| {
            k += 1;
            fam.eval(black_box(k), &x).unwrap()
        })
    });
}

fn loose_run(c: &mut Criterion) {
    let inst = default_instance(7);
    let mut cfg = ProtocolConfig::unconstrained(1.5);
    cfg.params.eta_bar = 1.0;
    cfg.params.beta_bar = 1.0;
    cfg.params.k_bar = 0;
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    group.bench_function("first_level", |b| {
        b.iter(|| solve_unconstrained(&inst, &cfg, default_start(&inst), &mut |_| {}).unwrap())
    });
    group.finish();
}

criterion_group!(benches, qp_solve, pme_oracle, loose_run);
criterion_main!(benches);
