use aucmeta::bayes::{posterior_from_studies, registry_loglik};
use aucmeta::quadrature::GaussHermite;
use aucmeta::sim::{GeneratingParams, KDistribution, SeDistribution};
use aucmeta::{fit_hyperparams, generate_registry, reml_tau, CpmSeries, HyperParams, PriorMode, SimConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn registry(n: usize) -> Vec<CpmSeries> {
    let cfg = SimConfig {
        hp: GeneratingParams {
            mu_auc: 0.73,
            sigma_auc: 0.07,
            mu_tau: -2.89,
            sigma_tau: 0.21,
        },
        n_cpms: n,
        k_distribution: KDistribution::registry_like(),
        se_distribution: SeDistribution::default(),
        seed: 2024,
    };
    generate_registry(&cfg).unwrap().registry
}

fn frequentist(c: &mut Criterion) {
    let series = CpmSeries::from_pairs(
        "b",
        &[(0.71, 0.02), (0.65, 0.035), (0.78, 0.05), (0.74, 0.028), (0.69, 0.03), (0.8, 0.04)],
    )
    .unwrap();
    c.bench_function("reml_tau/k6", |b| b.iter(|| reml_tau(black_box(series.studies()))));
}

fn bayes(c: &mut Criterion) {
    let hp = HyperParams::new(0.73, 0.07, -2.89, 0.21).unwrap();
    let reg = registry(469);
    c.bench_function("gauss_hermite/41", |b| b.iter(|| GaussHermite::new(black_box(41))));
    c.bench_function("posterior_pooled/k5", |b| {
        let s = reg.iter().find(|s| s.len() == 5).unwrap();
        b.iter(|| posterior_from_studies(black_box(s.studies()), &hp))
    });
    c.bench_function("registry_loglik/469", |b| b.iter(|| registry_loglik(black_box(&reg), &hp)));

    let mut group = c.benchmark_group("fit_hyperparams");
    group.sample_size(10);
    group.bench_function("flat/469", |b| b.iter(|| fit_hyperparams(black_box(&reg), PriorMode::Flat)));
    group.bench_function("full/469", |b| b.iter(|| fit_hyperparams(black_box(&reg), PriorMode::Full)));
    group.finish();
}

criterion_group!(benches, frequentist, bayes);
criterion_main!(benches);
