use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use econsim_bench::{market_world, order_stream, random_actions};
use econsim_core::env::{Env, EnvConfig, TaxController};
use econsim_core::market::{MarketParams, OrderBook};
use econsim_core::metrics;
use econsim_core::tax::{settle_period, TaxSchedule, US_FEDERAL_CUTOFFS, US_FEDERAL_RATES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn env_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("env");
    g.throughput(Throughput::Elements(1));
    for (name, cfg) in [("default", EnvConfig::default()), ("human", EnvConfig::human_mode())] {
        let mut env = Env::new(cfg, TaxController::Free, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        g.bench_function(format!("step/{name}"), |b| {
            b.iter(|| {
                if env.done() {
                    env.reset(rng.random()).unwrap();
                }
                let a = random_actions(&env, &mut rng);
                black_box(env.step(&a, None));
            })
        });
    }
    let env = Env::new(EnvConfig::default(), TaxController::Planner, 1).unwrap();
    g.bench_function("agent_obs", |b| b.iter(|| black_box(env.agent_obs(0))));
    g.bench_function("planner_obs", |b| b.iter(|| black_box(env.planner_obs())));
    g.finish();
}

fn auction(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stream = order_stream(1000, 8, &mut rng);
    let mut g = c.benchmark_group("market");
    g.throughput(Throughput::Elements(stream.len() as u64));
    g.bench_function("submit_1000", |b| {
        b.iter_batched(
            || (market_world(8), OrderBook::new(MarketParams::default())),
            |(mut w, mut book)| {
                for (t, &(owner, tpl)) in stream.iter().enumerate() {
                    let _ = black_box(book.submit(&mut w, owner, tpl, t as u64));
                }
                book
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn tax(c: &mut Criterion) {
    let s = TaxSchedule::new(US_FEDERAL_CUTOFFS.to_vec(), US_FEDERAL_RATES.to_vec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let incomes: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1000.0)).collect();
    let mut g = c.benchmark_group("tax");
    g.bench_function("tax_due_1000", |b| {
        b.iter(|| incomes.iter().map(|&z| s.tax_due_clamped(z)).sum::<f64>())
    });
    g.bench_function("settle_period_4", |b| b.iter(|| settle_period(0, black_box(&incomes[..4]), &s)));
    g.bench_function("gini_1000", |b| b.iter(|| metrics::gini(black_box(&incomes))));
    g.finish();
}

criterion_group!(benches, env_step, auction, tax);
criterion_main!(benches);
