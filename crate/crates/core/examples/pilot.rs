// Timing and learning pilot: SoCo vs vanilla on 3-agent spread, short budget.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soco::demos::SoloPolicy;
use soco::envs::ParticleConfig;
use soco::fusion::{ClipMode, GatingMode};
use soco::marl::{train_marl, AlgoSpec, FusionParams, MarlRunSpec, TrainerConfig};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("soco");
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let update_every: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(15);

    let trainer = TrainerConfig {
        total_steps: steps,
        warmup_steps: 2_000,
        eval_interval: 5_000,
        eval_episodes: 10,
        update_every,
        ..TrainerConfig::default()
    };

    // Untrained but frozen solo stand-in: random net (just for timing) unless
    // a trained one matters; gate learning needs a REAL solo, so for the
    // learning pilot we pretrain a quick expert via single-agent runs later.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solo = SoloPolicy::new(6, 128, &mut rng);
    solo.freeze();

    let algo = match which {
        "vanilla" => AlgoSpec::Vanilla,
        _ => AlgoSpec::Soco {
            solo: Arc::new(solo),
            fusion: FusionParams {
                strength: 0.0,
                gating: GatingMode::Learned,
                clip: ClipMode::Tanh,
                gate_temperature: 1.0,
            },
        },
    };

    let spec = MarlRunSpec {
        env: ParticleConfig::spread(3),
        trainer,
        algo,
        seed: 1,
    };
    let t = Instant::now();
    let (_, rows) = train_marl(&spec, &mut |r| {
        eprintln!("step {:>7}  return {:>9.3}  c1 {:>8.4}  a {:>8.4}", r.step, r.mean_return, r.critic_loss_1, r.actor_loss);
        Ok(())
    })
    .unwrap();
    let el = t.elapsed().as_secs_f64();
    eprintln!(
        "{} done: {} rows, {:.1}s total, {:.2} ms/env-step",
        which,
        rows.len(),
        el,
        el * 1000.0 / (steps + 2000) as f64
    );
}
