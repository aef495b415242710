//! One episode on the arm task: a simulated user corrects the robot for the
//! first few ticks and the estimate is updated by each rule in turn.
//!
//! Run: `cargo run --release --example robot_episode -- [strol_weights.strl]`
//! Without weights a short StROL training run is done first.

use strol::config::Config;
use strol::envs::{run_episode, EpisodeSetup, SimulatedHuman};
use strol::humansim::HumanNoise;
use strol::model::ParamVector;
use strol::net::CorrectionNet;
use strol::rules::{LearningRule, RuleKind, RuleName};
use strol::trainer::train;

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/robot.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::load(CONFIG)?;
    let env = cfg.env_handle()?;
    let net = match std::env::args().nth(1) {
        Some(path) => CorrectionNet::load(path)?,
        None => {
            let mut tc = cfg.train_config();
            tc.epochs = 40;
            train(&env, &tc)?.0
        }
    };
    let theta_star = ParamVector(vec![-0.8, 0.9]);
    let noise = HumanNoise::fractions(cfg.sigma(), 0.0, &env.human_box());
    let rules = [
        RuleKind::Gradient,
        cfg.rule(RuleName::Mof, None)?,
        RuleKind::strol(net),
    ];
    for rule in &rules {
        let mut human = SimulatedHuman::new(theta_star.clone(), noise.clone(), cfg.resolution(), 11);
        let setup = EpisodeSetup {
            x0: env.start_state(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5)),
            theta0: cfg.theta0(),
            theta_star: Some(theta_star.clone()),
            alpha: cfg.alpha(),
            clamp: cfg.clamp(),
        };
        let log = run_episode(&env, rule, &mut human, setup)?;
        let theta = log.thetas.last().expect("episode has a final estimate");
        println!(
            "{:>8}: final theta [{:+.3}, {:+.3}]  error {:.3}  regret {:.4}",
            rule.name(),
            theta.values()[0],
            theta.values()[1],
            log.final_error.unwrap_or(f64::NAN),
            log.regret.unwrap_or(f64::NAN)
        );
        for s in log.steps.iter().take(env.window) {
            println!("          t={} margin {:+.4}", s.t, s.margin.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
