//! Plans on each scene with the true weights and a wrong estimate and reports
//! the regret of acting on the estimate.
//!
//! Run: `cargo run --release --example planner_regret`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strol::envs::{plan_trajectory, EnvHandle};
use strol::metrics::regret;
use strol::model::ParamVector;

fn main() -> strol::Result<()> {
    for env in [EnvHandle::demo2d(), EnvHandle::robot(), EnvHandle::highway()] {
        let x0 = env.start_state(&mut ChaCha8Rng::seed_from_u64(0));
        let d = env.theta_dim();
        let theta_star = ParamVector(vec![1.0; d]);
        let wrong = ParamVector(vec![-1.0; d]);
        let plan = plan_trajectory(env.env(), &x0, &theta_star, env.lookahead, env.plan_resolution);
        println!(
            "{:>8}: first action {:?}, lookahead score {:.4}, regret(θ*, θ*) {}, regret(θ*, −θ*) {:.4}",
            env.name().to_string(),
            plan.action.values(),
            plan.score,
            regret(&env, &theta_star, &theta_star, &x0)?,
            regret(&env, &theta_star, &wrong, &x0)?
        );
    }
    Ok(())
}
