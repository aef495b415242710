//! Planar single-feature scene: carry a cup past a laptop.
//!
//! `θ = +1` means the person is fine with the cup going near the laptop,
//! `θ = −1` means they want it kept away. The state is the cup position and
//! both agents command planar velocities.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{euclid, EnvName, Environment};
use crate::model::{ActionBox, ActionVector, FeatureMap, FeatureVector, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Demo2dScene {
    pub laptop: [f64; 2],
    pub start: [f64; 2],
    pub half_width: f64,
    pub dt: f64,
    pub action_bound: f64,
}

impl Default for Demo2dScene {
    fn default() -> Self {
        Self {
            laptop: [0.0, 0.0],
            start: [-0.6, -0.6],
            half_width: 1.0,
            dt: 0.1,
            action_bound: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Demo2d {
    pub scene: Demo2dScene,
}

impl Demo2d {
    pub fn new(scene: Demo2dScene) -> Self {
        Self { scene }
    }

    pub fn start(&self) -> StateVector {
        StateVector(self.scene.start.to_vec())
    }
}

impl FeatureMap for Demo2d {
    fn theta_dim(&self) -> usize {
        1
    }

    fn features(&self, x: &StateVector) -> FeatureVector {
        FeatureVector(vec![-euclid(x, &self.scene.laptop)])
    }

    fn describe(&self) -> String {
        "laptop proximity".into()
    }
}

impl Environment for Demo2d {
    fn name(&self) -> EnvName {
        EnvName::Demo2d
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn human_box(&self) -> ActionBox {
        ActionBox::new(2, self.scene.action_bound)
    }

    fn robot_box(&self) -> ActionBox {
        ActionBox::new(2, self.scene.action_bound)
    }

    fn dt(&self) -> f64 {
        self.scene.dt
    }

    fn dynamics(&self, x: &StateVector, u_h: &ActionVector, u_r: &ActionVector) -> StateVector {
        let dt = self.scene.dt;
        StateVector(vec![
            x[0] + (u_r[0] + u_h[0]) * dt,
            x[1] + (u_r[1] + u_h[1]) * dt,
        ])
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> StateVector {
        let w = self.scene.half_width;
        StateVector(vec![
            rng.random_range(-w..=w),
            rng.random_range(-w..=w),
        ])
    }

    fn start_state(&self, _rng: &mut dyn RngCore) -> StateVector {
        self.start()
    }

    fn state_scale(&self) -> Vec<f64> {
        vec![self.scene.half_width; 2]
    }

    fn geometry(&self) -> serde_json::Value {
        serde_json::json!({
            "laptop": self.scene.laptop,
            "start": self.scene.start,
            "half_width": self.scene.half_width,
            "action_bound": self.scene.action_bound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_is_negative_distance() {
        let env = Demo2d::default();
        assert_eq!(env.features(&[3.0, 4.0].into())[0], -5.0);
        assert_eq!(env.features(&[0.0, 0.0].into())[0], 0.0);
    }

    #[test]
    fn idle_agents_leave_state_unchanged() {
        let env = Demo2d::default();
        let x = env.start();
        let z = ActionVector::zeros(2);
        assert_eq!(env.dynamics(&x, &z, &z), x);
    }
}
