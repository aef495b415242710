//! Two cars on a two-lane highway, both kinematic bicycles.
//!
//! State layout: `[x_r, y_r, ψ_r, v_r, x_h, y_h, ψ_h, v_h]` for the robot car
//! followed by the human car (meters, radians, m/s). Both cars take normalized
//! commands in `[-1, 1]^2` that scale to acceleration and steering angle.
//! Cars start in the left lane; the right lane is the free lane.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EnvName, Environment};
use crate::model::{ActionBox, ActionVector, FeatureMap, FeatureVector, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayScene {
    pub lane_width: f64,
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_steer: f64,
    pub max_speed: f64,
    /// Heading (rad) at which the lane-change indicator reaches `tanh(1)`.
    pub heading_scale: f64,
    /// Center distance below which the cars are flagged as colliding.
    pub collision_distance: f64,
    pub dt: f64,
}

impl Default for HighwayScene {
    fn default() -> Self {
        Self {
            lane_width: 3.7,
            wheelbase: 2.5,
            max_accel: 3.0,
            max_steer: 0.3,
            max_speed: 20.0,
            heading_scale: 0.2,
            collision_distance: 4.5,
            dt: 0.1,
        }
    }
}

impl HighwayScene {
    pub fn left_lane(&self) -> f64 {
        0.5 * self.lane_width
    }

    pub fn right_lane(&self) -> f64 {
        -0.5 * self.lane_width
    }
}

#[derive(Debug, Clone, Default)]
pub struct Highway {
    pub scene: HighwayScene,
}

impl Highway {
    pub fn new(scene: HighwayScene) -> Self {
        Self { scene }
    }

    fn car_step(&self, car: &[f64], cmd: &[f64]) -> [f64; 4] {
        let s = &self.scene;
        let accel = s.max_accel * cmd[0];
        let steer = s.max_steer * cmd[1];
        let v = (car[3] + accel * s.dt).clamp(0.0, s.max_speed);
        let psi = car[2] + v / s.wheelbase * steer.tan() * s.dt;
        [
            car[0] + v * psi.cos() * s.dt,
            car[1] + v * psi.sin() * s.dt,
            psi,
            v,
        ]
    }
}

impl FeatureMap for Highway {
    fn theta_dim(&self) -> usize {
        3
    }

    fn features(&self, x: &StateVector) -> FeatureVector {
        let dist = ((x[0] - x[4]).powi(2) + (x[1] - x[5]).powi(2)).sqrt();
        // the free lane is to the right, i.e. toward negative heading
        let lane = (-x[6] / self.scene.heading_scale).tanh();
        FeatureVector(vec![dist, x[3], lane])
    }

    fn describe(&self) -> String {
        "distance between cars, robot speed, human lane change".into()
    }
}

impl Environment for Highway {
    fn name(&self) -> EnvName {
        EnvName::Highway
    }

    fn state_dim(&self) -> usize {
        8
    }

    fn human_box(&self) -> ActionBox {
        ActionBox::new(2, 1.0)
    }

    fn robot_box(&self) -> ActionBox {
        ActionBox::new(2, 1.0)
    }

    fn dt(&self) -> f64 {
        self.scene.dt
    }

    fn dynamics(&self, x: &StateVector, u_h: &ActionVector, u_r: &ActionVector) -> StateVector {
        let robot = self.car_step(&x[0..4], u_r);
        let human = self.car_step(&x[4..8], u_h);
        StateVector(robot.iter().chain(human.iter()).copied().collect())
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> StateVector {
        let lane = self.scene.left_lane();
        StateVector(vec![
            rng.random_range(15.0..=30.0),
            lane + rng.random_range(-0.5..=0.5),
            rng.random_range(-0.15..=0.15),
            rng.random_range(8.0..=12.0),
            rng.random_range(0.0..=10.0),
            lane + rng.random_range(-0.5..=0.5),
            rng.random_range(-0.15..=0.15),
            rng.random_range(8.0..=12.0),
        ])
    }

    fn start_state(&self, rng: &mut dyn RngCore) -> StateVector {
        let lane = self.scene.left_lane();
        StateVector(vec![
            rng.random_range(15.0..=25.0),
            lane,
            0.0,
            10.0,
            rng.random_range(0.0..=5.0),
            lane,
            0.0,
            10.0,
        ])
    }

    fn state_scale(&self) -> Vec<f64> {
        let s = &self.scene;
        vec![
            50.0,
            s.lane_width,
            s.heading_scale,
            10.0,
            50.0,
            s.lane_width,
            s.heading_scale,
            10.0,
        ]
    }

    fn geometry(&self) -> serde_json::Value {
        serde_json::json!({
            "lanes": [self.scene.left_lane(), self.scene.right_lane()],
            "lane_width": self.scene.lane_width,
            "wheelbase": self.scene.wheelbase,
        })
    }

    fn collision(&self, x: &StateVector) -> bool {
        self.features(x)[0] < self.scene.collision_distance
    }
}
