//! Tabletop arm reduced to its end-effector point under velocity control.
//!
//! State is the end-effector position `[x, y, z]` (meters), extended with a cup
//! tilt angle (radians) when the orientation feature is enabled. Human
//! corrections superimpose on the commanded robot velocity.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{euclid, EnvName, Environment};
use crate::model::{ActionBox, ActionVector, FeatureMap, FeatureVector, StateVector};

/// Which optional features are active on top of the cup and plate distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotFeatures {
    /// Height above the table (`θ > 0` keeps the cup low).
    pub table: bool,
    /// Cup tilt (`θ > 0` keeps the cup upright). Adds a state and action component.
    pub orientation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotScene {
    pub cup: [f64; 3],
    pub plate: [f64; 3],
    pub table_z: f64,
    pub workspace_lo: [f64; 3],
    pub workspace_hi: [f64; 3],
    pub max_tilt: f64,
    pub dt: f64,
    pub action_bound: f64,
    pub features: RobotFeatures,
}

impl Default for RobotScene {
    fn default() -> Self {
        Self {
            cup: [0.55, 0.3, 0.1],
            plate: [0.55, -0.3, 0.05],
            table_z: 0.0,
            workspace_lo: [0.1, -0.5, 0.05],
            workspace_hi: [0.9, 0.5, 0.6],
            max_tilt: 0.6,
            dt: 0.1,
            action_bound: 1.0,
            features: RobotFeatures::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Robot {
    pub scene: RobotScene,
}

impl Robot {
    pub fn new(scene: RobotScene) -> Self {
        Self { scene }
    }

    fn action_dim(&self) -> usize {
        if self.scene.features.orientation {
            4
        } else {
            3
        }
    }
}

impl FeatureMap for Robot {
    fn theta_dim(&self) -> usize {
        2 + usize::from(self.scene.features.table) + usize::from(self.scene.features.orientation)
    }

    fn features(&self, x: &StateVector) -> FeatureVector {
        let s = &self.scene;
        let p = &x[..3];
        let mut phi = Vec::with_capacity(self.theta_dim());
        phi.push(-euclid(p, &s.cup));
        phi.push(-euclid(p, &s.plate));
        if s.features.table {
            phi.push(-(p[2] - s.table_z));
        }
        if s.features.orientation {
            phi.push(-x[3] * x[3]);
        }
        FeatureVector(phi)
    }

    fn describe(&self) -> String {
        let mut names = vec!["cup proximity", "plate proximity"];
        if self.scene.features.table {
            names.push("table proximity");
        }
        if self.scene.features.orientation {
            names.push("upright cup");
        }
        names.join(", ")
    }
}

impl Environment for Robot {
    fn name(&self) -> EnvName {
        EnvName::Robot
    }

    fn state_dim(&self) -> usize {
        self.action_dim()
    }

    fn human_box(&self) -> ActionBox {
        ActionBox::new(self.action_dim(), self.scene.action_bound)
    }

    fn robot_box(&self) -> ActionBox {
        ActionBox::new(self.action_dim(), self.scene.action_bound)
    }

    fn dt(&self) -> f64 {
        self.scene.dt
    }

    fn dynamics(&self, x: &StateVector, u_h: &ActionVector, u_r: &ActionVector) -> StateVector {
        let dt = self.scene.dt;
        StateVector(
            x.iter()
                .zip(u_h.iter().zip(u_r.iter()))
                .map(|(xi, (h, r))| xi + (r + h) * dt)
                .collect(),
        )
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> StateVector {
        let s = &self.scene;
        let mut x: Vec<f64> = (0..3)
            .map(|i| rng.random_range(s.workspace_lo[i]..=s.workspace_hi[i]))
            .collect();
        if s.features.orientation {
            x.push(rng.random_range(-s.max_tilt..=s.max_tilt));
        }
        StateVector(x)
    }

    fn start_state(&self, rng: &mut dyn RngCore) -> StateVector {
        self.sample_state(rng)
    }

    fn state_scale(&self) -> Vec<f64> {
        let mut scale = vec![0.5; 3];
        if self.scene.features.orientation {
            scale.push(self.scene.max_tilt);
        }
        scale
    }

    fn geometry(&self) -> serde_json::Value {
        serde_json::json!({
            "cup": self.scene.cup,
            "plate": self.scene.plate,
            "table_z": self.scene.table_z,
            "workspace_lo": self.scene.workspace_lo,
            "workspace_hi": self.scene.workspace_hi,
            "action_bound": self.scene.action_bound,
        })
    }
}
