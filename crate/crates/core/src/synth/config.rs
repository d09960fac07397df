use serde::{Deserialize, Serialize};

use crate::scene::ScenarioDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    StraightRoad,
    Intersection,
    DoubleParked,
    Crosswalk,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::StraightRoad,
        Archetype::Intersection,
        Archetype::DoubleParked,
        Archetype::Crosswalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::StraightRoad => "straight_road",
            Archetype::Intersection => "intersection",
            Archetype::DoubleParked => "double_parked",
            Archetype::Crosswalk => "crosswalk",
        }
    }
}

/// Probabilities over the four scene archetypes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeMix {
    pub straight_road: f64,
    pub intersection: f64,
    pub double_parked: f64,
    pub crosswalk: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        Self {
            straight_road: 0.4,
            intersection: 0.25,
            double_parked: 0.15,
            crosswalk: 0.2,
        }
    }
}

impl ArchetypeMix {
    pub fn only(a: Archetype) -> Self {
        let mut m = Self {
            straight_road: 0.0,
            intersection: 0.0,
            double_parked: 0.0,
            crosswalk: 0.0,
        };
        match a {
            Archetype::StraightRoad => m.straight_road = 1.0,
            Archetype::Intersection => m.intersection = 1.0,
            Archetype::DoubleParked => m.double_parked = 1.0,
            Archetype::Crosswalk => m.crosswalk = 1.0,
        }
        m
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.straight_road, self.intersection, self.double_parked, self.crosswalk]
    }

    /// Maps a uniform draw in `[0, 1)` to an archetype.
    pub fn pick(&self, u: f64) -> Archetype {
        let mut acc = 0.0;
        for (a, p) in Archetype::ALL.iter().zip(self.as_array()) {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        *Archetype::ALL
            .iter()
            .zip(self.as_array())
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(a, _)| a)
            .unwrap_or(&Archetype::StraightRoad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub dims: ScenarioDims,
    pub dt: f64,
    pub archetypes: ArchetypeMix,
    /// Inclusive range of non-ego agents placed in a scene (before visibility culling).
    pub agents: [usize; 2],
    /// Ego and traffic speed range in m/s.
    pub speed: [f64; 2],
    /// Probability that a scenario contains a hazard event (cut-in, hard
    /// braking lead, red-light runner, pull-out or pedestrian dart-out).
    pub hazard: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: ScenarioDims::compact(),
            dt: 0.5,
            archetypes: ArchetypeMix::default(),
            agents: [3, 10],
            speed: [8.0, 15.0],
            hazard: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn check(&self) -> Result<(), String> {
        let mut problems = self.dims.check();
        let mix = self.archetypes.as_array();
        if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            problems.push(format!("archetype probabilities must be >= 0 and sum to 1, got {mix:?}"));
        }
        if self.agents[0] > self.agents[1] {
            problems.push(format!("agent range {:?} is empty", self.agents));
        }
        if !(self.speed[0] > 0.0 && self.speed[0] < self.speed[1] && self.speed[1].is_finite()) {
            problems.push(format!("speed range {:?} must be positive and non-degenerate", self.speed));
        }
        if !(0.0..=1.0).contains(&self.hazard) {
            problems.push(format!("hazard intensity {} outside [0, 1]", self.hazard));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}
