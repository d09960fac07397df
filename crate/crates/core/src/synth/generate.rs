//! Procedural scenes: road layout, signals, background traffic, an optional
//! hazard, and the logged ego trajectory.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Archetype, WorldConfig};
use super::motion::{Motion, Path, SpeedProfile};
use crate::scene::{point, signal, track, PolylineClass, Scenario, SignalState, TrackClass};

pub const LANE_WIDTH: f64 = 3.5;
pub const POINT_SPACING: f64 = 4.0;
pub const VISIBILITY_RADIUS: f64 = 60.0;
pub const EGO_LENGTH: f64 = 4.8;
pub const EGO_WIDTH: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    CutIn,
    LeadBrake,
    RedLightRunner,
    PullOut,
    PedestrianDartOut,
}

/// A generated scenario with the latent facts that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub scenario: Scenario,
    pub archetype: Archetype,
    pub hazard: Option<HazardKind>,
}

struct Poly {
    class: PolylineClass,
    x: f64,
    y: f64,
    heading: f64,
    /// Frame-local points.
    points: Vec<(f64, f64)>,
    width: f64,
    /// Segments of the same lane or marking share a group.
    group: usize,
}

impl Poly {
    fn distance_to_origin(&self) -> f64 {
        let (s, c) = self.heading.sin_cos();
        self.points
            .iter()
            .map(|&(u, v)| {
                let (x, y) = (self.x + u * c - v * s, self.y + u * s + v * c);
                x.hypot(y)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

struct Agent {
    motion: Motion,
    class: TrackClass,
    length: f64,
    width: f64,
    hazard: bool,
}

struct Signal {
    x: f64,
    y: f64,
    heading: f64,
    state: SignalState,
}

struct Builder<'a> {
    cfg: &'a WorldConfig,
    rng: ChaCha8Rng,
    polys: Vec<Poly>,
    signals: Vec<Signal>,
    agents: Vec<Agent>,
    v0: f64,
    ego_speed: SpeedProfile,
    /// Lanes of the main road as (lateral offset, heading).
    lanes: Vec<(f64, f64)>,
}

fn vehicle_extent(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.random_range(4.2..5.2), rng.random_range(1.8..2.1))
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a WorldConfig, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        let v0 = rng.random_range(cfg.speed[0]..cfg.speed[1]);
        Self {
            cfg,
            rng,
            polys: Vec::new(),
            signals: Vec::new(),
            agents: Vec::new(),
            v0,
            ego_speed: SpeedProfile::constant(v0),
            lanes: Vec::new(),
        }
    }

    fn segment_points(&self) -> usize {
        self.cfg.dims.points_per_polyline
    }

    /// Straight lane-center segments along a line through `(x, y)` with `heading`,
    /// covering arc positions `lo..hi`.
    fn lane_segments(&mut self, x: f64, y: f64, heading: f64, lo: f64, hi: f64, class: PolylineClass, width: f64) {
        let n = self.segment_points();
        let span = (n.max(2) - 1) as f64 * POINT_SPACING;
        let phase = self.rng.random_range(0.0..span);
        let (s, c) = heading.sin_cos();
        let mut u = lo - phase;
        let group = self.next_group();
        while u < hi {
            self.polys.push(Poly {
                class,
                x: x + u * c,
                y: y + u * s,
                heading,
                points: (0..n).map(|i| (i as f64 * POINT_SPACING, 0.0)).collect(),
                width,
                group,
            });
            u += span;
        }
    }

    /// A short marking across a road: `count` points spaced `step` apart.
    fn marking(&mut self, class: PolylineClass, x: f64, y: f64, heading: f64, length: f64, width: f64) {
        let n = self.segment_points();
        let count = ((length / LANE_WIDTH * 2.0).ceil() as usize + 1).clamp(2, n.max(2)).min(n);
        let step = length / (count.max(2) - 1) as f64;
        let group = self.next_group();
        self.polys.push(Poly {
            class,
            x,
            y,
            heading,
            points: (0..count).map(|i| (i as f64 * step, 0.0)).collect(),
            width,
            group,
        });
    }

    fn next_group(&self) -> usize {
        self.polys.iter().map(|p| p.group + 1).max().unwrap_or(0)
    }

    fn main_road(&mut self, allow_right: bool) {
        self.lanes.push((0.0, 0.0));
        self.lanes.push((LANE_WIDTH, 0.0));
        if allow_right && self.rng.random_bool(0.5) {
            self.lanes.push((-LANE_WIDTH, 0.0));
        }
        if self.rng.random_bool(0.6) {
            self.lanes.push((2.0 * LANE_WIDTH, PI));
            if self.rng.random_bool(0.4) {
                self.lanes.push((3.0 * LANE_WIDTH, PI));
            }
        }
        for (y, h) in self.lanes.clone() {
            let (x0, lo, hi) = if h == 0.0 { (0.0, -60.0, 140.0) } else { (0.0, -140.0, 60.0) };
            self.lane_segments(x0, y, h, lo, hi, PolylineClass::LaneCenter, LANE_WIDTH);
        }
    }

    fn road_edges(&self) -> (f64, f64) {
        let lo = self.lanes.iter().map(|l| l.0).fold(f64::INFINITY, f64::min) - LANE_WIDTH / 2.0;
        let hi = self.lanes.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max) + LANE_WIDTH / 2.0;
        (lo, hi)
    }

    fn far_signals(&mut self) {
        for k in 0..self.cfg.dims.signals {
            self.signals.push(Signal {
                x: 160.0 + 12.0 * k as f64,
                y: -6.0,
                heading: 0.0,
                state: SignalState::Unknown,
            });
        }
    }

    fn push_agent(&mut self, motion: Motion, class: TrackClass, extent: (f64, f64)) {
        self.agents.push(Agent {
            motion,
            class,
            length: extent.0,
            width: extent.1,
            hazard: false,
        });
    }

    fn push_hazard(&mut self, motion: Motion, class: TrackClass, extent: (f64, f64)) {
        self.agents.push(Agent {
            motion,
            class,
            length: extent.0,
            width: extent.1,
            hazard: true,
        });
    }

    /// Traffic in the main-road lanes. The ego lane only gets a lead that is
    /// not slower than ego and a follower well behind.
    fn lane_traffic(&mut self, count: usize) {
        let (slo, shi) = (self.cfg.speed[0], self.cfg.speed[1]);
        for _ in 0..count {
            let li = self.rng.random_range(0..self.lanes.len());
            let (y, h) = self.lanes[li];
            let ext = vehicle_extent(&mut self.rng);
            if y == 0.0 {
                let v = self.v0 + self.rng.random_range(0.0..3.0);
                let x = if self.rng.random_bool(0.6) {
                    self.rng.random_range(20.0..60.0)
                } else {
                    -self.rng.random_range(18.0..40.0)
                };
                let v = if x < 0.0 { self.v0 - self.rng.random_range(0.0..1.5) } else { v };
                self.push_agent(Motion::new(Path::line(x, y, h), SpeedProfile::constant(v)), TrackClass::Vehicle, ext);
            } else {
                let v = self.rng.random_range(slo..shi);
                let x = self.rng.random_range(-40.0..80.0);
                let class = if self.rng.random_bool(0.1) { TrackClass::Cyclist } else { TrackClass::Vehicle };
                let (ext, v) = if class == TrackClass::Cyclist {
                    ((1.8, 0.7), v.min(6.0))
                } else {
                    (ext, v)
                };
                self.push_agent(Motion::new(Path::line(x, y, h), SpeedProfile::constant(v)), class, ext);
            }
        }
    }

    fn sidewalk_pedestrians(&mut self, count: usize) {
        let (lo, hi) = self.road_edges();
        for _ in 0..count {
            let side = if self.rng.random_bool(0.5) { lo - 2.5 } else { hi + 2.5 };
            let x = self.rng.random_range(-20.0..70.0);
            let (h, v) = if self.rng.random_bool(0.5) {
                (if self.rng.random_bool(0.5) { 0.0 } else { PI }, self.rng.random_range(1.0..1.8))
            } else {
                (FRAC_PI_2, 0.0)
            };
            self.push_agent(
                Motion::new(Path::line(x, side, h), SpeedProfile::constant(v)),
                TrackClass::Pedestrian,
                (0.6, 0.6),
            );
        }
    }

    fn cones(&mut self, count: usize) {
        let (lo, _) = self.road_edges();
        for _ in 0..count {
            let x = self.rng.random_range(5.0..70.0);
            self.push_agent(
                Motion::new(Path::line(x, lo - 0.6, 0.0), SpeedProfile::constant(0.0)),
                TrackClass::Cone,
                (0.4, 0.4),
            );
        }
    }

    /// Log driver: anticipates and reacts at `t` with deceleration `a` down
    /// to `v_target`.
    fn ego_brakes(&mut self, t: f64, a: f64, v_target: f64) {
        self.ego_speed = SpeedProfile::change(self.v0, t.max(0.0), -a.clamp(1.5, 8.0), v_target.max(0.0));
    }

    fn cut_in(&mut self) {
        let left = self.rng.random_bool(0.6) || !self.lanes.iter().any(|l| l.0 == -LANE_WIDTH);
        let y = if left { LANE_WIDTH } else { -LANE_WIDTH };
        let dv = self.rng.random_range(0.0..7.0);
        let va = (self.v0 - dv).max(2.0);
        let dv = self.v0 - va;
        let tc = self.rng.random_range(0.3..1.5);
        let gap = self.rng.random_range(2.0..25.0);
        let ext = vehicle_extent(&mut self.rng);
        let xa0 = self.v0 * tc + gap + (ext.0 + EGO_LENGTH) / 2.0 - va * tc;
        let length = (va * 2.0).max(8.0);
        let path = Path::line(xa0, y, 0.0).with_shift(va * tc, length, -y);
        self.push_hazard(Motion::new(path, SpeedProfile::constant(va)), TrackClass::Vehicle, ext);
        let room = (gap - 0.4 * dv - 2.0).max(0.5);
        self.ego_brakes(tc + 0.4, dv * dv / (2.0 * room), va - 1.0);
    }

    fn lead_brake(&mut self) {
        let gap = self.rng.random_range(6.0..25.0);
        let ext = vehicle_extent(&mut self.rng);
        let v = self.v0 + self.rng.random_range(-1.0..1.0);
        let tb = self.rng.random_range(0.5..2.0);
        let a = self.rng.random_range(3.0..9.0);
        let x = gap + (ext.0 + EGO_LENGTH) / 2.0;
        self.push_hazard(
            Motion::new(Path::line(x, 0.0, 0.0), SpeedProfile::change(v, tb, -a, 0.0)),
            TrackClass::Vehicle,
            ext,
        );
        self.ego_brakes(tb + 0.3, a + 1.0, 0.0);
    }

    fn pull_out(&mut self) {
        let tp = self.rng.random_range(0.3..2.0);
        let gap = self.rng.random_range(5.0..30.0);
        let ext = vehicle_extent(&mut self.rng);
        let x = self.v0 * tp + gap + (ext.0 + EGO_LENGTH) / 2.0;
        let path = Path::line(x, -LANE_WIDTH, 0.0).with_shift(0.0, 10.0, LANE_WIDTH);
        self.push_hazard(
            Motion::new(path, SpeedProfile::change(0.0, tp, 2.0, 4.0)),
            TrackClass::Vehicle,
            ext,
        );
        let room = (gap - 3.0).max(0.5);
        self.ego_brakes(tp + 0.3, self.v0 * self.v0 / (2.0 * room), 0.0);
    }

    fn dart_out(&mut self, x_cw: f64) {
        let (lo, _) = self.road_edges();
        let vp = self.rng.random_range(1.5..3.0);
        let t_arrive = (x_cw - EGO_LENGTH / 2.0) / self.v0 + self.rng.random_range(-1.0..1.0);
        let start = lo - 1.0;
        let ts = t_arrive - (0.0 - start) / vp;
        let (y0, ts) = if ts < 0.0 { (start - vp * ts, 0.0) } else { (start, ts) };
        self.push_hazard(
            Motion::new(Path::line(x_cw, y0, FRAC_PI_2), SpeedProfile::change(0.0, ts, 4.0, vp)),
            TrackClass::Pedestrian,
            (0.6, 0.6),
        );
        let room = (x_cw - EGO_LENGTH / 2.0 - 3.0).max(1.0);
        self.ego_brakes(ts + 0.3, self.v0 * self.v0 / (2.0 * room), 0.0);
    }

    fn straight_road(&mut self, hazard: bool, agents: usize) -> Option<HazardKind> {
        self.main_road(true);
        self.far_signals();
        let kind = hazard.then(|| if self.rng.random_bool(0.5) { HazardKind::CutIn } else { HazardKind::LeadBrake });
        match kind {
            Some(HazardKind::CutIn) => self.cut_in(),
            Some(_) => self.lead_brake(),
            None => {}
        }
        let cones = usize::from(self.rng.random_bool(0.2));
        self.lane_traffic(agents.saturating_sub(cones));
        self.cones(cones);
        kind
    }

    fn double_parked(&mut self, hazard: bool, agents: usize) -> Option<HazardKind> {
        self.main_road(false);
        self.far_signals();
        self.lane_segments(0.0, -LANE_WIDTH, 0.0, -60.0, 140.0, PolylineClass::Parking, 2.5);
        let kind = hazard.then(|| if self.rng.random_bool(0.7) { HazardKind::PullOut } else { HazardKind::CutIn });
        match kind {
            Some(HazardKind::PullOut) => self.pull_out(),
            Some(_) => self.cut_in(),
            None => {}
        }
        let parked = agents / 2 + 1;
        for _ in 0..parked {
            let x = self.rng.random_range(-30.0..80.0);
            let ext = vehicle_extent(&mut self.rng);
            self.push_agent(
                Motion::new(Path::line(x, -LANE_WIDTH, 0.0), SpeedProfile::constant(0.0)),
                TrackClass::Vehicle,
                ext,
            );
        }
        if self.rng.random_bool(0.5) {
            // stopped in the adjacent lane with hazard lights on
            let x = self.rng.random_range(15.0..60.0);
            let ext = vehicle_extent(&mut self.rng);
            self.push_agent(
                Motion::new(Path::line(x, LANE_WIDTH, 0.0), SpeedProfile::constant(0.0)),
                TrackClass::Vehicle,
                ext,
            );
        }
        self.lane_traffic(agents.saturating_sub(parked));
        kind
    }

    fn crosswalk(&mut self, hazard: bool, agents: usize) -> Option<HazardKind> {
        self.main_road(true);
        self.far_signals();
        let x_cw = self.v0 * self.rng.random_range(1.5..3.5);
        let (lo, hi) = self.road_edges();
        self.marking(PolylineClass::Crosswalk, x_cw, lo - 1.0, FRAC_PI_2, hi - lo + 2.0, 3.0);
        let kind = hazard.then(|| {
            if self.rng.random_bool(0.7) {
                HazardKind::PedestrianDartOut
            } else {
                HazardKind::LeadBrake
            }
        });
        match kind {
            Some(HazardKind::PedestrianDartOut) => self.dart_out(x_cw),
            Some(_) => self.lead_brake(),
            None => {}
        }
        let waiting = (agents / 3).max(1);
        for _ in 0..waiting {
            let y = if self.rng.random_bool(0.5) { lo - 1.5 } else { hi + 1.5 };
            let x = x_cw + self.rng.random_range(-1.5..1.5);
            let h = if y < 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
            self.push_agent(
                Motion::new(Path::line(x, y, h), SpeedProfile::constant(0.0)),
                TrackClass::Pedestrian,
                (0.6, 0.6),
            );
        }
        let walkers = agents.saturating_sub(waiting) / 3;
        self.sidewalk_pedestrians(walkers);
        self.lane_traffic(agents.saturating_sub(waiting + walkers));
        kind
    }

    fn intersection(&mut self, hazard: bool, agents: usize) -> Option<HazardKind> {
        self.main_road(false);
        let x_int = self.v0 * self.rng.random_range(1.5..3.5) + LANE_WIDTH / 2.0;
        let (lo, hi) = self.road_edges();
        let north = x_int - LANE_WIDTH / 2.0;
        let south = x_int + LANE_WIDTH / 2.0;
        self.lane_segments(north, 0.0, FRAC_PI_2, -80.0, 80.0, PolylineClass::LaneCenter, LANE_WIDTH);
        self.lane_segments(south, 0.0, -FRAC_PI_2, -80.0, 80.0, PolylineClass::LaneCenter, LANE_WIDTH);
        let stop_x = x_int - LANE_WIDTH - 3.0;
        let forward_edge = self
            .lanes
            .iter()
            .filter(|l| l.1 == 0.0)
            .map(|l| l.0 + LANE_WIDTH / 2.0)
            .fold(lo, f64::max);
        self.marking(PolylineClass::StopLine, stop_x, lo, FRAC_PI_2, forward_edge - lo, 0.3);
        self.marking(PolylineClass::StopLine, north - LANE_WIDTH / 2.0, lo - 3.0, 0.0, LANE_WIDTH, 0.3);
        self.marking(PolylineClass::StopLine, south + LANE_WIDTH / 2.0, hi + 3.0, PI, LANE_WIDTH, 0.3);
        self.marking(PolylineClass::Crosswalk, stop_x + 1.5, lo - 1.0, FRAC_PI_2, hi - lo + 2.0, 3.0);
        self.marking(PolylineClass::Crosswalk, x_int + LANE_WIDTH + 1.5, lo - 1.0, FRAC_PI_2, hi - lo + 2.0, 3.0);
        let poses = [
            (stop_x, lo - 2.0, 0.0, SignalState::Green),
            (north - LANE_WIDTH, lo - 3.0, FRAC_PI_2, SignalState::Red),
            (south + LANE_WIDTH, hi + 3.0, -FRAC_PI_2, SignalState::Red),
            (x_int + LANE_WIDTH + 3.0, hi + 2.0, PI, SignalState::Green),
        ];
        for k in 0..self.cfg.dims.signals {
            let (x, y, heading, state) = poses[k % poses.len()];
            self.signals.push(Signal {
                x: x + 30.0 * (k / poses.len()) as f64,
                y,
                heading,
                state,
            });
        }

        let kind = hazard.then(|| {
            if self.rng.random_bool(0.7) {
                HazardKind::RedLightRunner
            } else {
                HazardKind::CutIn
            }
        });
        match kind {
            Some(HazardKind::RedLightRunner) => {
                let vc = self.rng.random_range(8.0..14.0);
                let t_conflict = north / self.v0 + self.rng.random_range(-1.2..1.2);
                let y0 = -vc * t_conflict;
                let ext = vehicle_extent(&mut self.rng);
                self.push_hazard(
                    Motion::new(Path::line(north, y0, FRAC_PI_2), SpeedProfile::constant(vc)),
                    TrackClass::Vehicle,
                    ext,
                );
                let room = (stop_x - EGO_LENGTH / 2.0 - self.v0 * 0.3).max(1.0);
                self.ego_brakes(0.3, self.v0 * self.v0 / (2.0 * room), 0.0);
            }
            Some(_) => self.cut_in(),
            None => {}
        }
        // cross traffic waits at its stop lines
        let queued = agents / 3;
        for i in 0..queued {
            let ext = vehicle_extent(&mut self.rng);
            let (x, y, h) = if i % 2 == 0 {
                (north, lo - 3.0 - ext.0 / 2.0 - 1.0 - 7.0 * (i / 2) as f64, FRAC_PI_2)
            } else {
                (south, hi + 3.0 + ext.0 / 2.0 + 1.0 + 7.0 * (i / 2) as f64, -FRAC_PI_2)
            };
            self.push_agent(Motion::new(Path::line(x, y, h), SpeedProfile::constant(0.0)), TrackClass::Vehicle, ext);
        }
        let peds = agents.saturating_sub(queued) / 4;
        self.sidewalk_pedestrians(peds);
        self.lane_traffic(agents.saturating_sub(queued + peds));
        kind
    }

    fn build(mut self, index: u64) -> GeneratedScene {
        let cfg = self.cfg;
        let archetype = cfg.archetypes.pick(self.rng.random());
        let hazard = self.rng.random::<f64>() < cfg.hazard;
        let agents = self.rng.random_range(cfg.agents[0]..=cfg.agents[1]);
        let hazard_kind = match archetype {
            Archetype::StraightRoad => self.straight_road(hazard, agents),
            Archetype::Intersection => self.intersection(hazard, agents),
            Archetype::DoubleParked => self.double_parked(hazard, agents),
            Archetype::Crosswalk => self.crosswalk(hazard, agents),
        };
        let scenario = self.render(format!("{}-{index:07}", cfg.seed));
        GeneratedScene {
            scenario,
            archetype,
            hazard: hazard_kind,
        }
    }

    fn render(mut self, id: String) -> Scenario {
        let dims = self.cfg.dims;
        let dt = self.cfg.dt;
        let mut s = Scenario::blank(dims, id, dt as f32);
        let ego = Motion::new(Path::line(0.0, 0.0, 0.0), self.ego_speed);
        let times: Vec<f64> = (0..dims.timesteps).map(|t| t as f64 * dt).collect();
        let ego_pos: Vec<(f64, f64)> = times.iter().map(|&t| ego.position(t)).collect();

        let write = |s: &mut Scenario, n: usize, t: usize, m: &Motion, class: TrackClass, ext: (f64, f64)| {
            let k = m.at(times[t]);
            let row = s.track_mut(n, t);
            row.fill(0.0);
            let vals = [
                k.x,
                k.y,
                k.heading.sin(),
                k.heading.cos(),
                k.vx,
                k.vy,
                k.ax,
                k.ay,
                ext.0,
                ext.1,
            ];
            for (c, v) in vals.into_iter().enumerate() {
                row[c] = v as f32;
            }
            row[track::CLASS + class as usize] = 1.0;
            row[track::EXISTENCE] = 1.0;
        };
        for t in 0..dims.timesteps {
            write(&mut s, 0, t, &ego, TrackClass::Vehicle, (EGO_LENGTH, EGO_WIDTH));
        }

        let visible = |m: &Motion, t: usize| {
            let (x, y) = m.position(times[t]);
            (x - ego_pos[t].0).hypot(y - ego_pos[t].1) <= VISIBILITY_RADIUS
        };
        let mut agents: Vec<(bool, f64, usize)> = self
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| (0..dims.timesteps).any(|t| visible(&a.motion, t)))
            .map(|(i, a)| {
                let (x, y) = a.motion.position(0.0);
                (!a.hazard, x.hypot(y), i)
            })
            .collect();
        agents.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for (row, &(_, _, i)) in agents.iter().take(dims.max_tracks - 1).enumerate() {
            let a = &self.agents[i];
            for t in 0..dims.timesteps {
                if visible(&a.motion, t) {
                    write(&mut s, row + 1, t, &a.motion, a.class, (a.length, a.width));
                }
            }
        }

        for (k, sig) in self.signals.iter().enumerate().take(dims.signals) {
            for t in 0..dims.timesteps {
                let row = s.signal_mut(k, t);
                row.fill(0.0);
                row[signal::X] = sig.x as f32;
                row[signal::Y] = sig.y as f32;
                row[signal::SIN] = sig.heading.sin() as f32;
                row[signal::COS] = sig.heading.cos() as f32;
                row[signal::LABEL + sig.state as usize] = 1.0;
            }
        }

        // nearest segment of every lane or marking first, then nearest overall
        let mut by_distance: Vec<(f64, usize)> = self
            .polys
            .iter()
            .enumerate()
            .map(|(i, p)| (p.distance_to_origin(), i))
            .collect();
        by_distance.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let mut seen = vec![false; self.next_group()];
        let mut chosen = Vec::with_capacity(dims.polylines);
        for &(d, i) in &by_distance {
            let g = self.polys[i].group;
            if !seen[g] && chosen.len() < dims.polylines {
                seen[g] = true;
                chosen.push((d, i));
            }
        }
        for &(d, i) in &by_distance {
            if chosen.len() >= dims.polylines {
                break;
            }
            if !chosen.iter().any(|c| c.1 == i) {
                chosen.push((d, i));
            }
        }
        chosen.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let polys = std::mem::take(&mut self.polys);
        for (z, &(_, i)) in chosen.iter().enumerate() {
            let p = &polys[i];
            s.frame_mut(z)
                .copy_from_slice(&[p.x as f32, p.y as f32, p.heading.sin() as f32, p.heading.cos() as f32]);
            let lab = s.label_mut(z);
            lab.fill(0.0);
            lab[p.class as usize] = 1.0;
            for (j, &(u, v)) in p.points.iter().take(dims.points_per_polyline).enumerate() {
                let pt = s.point_mut(z, j);
                pt[point::X] = u as f32;
                pt[point::Y] = v as f32;
                pt[point::WIDTH] = p.width as f32;
                pt[point::EXISTENCE] = 1.0;
            }
        }
        s
    }
}

/// Deterministic in `(cfg.seed, index)`.
pub fn generate(cfg: &WorldConfig, index: u64) -> GeneratedScene {
    Builder::new(cfg, index).build(index)
}

pub fn generate_scenario(cfg: &WorldConfig, index: u64) -> Scenario {
    generate(cfg, index).scenario
}
