//! Scripted coverage trajectories on the discrete action lattice
//! (forward 10 cm, turn left/right 9 degrees).

use std::collections::{BTreeMap, VecDeque};

use super::{SceneModel, DEFAULT_CAMERA_HEIGHT};
use crate::error::{Error, Result};
use crate::geometry::Pose;

pub const FORWARD_STEP: f64 = 0.10;
pub const TURN_STEP_DEG: f64 = 9.0;
const HEADINGS: i32 = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub z: f64,
    /// Heading in radians; 0 faces +z, pi/2 faces +x.
    pub yaw: f64,
}

impl AgentState {
    pub fn camera_pose(&self, camera_y: f64) -> Pose {
        Pose::from_agent(self.x, self.z, self.yaw, camera_y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<AgentState>,
    pub camera_height: f64,
    pub forward_step: f64,
    pub turn_step_deg: f64,
}

impl Trajectory {
    pub fn new(states: Vec<AgentState>, camera_height: f64) -> Self {
        Trajectory {
            states,
            camera_height,
            forward_step: FORWARD_STEP,
            turn_step_deg: TURN_STEP_DEG,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageParams {
    pub agent_radius: f64,
    /// Distance between sweep lanes, in forward steps.
    pub lane_spacing_steps: i32,
    pub camera_height: f64,
}

impl Default for CoverageParams {
    fn default() -> Self {
        CoverageParams {
            agent_radius: 0.10,
            lane_spacing_steps: 10,
            camera_height: DEFAULT_CAMERA_HEIGHT,
        }
    }
}

/// Checks that consecutive states differ by exactly one legal action.
pub fn validate_trajectory(t: &Trajectory) -> Result<()> {
    const TOL: f64 = 1e-6;
    for (k, w) in t.states.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let moved = (b.x - a.x).hypot(b.z - a.z);
        let turn = (b.yaw - a.yaw).to_degrees().rem_euclid(360.0);
        let forward = (b.x - a.x - t.forward_step * a.yaw.sin()).abs() < TOL
            && (b.z - a.z - t.forward_step * a.yaw.cos()).abs() < TOL
            && (turn < TOL || turn > 360.0 - TOL);
        let rotate = moved < TOL
            && ((turn - t.turn_step_deg).abs() < TOL || (turn - (360.0 - t.turn_step_deg)).abs() < TOL);
        if !(forward || rotate) {
            return Err(Error::Invalid(format!("illegal transition at step {}: {a:?} -> {b:?}", k + 1)));
        }
    }
    Ok(())
}

/// Lattice of agent positions `center + 0.1 * (ix, iz)`.
struct Lattice {
    cx: f64,
    cz: f64,
    free: BTreeMap<(i32, i32), ()>,
}

impl Lattice {
    fn point(&self, (ix, iz): (i32, i32)) -> (f64, f64) {
        (self.cx + ix as f64 * FORWARD_STEP, self.cz + iz as f64 * FORWARD_STEP)
    }

    fn is_free(&self, p: (i32, i32)) -> bool {
        self.free.contains_key(&p)
    }

    fn bfs(&self, from: (i32, i32)) -> BTreeMap<(i32, i32), (i32, i32)> {
        let mut parent = BTreeMap::new();
        parent.insert(from, from);
        let mut queue = VecDeque::from([from]);
        while let Some(p) = queue.pop_front() {
            for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = (p.0 + d.0, p.1 + d.1);
                if self.is_free(n) && !parent.contains_key(&n) {
                    parent.insert(n, p);
                    queue.push_back(n);
                }
            }
        }
        parent
    }

    fn path(&self, from: (i32, i32), to: (i32, i32)) -> Vec<(i32, i32)> {
        let parent = self.bfs(from);
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = parent[&cur];
            path.push(cur);
        }
        path.reverse();
        path
    }
}

struct Walker<'a> {
    lattice: &'a Lattice,
    pos: (i32, i32),
    heading: i32,
    states: Vec<AgentState>,
}

impl Walker<'_> {
    fn emit(&mut self) {
        let (x, z) = self.lattice.point(self.pos);
        let yaw = (self.heading as f64 * TURN_STEP_DEG).to_radians();
        self.states.push(AgentState { x, z, yaw });
    }

    fn turn_to(&mut self, target: i32) {
        while self.heading != target {
            let diff = (target - self.heading).rem_euclid(HEADINGS);
            let step = if diff <= HEADINGS / 2 { 1 } else { -1 };
            self.heading = (self.heading + step).rem_euclid(HEADINGS);
            self.emit();
        }
    }

    fn step_to(&mut self, next: (i32, i32)) {
        let heading = match (next.0 - self.pos.0, next.1 - self.pos.1) {
            (0, 1) => 0,
            (1, 0) => 10,
            (0, -1) => 20,
            (-1, 0) => 30,
            d => unreachable!("non-adjacent lattice step {d:?}"),
        };
        self.turn_to(heading);
        self.pos = next;
        self.emit();
    }

    fn walk(&mut self, path: &[(i32, i32)]) {
        for &p in path.iter().skip(1) {
            self.step_to(p);
        }
    }

    fn scan(&mut self) {
        for _ in 0..HEADINGS {
            self.heading = (self.heading + 1).rem_euclid(HEADINGS);
            self.emit();
        }
    }
}

/// Boustrophedon sweep over the reachable free lattice with a full in-place
/// rotation scan at the end of every lane.
///
/// The agent spawns at the floor center facing +z. Lanes are lattice rows
/// `lane_spacing_steps` apart through the spawn row; each lane visits its
/// reachable points in alternating direction and transfers between points
/// along shortest lattice paths. A lattice point is free when the agent disk
/// keeps one diagonal cell of clearance from every box and the floor edge.
/// The seed is accepted for interface stability; the sweep is deterministic.
pub fn coverage_trajectory(scene: &SceneModel, _seed: u64, params: &CoverageParams) -> Result<Trajectory> {
    let clearance = params.agent_radius + 0.02;
    let (cx, cz) = scene.floor.center();
    let half_x = ((scene.floor.xmax - scene.floor.xmin) / 2.0 / FORWARD_STEP).ceil() as i32;
    let half_z = ((scene.floor.zmax - scene.floor.zmin) / 2.0 / FORWARD_STEP).ceil() as i32;
    let mut lattice = Lattice {
        cx,
        cz,
        free: BTreeMap::new(),
    };
    for iz in -half_z..=half_z {
        for ix in -half_x..=half_x {
            let (x, z) = lattice.point((ix, iz));
            let f = &scene.floor;
            let inside = x - clearance >= f.xmin
                && x + clearance <= f.xmax
                && z - clearance >= f.zmin
                && z + clearance <= f.zmax;
            if inside && scene.boxes.iter().all(|b| b.floor_distance(x, z) > clearance) {
                lattice.free.insert((ix, iz), ());
            }
        }
    }
    if lattice.free.is_empty() {
        return Err(Error::NoFreeSpace);
    }
    // spawn: lattice point nearest the center
    let spawn = *lattice
        .free
        .keys()
        .min_by_key(|(ix, iz)| (ix * ix + iz * iz, *iz, *ix))
        .expect("nonempty");
    let reachable = lattice.bfs(spawn);
    let spacing = params.lane_spacing_steps.max(1);

    let mut lanes: BTreeMap<i32, Vec<i32>> = BTreeMap::new();
    for &(ix, iz) in reachable.keys() {
        if (iz - spawn.1).rem_euclid(spacing) == 0 {
            lanes.entry(iz).or_default().push(ix);
        }
    }
    let mut walker = Walker {
        lattice: &lattice,
        pos: spawn,
        heading: 0,
        states: Vec::new(),
    };
    walker.emit();
    for (lane_idx, (iz, mut xs)) in lanes.into_iter().enumerate() {
        xs.sort_unstable();
        if lane_idx % 2 == 1 {
            xs.reverse();
        }
        for ix in xs {
            let target = (ix, iz);
            let (dx, dz) = (target.0 - walker.pos.0, target.1 - walker.pos.1);
            if dx.abs() + dz.abs() == 1 {
                walker.step_to(target);
            } else if target != walker.pos {
                let path = lattice.path(walker.pos, target);
                walker.walk(&path);
            }
        }
        walker.scan();
    }
    Ok(Trajectory::new(walker.states, params.camera_height))
}
