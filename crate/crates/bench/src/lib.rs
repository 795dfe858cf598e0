//! Shared fixtures for the benchmarks.

use uavap::detection::BBox;
use uavap::dynamics::QuadState;
use uavap::mission::sim::Sim;
use uavap::raster::GrayFrame;
use uavap::scenario::Scenario;
use uavap::world::WorldPoint;

/// Hovering 70 m short of the default turbine, level with the hub.
pub fn turbine_sim() -> Sim {
    let sc = Scenario::turbine().noiseless();
    let mut sim = Sim::new(&sc);
    let o = &sc.objects[0];
    sim.quad = QuadState::at_rest(WorldPoint::new(o.north - 70.0, o.east, -o.hub_height), 0.0);
    sim
}

/// Two consecutive frames of the turbine view and the detection box.
pub fn turbine_frames() -> (GrayFrame, GrayFrame, BBox) {
    let mut sim = turbine_sim();
    let a = sim.render();
    sim.advance_frame().expect("hover is stable");
    let b = sim.render();
    let bbox = sim.detect(0).expect("turbine in view");
    (a, b, bbox)
}
