use cavsim::control::{idm_accel, ControlConfig, HdvParams, LeaderObservation};
use cavsim::sim::lanechange::{
    is_safe, lane_change_decide, Ahead, Behind, Driver, LaneChangeConfig, LaneChangeInputs, TargetLane,
};
use cavsim::VehicleClass;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn driver(class: VehicleClass, v: f64) -> Driver {
    let headway = if class == VehicleClass::Cav { 1.1 } else { 1.5 };
    Driver { class, v, v0: 27.0, headway }
}

fn target(lane: usize, leader: Option<Ahead>, follower: Option<Behind>) -> TargetLane {
    TargetLane { lane, leader, follower, mandatory: false, yields_to_merger: false }
}

/// IDM deceleration the new follower would need, computed from the formula.
fn follower_need(f: &Behind, ego_speed: f64, cfg: &ControlConfig) -> f64 {
    let p = match f.driver.class {
        VehicleClass::Hdv => cfg.hdv.clone(),
        VehicleClass::Cav => HdvParams {
            time_headway: f.driver.headway,
            min_gap: cfg.cav.min_gap,
            max_accel: cfg.cav.max_accel,
            ..cfg.hdv.clone()
        },
    };
    idm_accel(f.driver.v, f.driver.v0, Some(&LeaderObservation::sensed(f.gap, ego_speed)), &p).unwrap().accel
}

#[test]
fn stays_when_both_sides_are_no_faster() {
    let cfg = ControlConfig::default();
    let lc = LaneChangeConfig::default();
    let slow = Some(Ahead { gap: 30.0, speed: 15.0 });
    let inputs = LaneChangeInputs {
        ego: driver(VehicleClass::Hdv, 15.0),
        current_leader: slow,
        left: Some(target(0, slow, None)),
        right: Some(target(2, slow, None)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(lane_change_decide(&inputs, &cfg, &lc, &mut rng), None);
}

#[test]
fn mandatory_side_wins_over_a_faster_optional_side() {
    let cfg = ControlConfig::default();
    let lc = LaneChangeConfig::default();
    let mut must = target(3, Some(Ahead { gap: 60.0, speed: 18.0 }), None);
    must.mandatory = true;
    let inputs = LaneChangeInputs {
        ego: driver(VehicleClass::Cav, 18.0),
        current_leader: Some(Ahead { gap: 40.0, speed: 18.0 }),
        left: Some(target(1, None, None)),
        right: Some(must),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(lane_change_decide(&inputs, &cfg, &lc, &mut rng), Some(3));
}

#[test]
fn cooperative_yield_rate_follows_the_weight() {
    let cfg = ControlConfig::default();
    let lc = LaneChangeConfig::default();
    let mut yield_lane = target(0, None, None);
    yield_lane.yields_to_merger = true;
    // Equal anticipated speeds on both lanes: only the yield term can move the ego.
    let inputs = LaneChangeInputs {
        ego: driver(VehicleClass::Hdv, 25.0),
        current_leader: None,
        left: Some(yield_lane),
        right: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let moved = (0..n).filter(|_| lane_change_decide(&inputs, &cfg, &lc, &mut rng).is_some()).count();
    let rate = moved as f64 / n as f64;
    assert!((rate - lc.lc_cooperative).abs() < 0.02, "yield rate {rate}");
}

proptest! {
    #[test]
    fn never_moves_into_an_unsafe_gap(
        v in 0.0f64..30.0,
        lead_gap in 1.0f64..120.0,
        lead_v in 0.0f64..30.0,
        back_gap in 1.0f64..120.0,
        back_v in 0.0f64..30.0,
        cav_ego in any::<bool>(),
        cav_back in any::<bool>(),
        mandatory in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = ControlConfig::default();
        let lc = LaneChangeConfig::default();
        let class = |c| if c { VehicleClass::Cav } else { VehicleClass::Hdv };
        let behind = Behind { gap: back_gap, driver: driver(class(cav_back), back_v) };
        let mut t = target(1, Some(Ahead { gap: lead_gap, speed: lead_v }), Some(behind));
        t.mandatory = mandatory;
        t.yields_to_merger = true;
        let ego = driver(class(cav_ego), v);
        let inputs = LaneChangeInputs { ego, current_leader: Some(Ahead { gap: 10.0, speed: 0.0 }), left: Some(t), right: None };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if lane_change_decide(&inputs, &cfg, &lc, &mut rng).is_some() {
            prop_assert!(is_safe(&ego, &t, &cfg, &lc));
            prop_assert!(back_gap > cfg.min_gap(behind.driver.class));
            prop_assert!(lead_gap > cfg.min_gap(ego.class));
            prop_assert!(follower_need(&behind, v, &cfg) >= -lc.safe_decel - 1e-12);
        }
    }

    #[test]
    fn empty_target_lane_is_always_safe(v in 0.0f64..40.0, cav in any::<bool>()) {
        let cfg = ControlConfig::default();
        let class = if cav { VehicleClass::Cav } else { VehicleClass::Hdv };
        prop_assert!(is_safe(&driver(class, v), &target(0, None, None), &cfg, &LaneChangeConfig::default()));
    }
}
