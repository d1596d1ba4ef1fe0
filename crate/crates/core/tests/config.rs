use cavsim::{GridCell, ScenarioConfig, SimError};

#[test]
fn loads_a_partial_override_file_only_when_complete() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let mut cfg = ScenarioConfig::default();
    cfg.seed = 99;
    cfg.demand.mpr = 0.4;
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(ScenarioConfig::load(&path).unwrap(), cfg);

    std::fs::write(&path, "seed = 3\n").unwrap();
    assert!(matches!(ScenarioConfig::load(&path), Err(SimError::Config(_))));
}

#[test]
fn missing_file_is_a_config_error() {
    let err = ScenarioConfig::load("/nonexistent/cavsim.toml".as_ref()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn violations_name_the_field() {
    let cases: Vec<(&str, Box<dyn Fn(&mut ScenarioConfig)>)> = vec![
        ("dt", Box::new(|c| c.dt = 0.0)),
        ("demand.mpr", Box::new(|c| c.demand.mpr = 1.5)),
        ("channel.timeout", Box::new(|c| c.channel.timeout = -1.0)),
        ("control.cav.tau", Box::new(|c| c.control.cav.tau = 0.0)),
        ("control.hdv.emerg_decel", Box::new(|c| c.control.hdv.emerg_decel = 1.0)),
        ("network.edges[0]", Box::new(|c| c.network.edges[0].lanes = 0)),
        ("network.ramps[0]", Box::new(|c| c.network.ramps[0].position = 1e6)),
        ("lane_change.lc_cooperative", Box::new(|c| c.lane_change.lc_cooperative = 2.0)),
        ("batch.replications", Box::new(|c| c.batch.replications = 0)),
    ];
    for (field, tweak) in cases {
        let mut cfg = ScenarioConfig::default();
        tweak(&mut cfg);
        match cfg.validate() {
            Err(SimError::Config(msg)) => assert!(msg.contains(field), "{field}: {msg}"),
            other => panic!("{field}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn grid_cell_overrides_penetration_loss_and_seed() {
    let base = ScenarioConfig::default();
    let cell = base.with_cell(GridCell { mpr: 0.7, per: 0.7 }, 12);
    assert_eq!((cell.demand.mpr, cell.channel.per, cell.seed), (0.7, 0.7, 12));
    assert_eq!(cell.control, base.control);
    assert_eq!(cell.network, base.network);
}

#[test]
fn default_grid_is_the_seven_cell_matrix() {
    let grid = ScenarioConfig::default().batch.grid;
    let cells: Vec<(f64, f64)> = grid.iter().map(|c| (c.mpr, c.per)).collect();
    assert_eq!(cells, [(0.0, 0.0), (0.2, 0.0), (0.2, 0.7), (0.4, 0.0), (0.4, 0.7), (0.7, 0.0), (0.7, 0.7)]);
}
