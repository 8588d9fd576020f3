use std::path::PathBuf;

use collabcal::config::{RunConfig, SweepFile};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn shipped_run_config_lists_the_defaults() {
    assert_eq!(RunConfig::load(shipped("run.toml")).unwrap(), RunConfig::default());
}

#[test]
fn shipped_sweep_grid_is_valid() {
    let grid = SweepFile::load(shipped("sweep.toml")).unwrap();
    assert_eq!(grid.noise_levels.len(), 5);
    assert_eq!(grid.delays, vec![0.0, 0.1, 0.2, 0.4]);
    assert_eq!(grid.flags.len(), 4);
    assert_eq!(grid.cells(), 5 * 4 * 4);
}
