// Own test binary: the seed override is process-wide state.

use airfl::harness::config::SEED_ENV;
use airfl::harness::ExperimentConfig;

#[test]
fn environment_overrides_the_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&ExperimentConfig::desk_preset()).unwrap()).unwrap();

    std::env::remove_var(SEED_ENV);
    assert_eq!(ExperimentConfig::load(&path).unwrap().seeds.master, 2024);
    std::env::set_var(SEED_ENV, " 77 ");
    assert_eq!(ExperimentConfig::load(&path).unwrap().seeds.master, 77);
    std::env::set_var(SEED_ENV, "-3");
    assert!(ExperimentConfig::load(&path).is_err());
    std::env::remove_var(SEED_ENV);
}
