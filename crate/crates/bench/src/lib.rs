//! Small fixtures shared by the benchmarks.

use hpo_core::{Dataset, ExperimentConfig, Split, SysidSample, System, Task};

/// Hidden-physics dataset sized for one desk-scale batch.
pub fn dhpo_fixture(system: System) -> (ExperimentConfig, Dataset) {
    let mut c = ExperimentConfig::desk(system, Task::Dhpo, 1);
    let d = c.dhpo.as_mut().unwrap();
    d.model.n_train = d.model.batch_size;
    d.model.n_test = 1;
    let data = Dataset::generate(&c).expect("fixture generates");
    (c, data)
}

/// Identification dataset just large enough for one batch.
pub fn sysid_fixture(system: System) -> (ExperimentConfig, Dataset, Vec<SysidSample>) {
    let mut c = ExperimentConfig::desk(system, Task::Sysid, 1);
    let s = c.sysid.as_mut().unwrap();
    s.n_values = 12;
    s.n_functions = 5;
    s.n_train = 55;
    s.n_test = 5;
    let data = Dataset::generate(&c).expect("fixture generates");
    let samples = data.sysid_samples(Split::Train).unwrap().into_iter().map(|(_, s)| s).collect();
    (c, data, samples)
}
