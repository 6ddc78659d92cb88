#![allow(dead_code)]

use std::path::PathBuf;

use lyagate_core::{Analysis, Config, SystemSpecFile};

pub fn systems_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../systems")
}

pub fn spec(name: &str) -> SystemSpecFile {
    SystemSpecFile::from_path(systems_dir().join(format!("{name}.json"))).expect("system file")
}

pub fn analysis_with(name: &str, config: Config) -> Analysis {
    let spec = spec(name);
    Analysis::new(spec.to_model().expect("model"), config).expect("analysis")
}

pub fn analysis(name: &str) -> Analysis {
    let spec = spec(name);
    let config = spec.settings.clone();
    Analysis::new(spec.to_model().expect("model"), config).expect("analysis")
}

/// The 1-D example: `ẋ = −x + u`, `φ = x²`, levels `(0, 1, 9)` on `[−3, 3]`.
pub fn example() -> Analysis {
    analysis("example1d")
}

/// Cell whose representative lies in `[lo, hi]` (first coordinate).
pub fn cell_at(a: &Analysis, x: f64) -> usize {
    match a.complex.locate(&[x]).expect("locate") {
        lyagate_core::partition::Located::Interior(c) => c,
        other => panic!("{x} is not interior: {other:?}"),
    }
}

pub fn control(a: &Analysis, name: &str) -> usize {
    a.model.control_index(name).expect("control")
}
