//! Golden shape table of the FRnet-1 stem and inception block.

use frnet::models::{build_frnet1, ModelConfig};

/// Per-instance shapes after each stage for the default tall input.
pub const FRNET1_SHAPES: &[(&str, [usize; 3])] = &[
    ("conv1", [106, 4, 32]),
    ("pool1", [53, 2, 32]),
    ("inception/a/reduce", [53, 2, 16]),
    ("inception/a/conv", [53, 2, 64]),
    ("inception/b/reduce", [53, 2, 16]),
    ("inception/b/conv", [53, 2, 64]),
    ("inception/c/reduce", [53, 2, 16]),
    ("inception/c/conv", [53, 2, 32]),
    ("inception/d/pool", [53, 2, 32]),
    ("inception", [53, 2, 192]),
];

/// Entries of the inferred trace that disagree with the table.
pub fn frnet1_mismatches() -> Vec<String> {
    let spec = build_frnet1(&ModelConfig::default()).unwrap();
    let trace = spec.infer_shapes().unwrap();
    let mut bad = Vec::new();
    if spec.input != [211, 7, 1] {
        bad.push(format!("input {:?}", spec.input));
    }
    for (name, want) in FRNET1_SHAPES {
        match trace.get(name) {
            Some(got) if got == want => {}
            other => bad.push(format!("{name}: expected {want:?}, got {other:?}")),
        }
    }
    bad
}
