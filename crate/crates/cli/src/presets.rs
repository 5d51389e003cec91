//! Configurations shipped with the binary.

pub const NAMES: &[&str] = &[
    "paper_sec4",
    "paper_sec4_single",
    "deterministic_sec4",
    "scalar_deterministic",
    "zero_dynamics",
];

pub fn get(name: &str) -> Option<&'static str> {
    Some(match name {
        "paper_sec4" => include_str!("../presets/paper_sec4.toml"),
        "paper_sec4_single" => include_str!("../presets/paper_sec4_single.toml"),
        "deterministic_sec4" => include_str!("../presets/deterministic_sec4.toml"),
        "scalar_deterministic" => include_str!("../presets/scalar_deterministic.toml"),
        "zero_dynamics" => include_str!("../presets/zero_dynamics.toml"),
        _ => return None,
    })
}
