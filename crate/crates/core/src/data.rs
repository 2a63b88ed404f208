//! Floor plans, pathways and scenarios compiled into the library.

use crate::config::EdSize;

pub const PATHWAY_MANIFEST: &str = include_str!("../data/pathways/manifest.yaml");

pub const PATHWAY_FILES: [(&str, &str); 8] = [
    (
        "cardiac.yaml",
        include_str!("../data/pathways/cardiac.yaml"),
    ),
    ("trauma.yaml", include_str!("../data/pathways/trauma.yaml")),
    (
        "abdominal_pain.yaml",
        include_str!("../data/pathways/abdominal_pain.yaml"),
    ),
    (
        "chest_pain.yaml",
        include_str!("../data/pathways/chest_pain.yaml"),
    ),
    (
        "fracture.yaml",
        include_str!("../data/pathways/fracture.yaml"),
    ),
    (
        "laceration.yaml",
        include_str!("../data/pathways/laceration.yaml"),
    ),
    ("uri.yaml", include_str!("../data/pathways/uri.yaml")),
    (
        "medication_refill.yaml",
        include_str!("../data/pathways/medication_refill.yaml"),
    ),
];

pub const FLOOR_PLANS: [(&str, &str); 3] = [
    ("medium", include_str!("../data/floorplans/medium.yaml")),
    ("large", include_str!("../data/floorplans/large.yaml")),
    ("xlarge", include_str!("../data/floorplans/xlarge.yaml")),
];

pub const SCENARIOS: [(EdSize, &str); 3] = [
    (
        EdSize::Medium,
        include_str!("../data/scenarios/medium.yaml"),
    ),
    (EdSize::Large, include_str!("../data/scenarios/large.yaml")),
    (
        EdSize::Xlarge,
        include_str!("../data/scenarios/xlarge.yaml"),
    ),
];

pub fn pathway_documents() -> Vec<(String, String)> {
    PATHWAY_FILES
        .iter()
        .map(|(n, t)| (n.to_string(), t.to_string()))
        .collect()
}

pub fn floor_plan(name: &str) -> Option<&'static str> {
    FLOOR_PLANS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
}

pub fn scenario(size: EdSize) -> &'static str {
    SCENARIOS
        .iter()
        .find(|(s, _)| *s == size)
        .map(|(_, t)| *t)
        .expect("every size ships a scenario")
}

/// Every shipped file as `(relative path, contents)`.
pub fn all_files() -> Vec<(String, &'static str)> {
    let mut out = vec![("pathways/manifest.yaml".to_string(), PATHWAY_MANIFEST)];
    out.extend(
        PATHWAY_FILES
            .iter()
            .map(|(n, t)| (format!("pathways/{n}"), *t)),
    );
    out.extend(
        FLOOR_PLANS
            .iter()
            .map(|(n, t)| (format!("floorplans/{n}.yaml"), *t)),
    );
    out.extend(
        SCENARIOS
            .iter()
            .map(|(s, t)| (format!("scenarios/{}.yaml", s.as_str()), *t)),
    );
    out
}
