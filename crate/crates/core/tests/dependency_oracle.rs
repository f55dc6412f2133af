mod common;

use common::{check_oracle, load_oracles};

#[test]
fn suite_is_large_enough() {
    assert!(load_oracles().len() >= 15);
}

#[test]
fn every_fixture_matches_its_oracle() {
    let mut failures = Vec::new();
    for oracle in load_oracles() {
        let problems = check_oracle(&oracle);
        if !problems.is_empty() {
            failures.push(format!("{}:\n  {}", oracle.name, problems.join("\n  ")));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
