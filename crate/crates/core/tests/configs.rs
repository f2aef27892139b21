use std::path::Path;

use evmsafe::driver::load_config;

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let single = load_config(&dir.join("cpachecker.toml")).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].timeout_seconds, 900);
    let multi = load_config(&dir.join("multi.toml")).unwrap();
    let names: Vec<&str> = multi.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["cpachecker", "esbmc"]);
    assert!(multi[0]
        .argv(Path::new("a.c"), Path::new("p.prp"))
        .contains(&"a.c".to_string()));
}
