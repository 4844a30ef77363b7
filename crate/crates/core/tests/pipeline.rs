//! Configuration to fixed point to disk and back.

use std::path::Path;

use mfg_core::fixed_point::picard_solve;
use mfg_core::io::{field_checksum, parse_config, read_density, read_field, write_density, write_field};
use mfg_core::sde::{dpp_check, SCHEME_BIAS};
use mfg_core::wasserstein::sup_d1;

const CONFIG: &str = r#"
[model]
horizon = 0.25

[model.coupling]
gain = 0.5

[model.terminal]
kind = "cosine"
amplitude = 0.5
coupling_gain = 0.1

[model.initial]
center = [2.0]

[grid]
box_length = 4.0
nx = 32
nt = 80

[mc]
num_paths = 2000
seed = 3
"#;

#[test]
fn solved_fields_survive_a_round_trip_and_pass_the_dpp_check() {
    let cfg = parse_config(CONFIG, Path::new("inline.toml")).unwrap();
    let sol = picard_solve(&cfg.model, &cfg.grid, cfg.fixed_point).unwrap();
    assert!(sol.report.converged);

    let dir = tempfile::tempdir().unwrap();
    write_field(&sol.u, &dir.path().join("u")).unwrap();
    write_density(&sol.m, &dir.path().join("m")).unwrap();
    let u = read_field(&dir.path().join("u")).unwrap();
    let m = read_density(&dir.path().join("m")).unwrap();
    assert_eq!(field_checksum(&u), field_checksum(&sol.u));
    assert_eq!(sup_d1(&m, &sol.m).unwrap(), 0.0);

    let h = cfg.grid.time(cfg.grid.nt() / 8);
    let r = dpp_check(&u, &m, &cfg.model, &cfg.mc, h).unwrap();
    assert!(r.within(SCHEME_BIAS), "{r:?}");
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = parse_config(CONFIG, Path::new("inline.toml")).unwrap();
    let a = picard_solve(&cfg.model, &cfg.grid, cfg.fixed_point).unwrap();
    let b = picard_solve(&cfg.model, &cfg.grid, cfg.fixed_point).unwrap();
    assert_eq!(field_checksum(&a.u), field_checksum(&b.u));
    assert_eq!(field_checksum(a.m.field()), field_checksum(b.m.field()));
    assert_eq!(a.report, b.report);
}
