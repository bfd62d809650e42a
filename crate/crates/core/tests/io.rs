use loopon::io::{
    fk_cache_name, parse_expr, read_fk_cache, read_jsonl, write_fk_cache, write_jsonl, RunConfig, RunManifest,
    ConfigValue, SEED_RULE, TOOL_VERSION,
};
use loopon::params::{derive_params, Selector};
use loopon::partition::{fk_table, FkMethod};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[test]
fn fk_cache_round_trips_bit_for_bit() {
    let h = parse_expr("4/(3pi^2)").unwrap();
    let params = derive_params(2.0, Selector::O2 { h }).unwrap();
    let table = fk_table(&params, 300, FkMethod::O2ClosedForm).unwrap();
    let mut buf = Vec::new();
    write_fk_cache(&mut buf, &table).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("#{"));
    assert_eq!(text.lines().nth(1), Some("k,s_k"));
    let back = read_fk_cache(&buf[..]).unwrap();
    assert_eq!(back.s, table.s);
    assert_eq!(back.params, table.params);
    assert_eq!(back.method, table.method);
    assert_eq!(back.tail_constant.to_bits(), table.tail_constant.to_bits());
    assert!(fk_cache_name(&params, 300).starts_with("fk_"));
    assert!(fk_cache_name(&params, 300).ends_with("_300.csv"));
}

#[test]
fn damaged_caches_are_rejected() {
    let params = derive_params(2f64.sqrt(), Selector::Dilute).unwrap();
    let table = fk_table(&params, 20, FkMethod::RhoMoments).unwrap();
    let mut buf = Vec::new();
    write_fk_cache(&mut buf, &table).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let drop_row = [&lines[..5], &lines[6..]].concat().join("\n");
    assert!(read_fk_cache(drop_row.as_bytes()).is_err());
    let truncated = lines[..10].join("\n");
    assert!(read_fk_cache(truncated.as_bytes()).is_err());
    let negative = text.replacen("\n3,", "\n3,-", 1);
    assert!(read_fk_cache(negative.as_bytes()).is_err());
    let no_meta = lines[1..].join("\n");
    assert!(read_fk_cache(no_meta.as_bytes()).is_err());
    let bad_header = text.replacen("k,s_k", "k,f_k", 1);
    assert!(read_fk_cache(bad_header.as_bytes()).is_err());
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Rec {
    p: u64,
    v: f64,
}

#[test]
fn jsonl_round_trip_keeps_metadata() {
    let recs = vec![Rec { p: 3, v: 1.5 }, Rec { p: 7, v: 0.1 + 0.2 }];
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &serde_json::json!({"seed": 7}), &recs).unwrap();
    let (meta, back): (_, Vec<Rec>) = read_jsonl(&buf[..]).unwrap();
    assert_eq!(meta.unwrap()["seed"], 7);
    assert_eq!(back, recs);
    assert!(read_jsonl::<_, Rec>("{\"p\":1}\n".as_bytes()).is_err());
}

#[test]
fn manifest_core_drops_run_dependent_fields() {
    let mut args = BTreeMap::new();
    args.insert("p".to_string(), ConfigValue::Int(512));
    let m = RunManifest {
        tool_version: TOOL_VERSION.into(),
        params: Some(derive_params(2f64.sqrt(), Selector::Dilute).unwrap()),
        command: "volume".into(),
        args,
        master_seed: 7,
        replicas: 2000,
        seed_rule: SEED_RULE.into(),
        cache_files: vec![],
        outputs: vec![],
        wall_time_s: 1.25,
        error: None,
    };
    let text = serde_json::to_string_pretty(&m).unwrap();
    assert_eq!(RunManifest::parse(&text).unwrap(), m);
    assert_eq!(m.core().wall_time_s, 0.0);
    let cfg: RunConfig = m.to_config();
    assert_eq!(cfg.to_args(), vec!["volume", "--p", "512"]);
}
