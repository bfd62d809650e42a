#![no_main]

use libfuzzer_sys::fuzz_target;
use loopon::io::{read_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, recs)) = read_jsonl::<_, serde_json::Value>(data) {
        let meta = meta.unwrap_or(serde_json::Value::Null);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &meta, &recs).unwrap();
        let (_, back) = read_jsonl::<_, serde_json::Value>(&buf[..]).unwrap();
        assert_eq!(back, recs);
    }
});
