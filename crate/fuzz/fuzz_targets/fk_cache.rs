#![no_main]

use libfuzzer_sys::fuzz_target;
use loopon::io::{read_fk_cache, write_fk_cache};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_fk_cache(data) {
        assert_eq!(t.s.len(), t.k_max + 1);
        let mut buf = Vec::new();
        write_fk_cache(&mut buf, &t).unwrap();
        let back = read_fk_cache(&buf[..]).unwrap();
        assert_eq!(back.s, t.s);
    }
});
