#![no_main]

use delay_dtp::path::Path;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(path) = Path::read_csv(data) {
        let mut out = Vec::new();
        path.write_csv(&mut out).expect("in-memory write");
        let back = Path::read_csv(out.as_slice()).expect("written paths parse");
        assert_eq!(back.nodes, path.nodes);
    }
});
