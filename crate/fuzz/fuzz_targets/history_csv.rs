#![no_main]

use delay_dtp::sdde::HistoryBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(h) = HistoryBuffer::read_csv(data) {
        assert_eq!(h.iter().count(), h.delay_steps() + 1);
        let mut out = Vec::new();
        h.write_csv(&mut out).expect("in-memory write");
        let _ = HistoryBuffer::read_csv(out.as_slice());
    }
});
