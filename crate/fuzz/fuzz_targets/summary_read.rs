#![no_main]

use libfuzzer_sys::fuzz_target;
use trailscout::results::{read_summary, summary_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = read_summary(text) else { return };
    let written = summary_csv(&rows).expect("rows serialize");
    let back = read_summary(&written).expect("written summary parses");
    assert_eq!(back.len(), rows.len());
});
