#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use trailscout::campaign::parse_campaign_with;
use trailscout::domain::Raster;

const TINY: &str = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -9999\n1 2 3\n4 -9999 6\n";

fn load(path: &Path) -> Result<Raster, String> {
    if path.as_os_str().len() % 2 == 0 {
        TINY.parse().map_err(|e: trailscout::domain::RasterError| e.to_string())
    } else {
        Err("not found".into())
    }
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(campaign) = parse_campaign_with(text, &load) {
        assert!(campaign.trials_each >= 1);
        for cfg in &campaign.configs {
            assert!(cfg.validate().is_ok());
        }
        // parsing is a pure function of the text
        assert_eq!(parse_campaign_with(text, &load).unwrap(), campaign);
    }
});
