#![no_main]

use libfuzzer_sys::fuzz_target;
use trailscout::domain::Raster;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(raster) = text.parse::<Raster>() else { return };
    // Anything that parses must survive conversion and re-serialization.
    if let Ok(surface) = raster.to_surface(0.0) {
        let _ = surface.true_minimum();
    }
    let again: Raster = raster.to_ascii().parse().expect("serialized raster parses");
    assert_eq!((again.ncols, again.nrows), (raster.ncols, raster.nrows));
});
