//! Regenerates `data/default_calibration.txt` by calibrating every
//! (scheme, norm) pair on the reference phantom.
//!
//! cargo run -p ttml-core --example build_default_table -- <out.txt>

use ttml::phantom::{make_phantom, SpeckledPhantomSpec};
use ttml::pipeline::{calibrate_with_report, default_cr_targets, CalibrationOptions, CalibrationTable, Scheme};
use ttml::SpNorm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "default_calibration.txt".into());
    let spec = SpeckledPhantomSpec::reference();
    let (_, noisy) = make_phantom(&spec)?;
    // resume: pairs already present in `out` are kept
    let mut table = match std::fs::read_to_string(&out) {
        Ok(text) => text.parse::<CalibrationTable>()?,
        Err(_) => CalibrationTable::new(),
    };
    let header = format!(
        "# calibrated on the reference phantom: dims {:?}, rank {:?}, looks {}, seed {}\n",
        spec.dims, spec.rank, spec.looks, spec.seed
    );
    for scheme in Scheme::ALL {
        for norm in SpNorm::ALL {
            if table.samples(scheme, norm).is_some() {
                continue;
            }
            let (t, report) = calibrate_with_report(
                std::slice::from_ref(&noisy),
                scheme,
                norm,
                &default_cr_targets(),
                &CalibrationOptions::default(),
            )?;
            log::info!("{scheme}/{norm}: response {:?}, missed {:?}", report.response, report.missed);
            table.merge(&t);
            std::fs::write(&out, format!("{header}{table}"))?;
        }
    }
    Ok(())
}
