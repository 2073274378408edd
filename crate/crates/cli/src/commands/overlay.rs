use endospec::dataset::load_stack;
use endospec::geometry::{PinholeCamera, PointCloud};
use endospec::overlay::{drape_colors, drape_overlay, narrow_band, oxygen_saturation, ExtinctionTable, ScalarMap};
use log::info;
use serde_json::json;

use super::write_json;
use crate::config::{log_resolved, required, OverlaySection};
use crate::error::CliError;

struct Inputs {
    cloud: PointCloud,
    msi: endospec::dataset::SpectralStack,
    cam: PinholeCamera,
}

fn inputs(o: &OverlaySection) -> Result<Inputs, CliError> {
    Ok(Inputs {
        cloud: PointCloud::load_ply(required(&o.cloud_ply, "overlay.cloud_ply")?)?,
        msi: load_stack(required(&o.msi, "overlay.msi")?)?,
        cam: PinholeCamera::load_json(required(&o.camera, "overlay.camera")?)?,
    })
}

fn draped_count(cloud: &PointCloud) -> usize {
    cloud.values().map_or(0, |v| v.iter().filter(|x| x.is_finite()).count())
}

pub fn nbi(o: &OverlaySection) -> Result<(), CliError> {
    log_resolved("overlay", o);
    let out = required(&o.out_ply, "overlay.out_ply")?;
    let inp = inputs(o)?;
    let nb = narrow_band(&inp.msi, &o.nbi_nm)?;
    let draped = drape_colors(&inp.cloud, &nb.composite(), nb.width, nb.height, &inp.cam)?;
    draped.save_ply(out)?;
    if let Some(p) = &o.summary_json {
        write_json(p, &json!({ "kind": "nbi", "bands": nb.picks, "points": draped.len(), "draped": draped_count(&draped) }))?;
    }
    info!("wrote narrow-band overlay to {}", out.display());
    Ok(())
}

pub fn sao2(o: &OverlaySection) -> Result<(), CliError> {
    log_resolved("overlay", o);
    let out = required(&o.out_ply, "overlay.out_ply")?;
    let table = o
        .extinction_csv
        .as_ref()
        .ok_or_else(|| CliError::Config("sao2 overlay needs `overlay.extinction_csv`".into()))?;
    let ext = ExtinctionTable::load_csv(table)?;
    let inp = inputs(o)?;
    let map = oxygen_saturation(&inp.msi, &ext, &o.sao2)?;
    let scalar = ScalarMap::new(map.width, map.height, map.values())?;
    let draped = drape_overlay(&inp.cloud, &scalar, &inp.cam)?;
    draped.save_ply(out)?;
    if let Some(p) = &o.summary_json {
        write_json(
            p,
            &json!({ "kind": "sao2", "map": map.summary(), "points": draped.len(), "draped": draped_count(&draped) }),
        )?;
    }
    info!("wrote oxygen-saturation overlay to {}", out.display());
    Ok(())
}
