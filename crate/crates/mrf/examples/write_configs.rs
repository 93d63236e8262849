//! Regenerates the JSON files in `configs/` from the built-in presets.

use mrf::config::presets;
use mrf::io::write_json;

fn main() -> anyhow::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("table1.json"), &serde_json::json!({ "scenarios": presets::table_1d() }))?;
    write_json(&dir.join("table2.json"), &serde_json::json!({ "scenarios": presets::table_2d() }))?;
    write_json(&dir.join("baseline-1d.json"), &presets::table_1d()[0])?;
    write_json(&dir.join("smooth-1d.json"), &presets::table_1d()[1])?;
    write_json(&dir.join("tree-1d.json"), &presets::tree_1d())?;
    write_json(&dir.join("tree-2d.json"), &presets::tree_2d())?;
    write_json(&dir.join("lake-tree.json"), &presets::lake_tree())?;
    write_json(&dir.join("lake-enkf.json"), &presets::lake_enkf())?;
    write_json(&dir.join("basis-1d.json"), &presets::basis_1d())?;
    write_json(&dir.join("basis-identity.json"), &presets::basis_identity())?;
    write_json(&dir.join("particle-static.json"), &presets::particle_static())?;
    write_json(&dir.join("particle-pair.json"), &presets::particle_pair())?;
    write_json(&dir.join("particle-drift.json"), &presets::particle_drift())?;
    Ok(())
}
