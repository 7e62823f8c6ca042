#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dts_core::pipeline::PipelineConfig;

/// A fast end-to-end config rooted at `root` (data/ and artifacts/ below it).
pub fn small_config(root: &Path, threads: &str) -> PipelineConfig {
    let text = format!(
        r#"
seed = 8
threads = {threads}
[synth]
items_per_category = 120
clusters_per_category = 3
sessions = 1200
[kge]
dim = 32
epochs = 5
[gatne]
dim = 32
epochs = 2
"#
    );
    PipelineConfig::from_toml(&text, root).unwrap()
}

/// Every input and artifact file except the manifest, which carries timings.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["data", "artifacts"] {
        let Ok(entries) = std::fs::read_dir(root.join(sub)) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            if name != "manifest.json" {
                out.insert(format!("{sub}/{name}"), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
