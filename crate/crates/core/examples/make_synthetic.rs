//! Writes the bundled synthetic datasets under `data/`.
//!
//! `cargo run --example make_synthetic` regenerates them.

use std::fs;
use std::path::Path;

use ktm::corpus::write_uci;
use ktm::metadata::write_metadata;
use ktm::synthetic::{self, SyntheticConfig};

fn write(dir: &Path, config: &SyntheticConfig) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let s = synthetic::generate(config);
    write_uci(&s.corpus, fs::File::create(dir.join("docword.txt"))?).expect("corpus written");
    fs::write(dir.join("vocab.txt"), synthetic::vocabulary(config.vocab).join("\n") + "\n")?;
    write_metadata(&s.features, fs::File::create(dir.join("meta.csv"))?).expect("metadata written");
    let mut grid = String::from("t\n");
    for i in 0..=40 {
        grid.push_str(&format!("{}\n", i as f64 * config.feature_range / 40.0));
    }
    fs::write(dir.join("grid.csv"), grid)
}

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    write(&root.join("synthetic"), &SyntheticConfig::default())?;
    write(
        &root.join("synthetic_v200"),
        &SyntheticConfig {
            vocab: 200,
            doc_length: 100,
            ..Default::default()
        },
    )
}
