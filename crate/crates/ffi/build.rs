use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("readable cbindgen.toml");
    let header =
        cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate().expect("C header generation");
    // Rewritten only on change so an unchanged header keeps its mtime.
    header.write_to_file(crate_dir.join("include").join("arena.h"));
}
