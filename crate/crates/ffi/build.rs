fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("manifest dir");
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("LWAU_H".to_string()),
        documentation: true,
        cpp_compat: true,
        header: Some(
            "/* C interface to the lwau few-shot meta-learning engine. */".to_string(),
        ),
        ..cbindgen::Config::default()
    };
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen header generation")
        .write_to_file(std::path::Path::new(&crate_dir).join("include/lwau.h"));
    println!("cargo:rerun-if-changed=src/lib.rs");
}
