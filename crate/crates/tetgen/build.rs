fn main() {
    println!("cargo:rerun-if-changed=tetgen");
    cc::Build::new()
        .cpp(true)
        .file("tetgen/predicates.cxx")
        .file("tetgen/tetgen.cxx")
        .file("tetgen/shim.cpp")
        .include("tetgen")
        .flag_if_supported("-Wno-int-to-pointer-cast")
        .flag_if_supported("-Wno-unused-parameter")
        .flag_if_supported("-Wno-unused-but-set-variable")
        .flag_if_supported("-Wno-maybe-uninitialized")
        .flag_if_supported("-Wno-unused-variable")
        .flag_if_supported("-Wno-sign-compare")
        .flag_if_supported("-Wno-misleading-indentation")
        .flag_if_supported("-Wno-unused-result")
        .warnings(false)
        .compile("cmac_tetgen");
}
