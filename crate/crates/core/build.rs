fn main() {
    // ndarray-linalg is used without a bundled backend; link the system
    // OpenBLAS, which provides the LAPACK symbols (zheev etc.).
    println!("cargo:rustc-link-lib=dylib=openblas");
}
