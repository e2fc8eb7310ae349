//! C ABI surface for opfkit.
