//! Stochastic DC OPF with affine policies.
