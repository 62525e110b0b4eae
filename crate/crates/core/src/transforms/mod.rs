//! Spectral transforms: direct DFT, radix-2 FFT, cached DFT matrix, the
//! Hadamard/Hartley/DCT alternatives, and 2D token mixing built on them.
//!
//! All Fourier transforms are unnormalized: `X_k = Σ_n x_n e^{-2πink/N}`.

mod complex;
mod dft;
mod fft;
mod mix;
mod real;

pub use complex::{ComplexGrid, ComplexSequence};
pub use dft::{dft_naive, dft_via_matrix, DftMatrix};
pub use fft::{dft_auto, fft, FftPlan};
pub use mix::{
    fourier_mix_1d_seq, fourier_mix_2d, fourier_transform_2d, AxisOrder, DftMethod, FourierMixer, SeparableMixer,
};
pub use real::{dct2, dct2_transpose, hadamard, hartley};
