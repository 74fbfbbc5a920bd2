//! von Mises–Fisher distributions on the unit hypersphere.

mod bessel;
mod dist;
mod sample;

pub use bessel::log_bessel_i;
pub use dist::{elk_sim, log_norm_const, mean_resultant_length, nivmf_approx_elk, NonIsotropicVMF, VonMisesFisher, KAPPA_FLOOR};
pub use sample::{draw_noise, householder, rsample, transform, wood_w, SampleTrace};
