//! The turbocharged diesel engine benchmark plant: continuous-time
//! parameters of one engine, discretized at the configured sampling rate.

use anyhow::Result;
use nalgebra::DMatrix;

use d3pi_core::lti::{discretize, AgentModel};

/// Continuous-time (Ac, Bc) of a single engine, 6 states and 2 inputs.
pub fn engine_model() -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let ac = DMatrix::from_row_slice(6, 6, &[
         -0.4125,  -0.0248,   0.0741,    0.0089,   0.0000,   0.0000,
        101.5873,  -7.2651,   2.7608,    2.8068,   0.0000,   0.0000,
          0.0704,   0.0085,  -0.0741,   -0.0089,   0.0000,   0.0200,
          0.0878,   0.2672,   0.0000,   -0.3674,   0.0044,   0.3962,
         -1.8414,   0.0990,   0.0000,    0.0000,  -0.0343,  -0.0330,
          0.0000,   0.0000,   0.0000, -359.0000, 187.5364, -87.0316,
    ]);
    #[rustfmt::skip]
    let bc = DMatrix::from_row_slice(6, 2, &[
        -0.0003,  0.0005,
        -0.0764,  0.1149,
         0.0004,  0.0000,
        -0.0127,  0.0016,
        -0.0005, -0.0011,
         0.0456, -0.0075,
    ]);
    (ac, bc)
}

/// Discretized (optionally state-normalized) engine agent.
pub fn engine_agent(dt: f64, normalize: bool) -> Result<AgentModel<f64>> {
    let (ac, bc) = engine_model();
    let agent = discretize(&ac, &bc, dt)?;
    Ok(if normalize { agent.normalized()? } else { agent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcribed_entries() {
        let (ac, bc) = engine_model();
        assert_eq!(ac[(0, 0)], -0.4125);
        assert_eq!(ac[(5, 3)], -359.0000);
        assert_eq!(ac[(5, 4)], 187.5364);
        assert_eq!(ac[(1, 0)], 101.5873);
        assert_eq!(bc[(0, 0)], -0.0003);
        assert_eq!(bc[(5, 1)], -0.0075);
        assert_eq!(bc[(2, 1)], 0.0);
    }

    #[test]
    fn discretizes_to_stable_controllable_agent() {
        let agent = engine_agent(0.1, true).unwrap();
        assert_eq!(agent.state_dim(), 6);
        assert_eq!(agent.input_dim(), 2);
        assert!(d3pi_core::linalg::is_schur_stable(agent.a()));
    }
}
