//! Built-in configurations reproducing the data behind the reference figures
//! and the tent examples.

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "figure-angle",
        description: "moving-wall chain (m0 = m1 = 1, wall temperature 1/2, R = 3), 1e7 steps; angle and speed histograms with KS tests",
        config: include_str!("../presets/figure-angle.toml"),
    },
    Preset {
        name: "figure-example3traj",
        description: "moving-wall chain (a1 = 1, R = 4, m0 = 80, m1 = 1, sigma0 = 1), 1e4 steps; sample path",
        config: include_str!("../presets/figure-example3traj.toml"),
    },
    Preset {
        name: "figure-example3sde",
        description: "two-dimensional velocity diffusion from (0, -1), T = 50 in 50000 steps; sample path",
        config: include_str!("../presets/figure-example3sde.toml"),
    },
    Preset {
        name: "figure-legendre",
        description: "diffusion on the unit disc with eigenvalues 2.5 and 1 from (0, 0), T = 5 in 50000 steps; sample path",
        config: include_str!("../presets/figure-legendre.toml"),
    },
    Preset {
        name: "figure-oned",
        description: "normalized speed diffusion dV = (1/V - V) dt + sqrt(2) dB from V = 10, T = 10 in 10000 steps; sample path",
        config: include_str!("../presets/figure-oned.toml"),
    },
    Preset {
        name: "tent-heatbath",
        description: "generator convergence for the one-mass tent with the bound velocity hidden, against the speed diffusion",
        config: include_str!("../presets/tent-heatbath.toml"),
    },
    Preset {
        name: "tent-elastic",
        description: "limit matrices of the two-mass tent with every velocity observed",
        config: include_str!("../presets/tent-elastic.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
