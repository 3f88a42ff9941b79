use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Objective, Optimum};
use crate::error::{Error, Result};
use crate::space::SearchSpace;

/// Standard synthetic test functions on their usual domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Synthetic {
    Branin,
    /// Six-hump camel.
    Camelback,
    StyblinskiTang { dim: usize },
    Hartmann3,
    Hartmann6,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Coordinate of the Styblinski-Tang minimizer (identical in every dimension).
const STYBLINSKI_TANG_ARGMIN: f64 = -2.903_534_027_771_178;

fn hartmann<const D: usize>(a: &[[f64; D]; 4], p: &[[f64; D]; 4], x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..D).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

impl Synthetic {
    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase().replace('-', "_");
        match lower.as_str() {
            "branin" => Ok(Synthetic::Branin),
            "camelback" | "six_hump_camel" => Ok(Synthetic::Camelback),
            "styblinski_tang" | "stybtang" => Ok(Synthetic::StyblinskiTang { dim: 3 }),
            "hartmann3" => Ok(Synthetic::Hartmann3),
            "hartmann6" => Ok(Synthetic::Hartmann6),
            other => {
                if let Some(d) = other.strip_prefix("styblinski_tang_").and_then(|d| d.parse().ok()) {
                    if d >= 1 {
                        return Ok(Synthetic::StyblinskiTang { dim: d });
                    }
                }
                Err(Error::InvalidInput(format!("unknown objective {name:?}")))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Synthetic::Branin => "branin".into(),
            Synthetic::Camelback => "camelback".into(),
            Synthetic::StyblinskiTang { dim: 3 } => "styblinski_tang".into(),
            Synthetic::StyblinskiTang { dim } => format!("styblinski_tang_{dim}"),
            Synthetic::Hartmann3 => "hartmann3".into(),
            Synthetic::Hartmann6 => "hartmann6".into(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Synthetic::Branin | Synthetic::Camelback => 2,
            Synthetic::StyblinskiTang { dim } => *dim,
            Synthetic::Hartmann3 => 3,
            Synthetic::Hartmann6 => 6,
        }
    }

    pub fn space(&self) -> SearchSpace {
        let bounds: Vec<(f64, f64)> = match self {
            Synthetic::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            Synthetic::Camelback => vec![(-3.0, 3.0), (-2.0, 2.0)],
            Synthetic::StyblinskiTang { dim } => vec![(-5.0, 5.0); *dim],
            Synthetic::Hartmann3 => vec![(0.0, 1.0); 3],
            Synthetic::Hartmann6 => vec![(0.0, 1.0); 6],
        };
        SearchSpace::from_bounds(&bounds).expect("standard domains are valid")
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Synthetic::Branin => {
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                (x[1] - b * x[0] * x[0] + c * x[0] - 6.0).powi(2) + 10.0 * (1.0 - t) * x[0].cos() + 10.0
            }
            Synthetic::Camelback => {
                let (a, b) = (x[0], x[1]);
                (4.0 - 2.1 * a * a + a.powi(4) / 3.0) * a * a + a * b + (-4.0 + 4.0 * b * b) * b * b
            }
            Synthetic::StyblinskiTang { .. } => {
                0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>()
            }
            Synthetic::Hartmann3 => hartmann(&HARTMANN3_A, &HARTMANN3_P, x),
            Synthetic::Hartmann6 => hartmann(&HARTMANN6_A, &HARTMANN6_P, x),
        }
    }

    /// Known global minimizers (numerically polished where no closed form exists).
    pub fn minimizers(&self) -> Vec<Vec<f64>> {
        match self {
            Synthetic::Branin => vec![vec![-PI, 12.275], vec![PI, 2.275], vec![3.0 * PI, 2.475]],
            Synthetic::Camelback => vec![
                vec![0.089_842_017_097_723_13, -0.712_656_403_034_100_7],
                vec![-0.089_842_017_097_723_13, 0.712_656_403_034_100_7],
            ],
            Synthetic::StyblinskiTang { dim } => vec![vec![STYBLINSKI_TANG_ARGMIN; *dim]],
            Synthetic::Hartmann3 => vec![vec![0.114_588_868_591_379_44, 0.555_648_894_594_768_5, 0.852_546_983_992_308_8]],
            Synthetic::Hartmann6 => vec![vec![
                0.201_689_512_840_881_66,
                0.150_010_691_215_734_68,
                0.476_873_975_520_047_34,
                0.275_332_430_951_074_6,
                0.311_651_617_462_712_86,
                0.657_300_532_965_973_2,
            ]],
        }
    }
}

/// A [`Synthetic`] function packaged as an [`Objective`].
#[derive(Clone, Debug)]
pub struct SyntheticObjective {
    function: Synthetic,
    name: String,
    space: SearchSpace,
    optimum: Optimum,
}

impl SyntheticObjective {
    pub fn new(function: Synthetic) -> Self {
        let points = function.minimizers();
        let value = points.iter().map(|p| function.value(p)).fold(f64::INFINITY, f64::min);
        SyntheticObjective {
            function,
            name: function.name(),
            space: function.space(),
            optimum: Optimum { value, points },
        }
    }

    pub fn function(&self) -> Synthetic {
        self.function
    }
}

impl Objective for SyntheticObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.function.value(x))
    }

    fn optimum(&self) -> Option<&Optimum> {
        Some(&self.optimum)
    }
}
