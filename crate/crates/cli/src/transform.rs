//! Coordinate transforms between normal (x = ln s) and lognormal (s = e^x)
//! representations. Values are invariant node-wise; only coordinates map.

use crate::io::SurfaceDump;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToLognormal,
    ToNormal,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "to-lognormal" => Some(Direction::ToLognormal),
            "to-normal" => Some(Direction::ToNormal),
            _ => None,
        }
    }
}

/// Maps every axis coordinate; `to-normal` requires strictly positive
/// coordinates.
pub fn transform_surface(dump: &SurfaceDump, dir: Direction) -> Result<SurfaceDump, String> {
    let mut coords = Vec::with_capacity(dump.coords.len());
    for (d, axis) in dump.coords.iter().enumerate() {
        let mapped: Result<Vec<f64>, String> = axis
            .iter()
            .map(|&c| match dir {
                Direction::ToLognormal => Ok(c.exp()),
                Direction::ToNormal => {
                    if c <= 0.0 {
                        Err(format!("nonpositive coordinate {c} on axis {d}"))
                    } else {
                        Ok(c.ln())
                    }
                }
            })
            .collect();
        coords.push(mapped?);
    }
    Ok(SurfaceDump {
        coords,
        times: dump.times.clone(),
        values: dump.values.clone(),
    })
}
