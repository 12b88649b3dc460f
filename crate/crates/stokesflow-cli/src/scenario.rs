//! Scenario files: the JSON schema the CLI consumes and its mapping onto
//! library types.
//!
//! Every struct and enum rejects unknown keys, so a typo cannot silently
//! disable a section. A seed is mandatory whenever any generator is involved;
//! the lattice generator ignores the value but still demands its presence, so
//! scenario files are uniform about where pseudo-randomness could enter.

use std::path::PathBuf;

use nalgebra::Vector3;
use serde::Deserialize;
use stokesflow::analysis::ConfigFamily;
use stokesflow::fields::{AmbientField, TracelessSym3};
use stokesflow::geometry::{generate_lattice, generate_poisson_disk, Box3, ParticleConfig};
use stokesflow::reflections::SolverOptions;

use crate::errors::CliError;

/// One scenario file. Sections are optional at parse time; each subcommand
/// demands the sections it needs and reports a usage error otherwise.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Where the particles come from: inline list or generator.
    #[serde(default)]
    pub config: Option<ConfigSource>,
    /// Background flow driving the suspension.
    #[serde(default)]
    pub ambient: Option<AmbientSpec>,
    /// Solver knobs; omitted fields take the library defaults.
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Generator seed; required whenever a generator is used.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Particle source.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigSource {
    Particles(Vec<ParticleSpec>),
    Generator(GeneratorSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Deterministic configuration generators.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Lattice {
        n_per_side: usize,
        spacing: f64,
        radius: f64,
    },
    /// Rejection-sampled cloud in the box `[0, box_size]`; `min_gap` is the
    /// smallest accepted center-to-center distance.
    Poisson {
        count: usize,
        box_size: [f64; 3],
        min_gap: f64,
        radius: f64,
    },
}

/// Background flow description; mirrors the library's ambient variants.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbientSpec {
    /// Traceless symmetric strain about the origin; omitted entries are zero.
    LinearStrain {
        #[serde(default)]
        xx: f64,
        #[serde(default)]
        xy: f64,
        #[serde(default)]
        xz: f64,
        #[serde(default)]
        yy: f64,
        #[serde(default)]
        yz: f64,
    },
    RigidMotion {
        velocity: [f64; 3],
        omega: [f64; 3],
        center: [f64; 3],
    },
    Stokeslet {
        force: [f64; 3],
        location: [f64; 3],
    },
    Superposition(Vec<AmbientSpec>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Artifact directory; `--out` and the environment override/back it up.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Rectangular evaluation grid, `shape` points per axis inclusive of both
/// ends; a size-one axis collapses to `lo`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub shape: [usize; 3],
    /// Emit strain columns as well as velocity.
    #[serde(default)]
    pub strain: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub family: FamilySpec,
    pub phi0: Vec<f64>,
}

/// One-parameter configuration family for contraction sweeps.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Lattice {
        n: usize,
    },
    Poisson {
        count: usize,
        box_size: f64,
        min_gap: f64,
    },
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| {
        CliError::Usage("a top-level seed is required whenever a generator is used".into())
    })
}

impl Scenario {
    /// Realize the particle configuration, enforcing the seed rule.
    pub fn realize_config(&self) -> Result<ParticleConfig, CliError> {
        let source = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("scenario has no config section".into()))?;
        match source {
            ConfigSource::Particles(parts) => Ok(ParticleConfig::from_parts(
                parts.iter().map(|p| (vec3(&p.center), p.radius)).collect(),
            )),
            ConfigSource::Generator(GeneratorSpec::Lattice {
                n_per_side,
                spacing,
                radius,
            }) => {
                require_seed(self.seed)?;
                generate_lattice(*n_per_side, *spacing, *radius).map_err(CliError::Lib)
            }
            ConfigSource::Generator(GeneratorSpec::Poisson {
                count,
                box_size,
                min_gap,
                radius,
            }) => {
                let seed = require_seed(self.seed)?;
                let container = Box3::new(Vector3::zeros(), vec3(box_size));
                generate_poisson_disk(*count, container, *min_gap, *radius, seed)
                    .map_err(CliError::Lib)
            }
        }
    }

    /// The ambient field, or a usage error when the section is missing.
    pub fn ambient_field(&self) -> Result<AmbientField, CliError> {
        self.ambient
            .as_ref()
            .map(AmbientSpec::build)
            .ok_or_else(|| CliError::Usage("scenario has no ambient section".into()))
    }

    /// The sweep family, enforcing the seed rule for both family kinds.
    pub fn sweep_family(&self, spec: &FamilySpec) -> Result<ConfigFamily, CliError> {
        match spec {
            FamilySpec::Lattice { n } => {
                require_seed(self.seed)?;
                Ok(ConfigFamily::Lattice { n: *n })
            }
            FamilySpec::Poisson {
                count,
                box_size,
                min_gap,
            } => Ok(ConfigFamily::Poisson {
                count: *count,
                box_size: *box_size,
                min_gap: *min_gap,
                seed: require_seed(self.seed)?,
            }),
        }
    }
}

impl AmbientSpec {
    pub fn build(&self) -> AmbientField {
        match self {
            AmbientSpec::LinearStrain { xx, xy, xz, yy, yz } => AmbientField::LinearStrain(
                TracelessSym3::from_components(*xx, *xy, *xz, *yy, *yz),
            ),
            AmbientSpec::RigidMotion {
                velocity,
                omega,
                center,
            } => AmbientField::RigidMotion {
                velocity: vec3(velocity),
                omega: vec3(omega),
                center: vec3(center),
            },
            AmbientSpec::Stokeslet { force, location } => AmbientField::Stokeslet {
                force: vec3(force),
                location: vec3(location),
            },
            AmbientSpec::Superposition(parts) => {
                AmbientField::Superposition(parts.iter().map(AmbientSpec::build).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Scenario {
        serde_json::from_str(text).expect("scenario parses")
    }

    #[test]
    fn empty_scenario_takes_defaults() {
        let s = parse("{}");
        assert!(s.config.is_none(), "no config section by default");
        assert_eq!(
            s.solver,
            SolverOptions::default(),
            "omitted solver section falls back to library defaults"
        );
        assert!(s.output.dir.is_none(), "no output dir by default");
    }

    #[test]
    fn partial_solver_overrides_merge_with_defaults() {
        let s = parse(r#"{"solver": {"gamma": 0.5, "max_iterations": 7}}"#);
        assert_eq!(s.solver.gamma, 0.5, "explicit gamma wins");
        assert_eq!(s.solver.max_iterations, 7, "explicit cap wins");
        assert_eq!(
            s.solver.quadrature_order,
            SolverOptions::default().quadrature_order,
            "untouched fields keep their defaults"
        );
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            r#"{"bogus": 1}"#,
            r#"{"solver": {"gamm": 0.5}}"#,
            r#"{"grid": {"lo": [0,0,0], "hi": [1,1,1], "shape": [2,2,2], "stride": 3}}"#,
            r#"{"ambient": {"linear_strain": {"xy": 0.5, "zz": 0.1}}}"#,
            r#"{"config": {"generator": {"lattice": {"n_per_side": 2, "spacing": 1.0, "radius": 0.2, "extra": 0}}}}"#,
        ] {
            let got: Result<Scenario, _> = serde_json::from_str(text);
            assert!(got.is_err(), "unknown key must be rejected in {text}");
        }
    }

    #[test]
    fn generators_demand_a_seed() {
        let s = parse(
            r#"{"config": {"generator": {"lattice": {"n_per_side": 2, "spacing": 1.0, "radius": 0.2}}}}"#,
        );
        let err = s.realize_config().expect_err("missing seed is an error");
        assert_eq!(err.exit_code(), 1, "missing seed is a usage error");
        assert!(
            err.message().contains("seed"),
            "diagnostic names the missing seed, got: {}",
            err.message()
        );
    }

    #[test]
    fn inline_particles_need_no_seed() {
        let s = parse(r#"{"config": {"particles": [{"center": [1.0, 2.0, 3.0], "radius": 0.5}]}}"#);
        let cfg = s.realize_config().expect("inline particles realize");
        assert_eq!(cfg.len(), 1, "one particle listed");
        assert_eq!(
            cfg.particles[0].center,
            Vector3::new(1.0, 2.0, 3.0),
            "center carried through"
        );
        assert_eq!(cfg.particles[0].radius, 0.5, "radius carried through");
    }

    #[test]
    fn poisson_generator_is_a_pure_function_of_the_seed() {
        let text = r#"{
            "seed": 42,
            "config": {"generator": {"poisson": {
                "count": 5, "box_size": [6.0, 6.0, 6.0], "min_gap": 1.2, "radius": 0.3}}}
        }"#;
        let a = parse(text).realize_config().expect("first draw");
        let b = parse(text).realize_config().expect("second draw");
        assert_eq!(a.len(), 5, "requested count placed");
        for (p, q) in a.particles.iter().zip(&b.particles) {
            assert_eq!(p.center, q.center, "same seed, same centers");
        }
        assert!(
            a.bounding_box.is_some(),
            "generated cloud remembers its container"
        );
    }

    #[test]
    fn ambient_superposition_builds_recursively() {
        let s = parse(
            r#"{"ambient": {"superposition": [
                {"linear_strain": {"xy": 0.5}},
                {"rigid_motion": {"velocity": [1,0,0], "omega": [0,0,1], "center": [0,0,0]}}
            ]}}"#,
        );
        let built = s.ambient_field().expect("ambient present");
        let AmbientField::Superposition(parts) = &built else {
            panic!("superposition spec must build a superposition, got {built:?}");
        };
        assert_eq!(parts.len(), 2, "both arms present");
        let AmbientField::LinearStrain(e) = &parts[0] else {
            panic!("first arm is the strain");
        };
        assert_eq!(e.xy(), 0.5, "strain component carried through");
        let x = Vector3::new(2.0, 0.0, 0.0);
        let v = built.velocity(&x).expect("superposition evaluates");
        // Strain gives (0, 1, 0) at x; translation (1, 0, 0); spin z x x = (0, 2, 0).
        assert!(
            (v - Vector3::new(1.0, 3.0, 0.0)).norm() <= 1e-14,
            "superposition sums its arms, got {v:?}"
        );
    }

    #[test]
    fn sweep_family_carries_the_scenario_seed() {
        let s = parse(
            r#"{"seed": 9, "sweep": {"family": {"poisson": {"count": 8, "box_size": 5.0, "min_gap": 1.0}}, "phi0": [0.01]}}"#,
        );
        let spec = &s.sweep.as_ref().expect("sweep section present").family;
        let fam = s.sweep_family(spec).expect("family realizes");
        let ConfigFamily::Poisson { count, seed, .. } = fam else {
            panic!("poisson family expected");
        };
        assert_eq!(count, 8, "count carried through");
        assert_eq!(seed, 9, "scenario seed reaches the family");
    }
}
