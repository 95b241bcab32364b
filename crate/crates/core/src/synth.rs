//! Synthetic labelled sequences and label corruptions with known metric effects.
//!
//! Objects are isotropic Gaussian blobs (truncated at 3σ) moving at constant
//! velocity in the world frame; stuff classes are flat noisy layers below them.
//! Scans are stored in the sensor frame of a moving ego vehicle.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classes::ClassMap;
use crate::error::{Error, Result};
use crate::kitti_io::{
    scan_file_name, write_labels, write_point_scan, write_poses, write_sidecar, PanopticLabels, Pose, Scan,
    ScanFields,
};
use crate::losses::{objectness_target, InstanceGroundTruth};
use crate::sampling::{rng_for, uniform_sample};
use crate::tracking::ScanInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Raw label id; must be a thing class.
    pub class: u32,
    pub points: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Displacement per scan, metres.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Position at scan 0; objects without one are placed on a ring.
    #[serde(default)]
    pub start: Option<[f64; 3]>,
}

fn default_sigma() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StuffSpec {
    /// Raw label id; must be a stuff class.
    pub class: u32,
    /// Points per scan.
    pub points: usize,
    /// Half-width of the square the layer covers around the ego vehicle.
    #[serde(default = "default_extent")]
    pub extent: f64,
    /// World height of the layer.
    #[serde(default = "default_height")]
    pub height: f64,
}

fn default_extent() -> f64 {
    25.0
}

fn default_height() -> f64 {
    -2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoMotion {
    /// World displacement per scan.
    pub velocity: [f64; 3],
    /// Heading change per scan, radians.
    pub yaw_rate: f64,
}

impl Default for EgoMotion {
    fn default() -> Self {
        EgoMotion {
            velocity: [0.5, 0.0, 0.0],
            yaw_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub scans: usize,
    pub seed: u64,
    #[serde(rename = "object")]
    pub objects: Vec<ObjectSpec>,
    #[serde(rename = "stuff")]
    pub stuff: Vec<StuffSpec>,
    /// Isotropic sensor noise added to every point.
    pub noise: f64,
    pub ego: EgoMotion,
    /// Minimum centre distance between any two objects over the whole
    /// sequence, in multiples of the larger σ.
    pub min_separation: f64,
    /// Oracle embedding variance is `(bandwidth · σ)²`.
    pub bandwidth: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            scans: 20,
            seed: 0,
            objects: Vec::new(),
            stuff: Vec::new(),
            noise: 0.0,
            ego: EgoMotion::default(),
            min_separation: 15.0,
            bandwidth: 5.0,
        }
    }
}

const THING_CYCLE: [u32; 5] = [10, 30, 31, 18, 20];

impl SceneSpec {
    /// `n` objects of 150 points cycling through common thing classes, each
    /// with a seeded random heading at 0.05 m/scan, over a road and sidewalk.
    pub fn with_objects(n: usize, scans: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, u64::MAX);
        let objects = (0..n)
            .map(|k| {
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                ObjectSpec {
                    class: THING_CYCLE[k % THING_CYCLE.len()],
                    points: 150,
                    sigma: default_sigma(),
                    velocity: [0.05 * heading.cos(), 0.05 * heading.sin(), 0.0],
                    start: None,
                }
            })
            .collect();
        SceneSpec {
            scans,
            seed,
            objects,
            stuff: vec![
                StuffSpec {
                    class: 40,
                    points: 400,
                    extent: default_extent(),
                    height: default_height(),
                },
                StuffSpec {
                    class: 48,
                    points: 200,
                    extent: default_extent(),
                    height: default_height() - 0.5,
                },
            ],
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn ring_radius(&self) -> f64 {
        let n = self.objects.len().max(1) as f64;
        let sigma = self.objects.iter().map(|o| o.sigma).fold(0.0, f64::max);
        // chord between neighbours is 2R sin(π/n); leave room for drift
        let drift = self
            .objects
            .iter()
            .map(|o| norm(o.velocity) * self.scans as f64)
            .fold(0.0, f64::max);
        let needed = self.min_separation * sigma + 2.0 * drift + 1.0;
        let r = if n < 2.0 { 0.0 } else { needed / (2.0 * (std::f64::consts::PI / n).sin()) };
        r.max(10.0)
    }

    /// Start position of every object.
    pub fn starts(&self) -> Vec<[f64; 3]> {
        let n = self.objects.len();
        let r = self.ring_radius();
        self.objects
            .iter()
            .enumerate()
            .map(|(k, o)| {
                o.start.unwrap_or_else(|| {
                    let a = std::f64::consts::TAU * k as f64 / n as f64;
                    [r * a.cos(), r * a.sin(), 0.0]
                })
            })
            .collect()
    }

    pub fn validate(&self, classes: &ClassMap) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scans == 0 {
            return bad("scene needs at least one scan".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.points == 0 {
                return bad(format!("object {k} has no points"));
            }
            if !(o.sigma > 0.0 && o.sigma.is_finite()) {
                return bad(format!("object {k} sigma must be positive, got {}", o.sigma));
            }
            if !classes.is_thing_raw(o.class) {
                return bad(format!("object {k} class {} is not a thing class", o.class));
            }
        }
        for s in &self.stuff {
            if s.points == 0 || !(s.extent.is_finite() && s.extent > 0.0) {
                return bad(format!("stuff class {} needs points and a positive extent", s.class));
            }
            if classes.is_thing_raw(s.class) || classes.is_ignore_raw(s.class) {
                return bad(format!("stuff class {} is a thing or ignored class", s.class));
            }
        }
        let starts = self.starts();
        let horizon = (self.scans - 1) as f64;
        for a in 0..self.objects.len() {
            for b in a + 1..self.objects.len() {
                let (oa, ob) = (&self.objects[a], &self.objects[b]);
                let d = min_distance(starts[a], oa.velocity, starts[b], ob.velocity, horizon);
                let need = self.min_separation * oa.sigma.max(ob.sigma);
                if d < need {
                    return bad(format!(
                        "objects {a} and {b} come within {d:.3} m, below the required {need:.3} m"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Closest approach of two linear trajectories over `t ∈ [0, horizon]`.
fn min_distance(pa: [f64; 3], va: [f64; 3], pb: [f64; 3], vb: [f64; 3], horizon: f64) -> f64 {
    let p: Vec<f64> = (0..3).map(|k| pa[k] - pb[k]).collect();
    let v: Vec<f64> = (0..3).map(|k| va[k] - vb[k]).collect();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let t = if vv > 0.0 {
        (-(p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()) / vv).clamp(0.0, horizon)
    } else {
        0.0
    };
    (0..3).map(|k| (p[k] + v[k] * t).powi(2)).sum::<f64>().sqrt()
}

/// A generated sequence. `world[t]` holds the exact world coordinates behind `scans[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub scans: Vec<Scan>,
    pub labels: Vec<PanopticLabels>,
    /// Sensor-to-world poses.
    pub poses: Vec<Pose>,
    pub fields: Vec<ScanFields>,
    pub world: Vec<Vec<[f64; 3]>>,
}

fn blob_offset(sigma: f64, rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        if norm(v) <= 3.0 {
            return [v[0] * sigma, v[1] * sigma, v[2] * sigma];
        }
    }
}

pub fn ego_pose(ego: &EgoMotion, t: usize) -> Pose {
    let t = t as f64;
    Pose::from_yaw_translation(
        ego.yaw_rate * t,
        [ego.velocity[0] * t, ego.velocity[1] * t, ego.velocity[2] * t],
    )
}

/// Generates scans, labels, poses and oracle fields. Instance ids are `k + 1`
/// for object `k`; embeddings are world coordinates.
pub fn generate_sequence(spec: &SceneSpec, classes: &ClassMap) -> Result<SyntheticSequence> {
    spec.validate(classes)?;
    let starts = spec.starts();
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut out = SyntheticSequence {
        scans: Vec::new(),
        labels: Vec::new(),
        poses: Vec::new(),
        fields: Vec::new(),
        world: Vec::new(),
    };
    for t in 0..spec.scans {
        let mut rng = rng_for(spec.seed, t as u64);
        let pose = ego_pose(&spec.ego, t);
        let ego = pose.apply([0.0; 3]);
        let mut world = Vec::new();
        let mut semantic = Vec::new();
        let mut instance = Vec::new();
        let mut var = Vec::new();
        for (k, o) in spec.objects.iter().enumerate() {
            let c: Vec<f64> = (0..3).map(|d| starts[k][d] + o.velocity[d] * t as f64).collect();
            let v = ((spec.bandwidth * o.sigma).powi(2)) as f32;
            for _ in 0..o.points {
                let off = blob_offset(o.sigma, &mut rng);
                world.push([c[0] + off[0], c[1] + off[1], c[2] + off[2]]);
                semantic.push(o.class);
                instance.push(k as u32 + 1);
                var.push(v);
            }
        }
        for s in &spec.stuff {
            for _ in 0..s.points {
                world.push([
                    ego[0] + rng.random_range(-s.extent..s.extent),
                    ego[1] + rng.random_range(-s.extent..s.extent),
                    s.height,
                ]);
                semantic.push(s.class);
                instance.push(0);
                var.push(1.0);
            }
        }
        if spec.noise > 0.0 {
            for p in &mut world {
                for v in p.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
        }
        let inv = pose.inverse();
        let points: Vec<[f32; 3]> = world
            .iter()
            .map(|p| {
                let q = inv.apply(*p);
                [q[0] as f32, q[1] as f32, q[2] as f32]
            })
            .collect();
        let remission: Vec<f32> = (0..points.len()).map(|_| rng.random_range(0.0..=1.0)).collect();
        let gt = InstanceGroundTruth::new(instance.clone());
        let objectness = objectness_target(&world, &gt)?;
        let fields = ScanFields::new(
            3,
            world.iter().flat_map(|p| p.map(|v| v as f32)).collect(),
            objectness.iter().map(|o| *o as f32).collect(),
            var.iter().flat_map(|v| [*v; 3]).collect(),
        )?;
        out.scans.push(Scan::new(points, remission, t)?);
        out.labels.push(PanopticLabels::new(semantic, instance)?);
        out.poses.push(pose);
        out.fields.push(fields);
        out.world.push(world);
    }
    Ok(out)
}

pub const IDENTITY_CALIB: &str = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n";

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// Writes the sequence in the on-disk layout the loaders read, with an
    /// identity calibration so camera and LiDAR frames coincide.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, ((scan, labels), fields)) in self.scans.iter().zip(&self.labels).zip(&self.fields).enumerate() {
            write_point_scan(scan, dir.join("velodyne").join(scan_file_name(t, "bin")))?;
            write_labels(labels, dir.join("labels").join(scan_file_name(t, "label")))?;
            write_sidecar(fields, dir.join("embeddings").join(scan_file_name(t, "p4de")))?;
        }
        write_poses(&self.poses, dir.join("poses.txt"))?;
        let calib = dir.join("calib.txt");
        fs::write(&calib, IDENTITY_CALIB).map_err(|e| Error::io(&calib, e))
    }

    /// Oracle pipeline input for scan `t`: exact world coordinates, gt semantics.
    pub fn pipeline_input(&self, t: usize) -> ScanInput {
        ScanInput {
            scan_index: t,
            coords: self.world[t].clone(),
            semantic: self.labels[t].semantic.clone(),
            fields: self.fields[t].clone(),
        }
    }
}

/// Deterministic label transforms applied to a ground-truth stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    /// From `at_scan` on, tube `id` continues under a fresh id.
    SplitTube { id: u32, at_scan: usize },
    /// Tube `b` is relabelled as tube `a`.
    MergeTubes { a: u32, b: u32 },
    /// A seeded `fraction` of thing points (per scan) is relabelled to thing class `to`.
    FlipClass { fraction: f64, to: u32, seed: u64 },
    /// A seeded `fraction` of points (per scan) is predicted as unlabelled.
    DropPoints { fraction: f64, seed: u64 },
    /// From `at_scan` on, tube `a` takes id `b` and vice versa; without `b`
    /// tube `a` takes a fresh id.
    IdSwitch { a: u32, b: Option<u32>, at_scan: usize },
}

fn fresh_id(labels: &[PanopticLabels]) -> u32 {
    labels.iter().flat_map(|l| l.instance.iter()).copied().max().unwrap_or(0) + 1
}

fn check_fraction(f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("fraction must lie in [0, 1], got {f}")))
    }
}

fn pick(candidates: &[usize], fraction: f64, seed: u64, scan: usize) -> Vec<usize> {
    let k = ((fraction * candidates.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = rng_for(seed, scan as u64);
    uniform_sample(candidates.len(), k.min(candidates.len()), &mut rng)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

pub fn corrupt(labels: &[PanopticLabels], corruption: &Corruption, classes: &ClassMap) -> Result<Vec<PanopticLabels>> {
    let mut out = labels.to_vec();
    match *corruption {
        Corruption::SplitTube { id, at_scan } => {
            let new = fresh_id(labels);
            for l in out.iter_mut().skip(at_scan) {
                l.instance.iter_mut().filter(|v| **v == id).for_each(|v| *v = new);
            }
        }
        Corruption::MergeTubes { a, b } => {
            for l in &mut out {
                l.instance.iter_mut().filter(|v| **v == b).for_each(|v| *v = a);
            }
        }
        Corruption::FlipClass { fraction, to, seed } => {
            check_fraction(fraction)?;
            if !classes.is_thing_raw(to) {
                return Err(Error::Config(format!("flip target {to} is not a thing class")));
            }
            let target = classes.to_eval(to)?;
            for (t, l) in out.iter_mut().enumerate() {
                let mut cands = Vec::new();
                for (i, s) in l.semantic.iter().enumerate() {
                    if classes.is_thing_raw(*s) && classes.to_eval(*s)? != target {
                        cands.push(i);
                    }
                }
                for i in pick(&cands, fraction, seed, t) {
                    l.semantic[i] = to;
                }
            }
        }
        Corruption::DropPoints { fraction, seed } => {
            check_fraction(fraction)?;
            for (t, l) in out.iter_mut().enumerate() {
                let all: Vec<usize> = (0..l.len()).collect();
                for i in pick(&all, fraction, seed, t) {
                    l.semantic[i] = crate::classes::IGNORE;
                    l.instance[i] = 0;
                }
            }
        }
        Corruption::IdSwitch { a, b, at_scan } => {
            let b = b.unwrap_or_else(|| fresh_id(labels));
            for l in out.iter_mut().skip(at_scan) {
                for v in l.instance.iter_mut() {
                    if *v == a {
                        *v = b;
                    } else if *v == b {
                        *v = a;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distinct non-zero instance ids of a stream.
pub fn instance_ids(labels: &[PanopticLabels]) -> BTreeSet<u32> {
    labels
        .iter()
        .flat_map(|l| l.instance.iter().copied())
        .filter(|v| *v != 0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec::with_objects(1, 5, 3)
    }

    #[test]
    fn one_object_keeps_its_id() {
        let seq = generate_sequence(&small(), &ClassMap::default()).unwrap();
        assert_eq!(seq.len(), 5);
        for l in &seq.labels {
            let ids: BTreeSet<u32> = l.instance.iter().copied().filter(|v| *v != 0).collect();
            assert_eq!(ids, BTreeSet::from([1]));
        }
    }

    #[test]
    fn seeded_generation_repeats() {
        let cm = ClassMap::default();
        let spec = SceneSpec::with_objects(3, 4, 11);
        assert_eq!(generate_sequence(&spec, &cm).unwrap(), generate_sequence(&spec, &cm).unwrap());
    }

    #[test]
    fn blob_count_matches_spec() {
        let spec = SceneSpec::with_objects(4, 3, 2);
        let seq = generate_sequence(&spec, &ClassMap::default()).unwrap();
        for l in &seq.labels {
            let ids: BTreeSet<u32> = l.instance.iter().copied().filter(|v| *v != 0).collect();
            assert_eq!(ids.len(), 4);
        }
    }

    #[test]
    fn blobs_are_truncated() {
        let spec = small();
        let seq = generate_sequence(&spec, &ClassMap::default()).unwrap();
        let c = spec.starts()[0];
        for p in seq.world[0].iter().take(150) {
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!(d <= 3.0 * 0.2 + 1e-12);
        }
    }

    #[test]
    fn crowded_scene_rejected() {
        let mut spec = SceneSpec::with_objects(2, 5, 0);
        spec.objects[0].start = Some([0.0, 0.0, 0.0]);
        spec.objects[1].start = Some([1.0, 0.0, 0.0]);
        assert!(matches!(spec.validate(&ClassMap::default()), Err(Error::Config(_))));
    }

    #[test]
    fn crossing_paths_rejected() {
        let mut spec = SceneSpec::with_objects(2, 11, 0);
        spec.objects[0].start = Some([-5.0, 0.0, 0.0]);
        spec.objects[0].velocity = [1.0, 0.0, 0.0];
        spec.objects[1].start = Some([5.0, 0.0, 0.0]);
        spec.objects[1].velocity = [-1.0, 0.0, 0.0];
        assert!(spec.validate(&ClassMap::default()).is_err());
    }

    #[test]
    fn stuff_class_checked() {
        let mut spec = small();
        spec.objects[0].class = 40;
        assert!(spec.validate(&ClassMap::default()).is_err());
    }

    #[test]
    fn closest_approach() {
        let d = min_distance([-5.0, 1.0, 0.0], [1.0, 0.0, 0.0], [5.0, -1.0, 0.0], [-1.0, 0.0, 0.0], 10.0);
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn split_and_switch() {
        let l: Vec<PanopticLabels> = (0..4)
            .map(|_| PanopticLabels::new(vec![10, 10, 30], vec![1, 1, 2]).unwrap())
            .collect();
        let cm = ClassMap::default();
        let s = corrupt(&l, &Corruption::SplitTube { id: 1, at_scan: 2 }, &cm).unwrap();
        assert_eq!(s[1].instance, vec![1, 1, 2]);
        assert_eq!(s[2].instance, vec![3, 3, 2]);
        let w = corrupt(&l, &Corruption::IdSwitch { a: 1, b: Some(2), at_scan: 3 }, &cm).unwrap();
        assert_eq!(w[3].instance, vec![2, 2, 1]);
        let m = corrupt(&l, &Corruption::MergeTubes { a: 1, b: 2 }, &cm).unwrap();
        assert_eq!(m[0].instance, vec![1, 1, 1]);
    }

    #[test]
    fn flip_stays_within_things() {
        let l = vec![PanopticLabels::new(vec![10, 10, 10, 10, 40], vec![1, 1, 1, 1, 0]).unwrap()];
        let cm = ClassMap::default();
        let f = corrupt(&l, &Corruption::FlipClass { fraction: 0.5, to: 30, seed: 1 }, &cm).unwrap();
        assert_eq!(f[0].semantic.iter().filter(|c| **c == 30).count(), 2);
        assert_eq!(f[0].semantic[4], 40);
        assert_eq!(f[0].instance, l[0].instance);
        assert!(corrupt(&l, &Corruption::FlipClass { fraction: 0.5, to: 40, seed: 1 }, &cm).is_err());
    }

    #[test]
    fn corruption_from_toml() {
        #[derive(Deserialize)]
        struct W {
            c: Corruption,
        }
        let w: W = toml::from_str("c = { kind = \"split_tube\", id = 4, at_scan = 2 }").unwrap();
        assert_eq!(w.c, Corruption::SplitTube { id: 4, at_scan: 2 });
    }
}
