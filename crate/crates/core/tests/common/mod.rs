#![allow(dead_code)]

use panoptic4d::kitti_io::PanopticLabels;
use panoptic4d::sampling::{rng_for, SeededRng};
use rand::seq::SliceRandom;
use rand::Rng;

/// Raw SemanticKITTI ids: unlabelled, car, person, road, sidewalk.
pub const RAW_CLASSES: [u32; 5] = [0, 10, 30, 40, 48];
pub const THING_RAW: [u32; 2] = [10, 30];

fn is_thing(c: u32) -> bool {
    THING_RAW.contains(&c)
}

/// Random gt/pred streams of one sequence: up to 10 scans, 50 points per scan, 5 ids.
pub fn random_streams(seed: u64) -> (Vec<PanopticLabels>, Vec<PanopticLabels>) {
    let mut rng = rng_for(seed, 0);
    let scans = rng.random_range(1..=10);
    let max_id = rng.random_range(1..=5u32);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..scans {
        let n = rng.random_range(0..=50);
        let draw = |rng: &mut SeededRng| {
            let c = RAW_CLASSES[rng.random_range(0..RAW_CLASSES.len())];
            let id = if is_thing(c) { rng.random_range(0..=max_id) } else { 0 };
            (c, id)
        };
        let g: Vec<(u32, u32)> = (0..n).map(|_| draw(&mut rng)).collect();
        let p: Vec<(u32, u32)> = (0..n).map(|_| draw(&mut rng)).collect();
        gt.push(PanopticLabels::new(g.iter().map(|x| x.0).collect(), g.iter().map(|x| x.1).collect()).unwrap());
        pred.push(PanopticLabels::new(p.iter().map(|x| x.0).collect(), p.iter().map(|x| x.1).collect()).unwrap());
    }
    (gt, pred)
}

/// Applies a random bijection of the non-zero instance ids `1..=5`.
pub fn permute_ids(labels: &[PanopticLabels], seed: u64) -> Vec<PanopticLabels> {
    let mut perm: Vec<u32> = (1..=5).collect();
    perm.shuffle(&mut rng_for(seed, 1));
    labels
        .iter()
        .map(|l| {
            let ins = l.instance.iter().map(|i| if *i == 0 { 0 } else { perm[*i as usize - 1] + 100 }).collect();
            PanopticLabels::new(l.semantic.clone(), ins).unwrap()
        })
        .collect()
}

/// Swaps car and person on every predicted thing point.
pub fn swap_thing_classes(labels: &[PanopticLabels]) -> Vec<PanopticLabels> {
    labels
        .iter()
        .map(|l| {
            let sem = l
                .semantic
                .iter()
                .map(|c| match *c {
                    10 => 30,
                    30 => 10,
                    c => c,
                })
                .collect();
            PanopticLabels::new(sem, l.instance.clone()).unwrap()
        })
        .collect()
}
