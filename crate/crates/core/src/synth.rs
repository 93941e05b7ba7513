//! Synthetic complexes with planted contact flips.
//!
//! Ligand atom i sits at x = 12i. In its "in" state it is 3.5 Å from each of
//! four partner protein atoms; in its "out" state (4.5 Å lower in z) it is at
//! least 6.9 Å from them. The remaining protein atoms fill a 4 Å lattice and
//! keep ≥ 6 Å from every ligand position, so with a 4.5 Å cutoff and ±0.2 Å
//! jitter the contacts change only through planted flips and binding-mode
//! shifts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{AtomRecord, ModelIoError, Role, Topology, TrajectoryFrameSeries};

const SPACING: f64 = 12.0;
const IN_DISTANCE: f64 = 3.5;
const OUT_DROP: f64 = 4.5;
const PARTNERS: usize = 4;
const PARTNER_TILT: f64 = std::f64::consts::FRAC_PI_3;
const JITTER: f64 = 0.2;
const LATTICE: f64 = 4.0;
const FILLER_CLEARANCE: f64 = 6.0;
const MODE_SHIFT: f64 = 3.0;
const BASE_SIGMA: f64 = 3.0;
const BASE_EPSILON: f64 = 0.05;
/// Ratio between consecutive subtypes' σ and ε (20% apart at the larger value).
const SUBTYPE_RATIO: f64 = 1.25;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelIoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSubtype {
    pub atom_count: usize,
    /// Per-frame probability that each member atom switches state.
    pub flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub ligand_atoms: usize,
    pub protein_atoms: usize,
    pub subtype_plan: Vec<PlannedSubtype>,
    pub frames: usize,
    /// Frames at which the whole ligand shifts to the next binding mode.
    pub binding_mode_switches: Vec<usize>,
    pub frame_stride_ps: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let plan = |atom_count, flip_rate| PlannedSubtype { atom_count, flip_rate };
        Self {
            ligand_atoms: 7,
            protein_atoms: 128,
            subtype_plan: vec![plan(2, 0.0), plan(2, 0.0), plan(2, 0.0), plan(1, 0.4)],
            frames: 2000,
            binding_mode_switches: Vec::new(),
            frame_stride_ps: 20.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.subtype_plan.is_empty() {
            return bad("subtype_plan is empty".into());
        }
        let total: usize = self.subtype_plan.iter().map(|p| p.atom_count).sum();
        if total != self.ligand_atoms || self.ligand_atoms == 0 {
            return bad(format!("plan covers {total} atoms, ligand_atoms is {}", self.ligand_atoms));
        }
        if let Some(p) = self.subtype_plan.iter().find(|p| p.atom_count == 0) {
            return bad(format!("subtype with flip_rate {} has no atoms", p.flip_rate));
        }
        if let Some(p) = self.subtype_plan.iter().find(|p| !(0.0..=1.0).contains(&p.flip_rate)) {
            return bad(format!("flip_rate {} outside [0, 1]", p.flip_rate));
        }
        if self.protein_atoms < PARTNERS * self.ligand_atoms {
            return bad(format!(
                "protein_atoms must be at least {} ({} partners per ligand atom)",
                PARTNERS * self.ligand_atoms,
                PARTNERS
            ));
        }
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        if let Some(&f) = self.binding_mode_switches.iter().find(|&&f| f == 0 || f >= self.frames) {
            return bad(format!("binding-mode switch at frame {f} outside 1..{}", self.frames));
        }
        if self.binding_mode_switches.windows(2).any(|w| w[0] >= w[1]) {
            return bad("binding_mode_switches must be strictly increasing".into());
        }
        if !(self.frame_stride_ps > 0.0 && self.frame_stride_ps.is_finite()) {
            return bad("frame_stride_ps must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Subtype id (as assigned by the 10% grouping) → planted flip rate.
    pub flip_rates: BTreeMap<usize, f64>,
}

crate::json_artifact!(GroundTruth);

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub topology: Topology,
    pub trajectory: TrajectoryFrameSeries,
    pub ground_truth: GroundTruth,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn in_position(i: usize) -> [f64; 3] {
    [SPACING * i as f64, 0.0, OUT_DROP]
}

fn out_position(i: usize) -> [f64; 3] {
    [SPACING * i as f64, 0.0, 0.0]
}

fn partner_positions(i: usize) -> Vec<[f64; 3]> {
    let c = in_position(i);
    (0..PARTNERS)
        .map(|k| {
            let phi = std::f64::consts::FRAC_PI_2 * k as f64;
            [
                c[0] + IN_DISTANCE * PARTNER_TILT.sin() * phi.cos(),
                c[1] + IN_DISTANCE * PARTNER_TILT.sin() * phi.sin(),
                c[2] + IN_DISTANCE * PARTNER_TILT.cos(),
            ]
        })
        .collect()
}

/// `count` lattice points clear of every ligand position, nearest first.
fn filler_positions(n_ligand: usize, partners: &[[f64; 3]], count: usize) -> Vec<[f64; 3]> {
    let ligand: Vec<[f64; 3]> = (0..n_ligand).flat_map(|i| [in_position(i), out_position(i)]).collect();
    let mut margin = 12.0;
    loop {
        let lo = [-margin, -margin, -margin];
        let hi = [SPACING * (n_ligand - 1) as f64 + margin, margin, OUT_DROP + margin];
        let steps = |a: usize| ((hi[a] - lo[a]) / LATTICE).floor() as i64;
        let mut points = Vec::new();
        for ix in 0..=steps(0) {
            for iy in 0..=steps(1) {
                for iz in 0..=steps(2) {
                    let p = [
                        lo[0] + LATTICE * ix as f64,
                        lo[1] + LATTICE * iy as f64,
                        lo[2] + LATTICE * iz as f64,
                    ];
                    let nearest = ligand.iter().map(|l| dist(l, &p)).fold(f64::INFINITY, f64::min);
                    let crowded = partners.iter().any(|q| dist(q, &p) < 2.0);
                    if nearest >= FILLER_CLEARANCE && !crowded {
                        let to_in = (0..n_ligand)
                            .map(|i| dist(&in_position(i), &p))
                            .fold(f64::INFINITY, f64::min);
                        points.push((to_in, p));
                    }
                }
            }
        }
        if points.len() >= count {
            points.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(a.1[0].total_cmp(&b.1[0]))
                    .then(a.1[1].total_cmp(&b.1[1]))
                    .then(a.1[2].total_cmp(&b.1[2]))
            });
            return points.into_iter().take(count).map(|(_, p)| p).collect();
        }
        margin *= 2.0;
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let n = spec.ligand_atoms;

    let mut atoms = Vec::with_capacity(n + spec.protein_atoms);
    let mut plan_of = Vec::with_capacity(n);
    for (k, plan) in spec.subtype_plan.iter().enumerate() {
        let sigma = BASE_SIGMA * SUBTYPE_RATIO.powi(k as i32);
        let epsilon = BASE_EPSILON * SUBTYPE_RATIO.powi(k as i32);
        // members spread over at most 2% of σ, well inside the 10% rule
        let step = 0.02 * sigma / plan.atom_count as f64;
        for j in 0..plan.atom_count {
            let index = atoms.len();
            atoms.push(AtomRecord {
                index,
                name: format!("L{index}"),
                element: "C".into(),
                atom_type: format!("S{k}T{j}"),
                sigma: sigma + step * j as f64,
                epsilon,
                role: Role::Ligand,
                residue_id: 1,
                residue_name: "LIG".into(),
            });
            plan_of.push(k);
        }
    }
    let mut protein_pos: Vec<[f64; 3]> = (0..n).flat_map(partner_positions).collect();
    let fillers = filler_positions(n, &protein_pos, spec.protein_atoms - protein_pos.len());
    protein_pos.extend(fillers);
    for (p, _) in protein_pos.iter().enumerate() {
        let index = atoms.len();
        atoms.push(AtomRecord {
            index,
            name: format!("P{p}"),
            element: "C".into(),
            atom_type: "PCT".into(),
            sigma: 3.5,
            epsilon: 0.07,
            role: Role::Protein,
            residue_id: 2 + (p / 8) as i64,
            residue_name: "PRT".into(),
        });
    }
    let topology = Topology::new(atoms)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inside = vec![true; n];
    let mut mode = 0usize;
    let total = n + protein_pos.len();
    let mut coords = Vec::with_capacity(spec.frames * total);
    for t in 0..spec.frames {
        if t > 0 {
            for (i, state) in inside.iter_mut().enumerate() {
                if rng.gen::<f64>() < spec.subtype_plan[plan_of[i]].flip_rate {
                    *state = !*state;
                }
            }
        }
        if spec.binding_mode_switches.binary_search(&t).is_ok() {
            mode += 1;
        }
        let shift = MODE_SHIFT * mode as f64;
        for i in 0..n {
            let mut p = if inside[i] { in_position(i) } else { out_position(i) };
            p[1] += shift;
            coords.push(p);
        }
        coords.extend(protein_pos.iter().copied());
        let frame = &mut coords[t * total..];
        for p in frame.iter_mut() {
            for c in p.iter_mut() {
                *c += rng.gen_range(-JITTER..=JITTER);
            }
        }
    }
    let trajectory = TrajectoryFrameSeries::new(total, coords, spec.frame_stride_ps)?;
    let ground_truth = GroundTruth {
        flip_rates: spec.subtype_plan.iter().enumerate().map(|(k, p)| (k, p.flip_rate)).collect(),
    };
    Ok(SynthOutput {
        topology,
        trajectory,
        ground_truth,
    })
}
