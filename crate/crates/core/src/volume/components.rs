use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Geometry, Mask3D, VolumeError};

/// Voxel neighbourhood used for labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = String;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("unsupported connectivity {other} (expected 6 or 26)")),
        }
    }
}

/// One connected object: sorted linear voxel indices plus geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    geom: Geometry,
    voxels: Vec<usize>,
    bbox: ([usize; 3], [usize; 3]),
}

impl Component {
    /// Build from arbitrary voxel indices; duplicates are removed.
    pub fn from_voxels(geom: Geometry, mut voxels: Vec<usize>) -> Self {
        voxels.sort_unstable();
        voxels.dedup();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for &i in &voxels {
            let p = geom.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if voxels.is_empty() {
            lo = [0; 3];
        }
        Self { geom, voxels, bbox: (lo, hi) }
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    /// Physical volume in mm³.
    pub fn volume_mm3(&self) -> f64 {
        self.voxels.len() as f64 * self.geom.voxel_volume()
    }

    /// Inclusive voxel bounding box `(min, max)`.
    pub fn bbox(&self) -> ([usize; 3], [usize; 3]) {
        self.bbox
    }

    pub fn min_index(&self) -> Option<usize> {
        self.voxels.first().copied()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.voxels.binary_search(&idx).is_ok()
    }

    /// Number of voxels shared with `other` (both lists are sorted).
    pub fn overlap(&self, other: &Component) -> usize {
        let (a, b) = (&self.voxels, &other.voxels);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn bbox_intersects(&self, other: &Component) -> bool {
        let (alo, ahi) = self.bbox;
        let (blo, bhi) = other.bbox;
        (0..3).all(|a| alo[a] <= bhi[a] && blo[a] <= ahi[a])
    }
}

/// Components of one label, ordered by ascending minimum voxel index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub label: u8,
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Component> {
        self.components.iter()
    }
}

fn neighbours(geom: &Geometry, idx: usize, offsets: &[[i64; 3]], mut f: impl FnMut(usize)) {
    let p = geom.coords(idx);
    for o in offsets {
        let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
        if q.iter().zip(geom.dims).all(|(&c, d)| c >= 0 && (c as usize) < d) {
            f(geom.index([q[0] as usize, q[1] as usize, q[2] as usize]));
        }
    }
}

/// Label the connected objects of `label`.
pub fn connected_components(
    mask: &Mask3D,
    label: u8,
    connectivity: Connectivity,
) -> Result<ComponentSet, VolumeError> {
    if !mask.labels().contains(label) {
        return Err(VolumeError::UnknownLabel(label));
    }
    let geom = mask.geometry();
    let data = mask.data();
    let offsets = connectivity.offsets();
    let mut visited = vec![false; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    // Scanning in linear order makes each component's seed its minimum index,
    // which yields the required ordering for free.
    for start in 0..data.len() {
        if data[start] != label || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut voxels = Vec::new();
        while let Some(i) = queue.pop_front() {
            voxels.push(i);
            neighbours(&geom, i, &offsets, |j| {
                if data[j] == label && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            });
        }
        components.push(Component::from_voxels(geom, voxels));
    }
    Ok(ComponentSet { label, components })
}

/// Maximum centre-to-centre distance in mm between two voxels of the component.
pub fn longest_diameter(component: &Component) -> Result<f64, VolumeError> {
    if component.is_empty() {
        return Err(VolumeError::EmptyComponent);
    }
    let geom = component.geometry();
    let sp = geom.spacing;
    let phys = |p: [usize; 3]| [p[0] as f64 * sp[0], p[1] as f64 * sp[1], p[2] as f64 * sp[2]];

    // The farthest pair are convex-hull vertices, which are always surface
    // voxels; interior voxels can be dropped.
    let offsets = Connectivity::Six.offsets();
    let points: Vec<[f64; 3]> = component
        .voxels()
        .iter()
        .filter(|&&i| {
            let p = geom.coords(i);
            let on_border = (0..3).any(|a| p[a] == 0 || p[a] + 1 == geom.dims[a]);
            if on_border {
                return true;
            }
            let mut exposed = false;
            neighbours(&geom, i, &offsets, |j| exposed |= !component.contains(j));
            exposed
        })
        .map(|&i| phys(geom.coords(i)))
        .collect();

    let (lo, hi) = component.bbox();
    let (lo, hi) = (phys(lo), phys(hi));
    let corners: Vec<[f64; 3]> = (0..8)
        .map(|k| {
            [
                if k & 1 == 0 { lo[0] } else { hi[0] },
                if k & 2 == 0 { lo[1] } else { hi[1] },
                if k & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
        .collect();
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();

    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        // no partner can be farther than the farthest bounding-box corner
        let bound = corners.iter().map(|c| d2(a, c)).fold(0.0, f64::max);
        if bound <= best {
            continue;
        }
        for b in &points[i + 1..] {
            best = best.max(d2(a, b));
        }
    }
    Ok(best.sqrt())
}

/// Drop components of `label` smaller than `min_volume_mm3`. Other labels are untouched.
pub fn remove_small_objects(mask: &Mask3D, label: u8, min_volume_mm3: f64) -> Result<Mask3D, VolumeError> {
    let mut out = mask.clone();
    if min_volume_mm3 <= 0.0 || !mask.labels().contains(label) {
        return Ok(out);
    }
    let comps = connected_components(mask, label, Connectivity::default())?;
    for c in comps.iter().filter(|c| c.volume_mm3() < min_volume_mm3) {
        for &i in c.voxels() {
            out.set_index(i, 0);
        }
    }
    Ok(out)
}

/// Clear every labelled voxel of `tumor_mask` lying where `organ_mask` is background.
pub fn mask_outside(tumor_mask: &Mask3D, organ_mask: &Mask3D) -> Result<Mask3D, VolumeError> {
    tumor_mask.ensure_same_geometry(organ_mask)?;
    let mut out = tumor_mask.clone();
    for (i, &o) in organ_mask.data().iter().enumerate() {
        if o == 0 {
            out.set_index(i, 0);
        }
    }
    Ok(out)
}

/// Fill enclosed background cavities of a mask (any nonzero voxel counts as
/// foreground). Background is 6-connected to the volume border or it is a hole.
/// Filled voxels take `fill_label`.
pub fn fill_holes(mask: &Mask3D, fill_label: u8) -> Result<Mask3D, VolumeError> {
    if !mask.labels().contains(fill_label) {
        return Err(VolumeError::UnknownLabel(fill_label));
    }
    let geom = mask.geometry();
    let data = mask.data();
    let offsets = Connectivity::Six.offsets();
    let mut outside = vec![false; data.len()];
    let mut queue = VecDeque::new();
    for (i, &v) in data.iter().enumerate() {
        let p = geom.coords(i);
        let on_border = (0..3).any(|a| p[a] == 0 || p[a] + 1 == geom.dims[a]);
        if v == 0 && on_border {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        neighbours(&geom, i, &offsets, |j| {
            if data[j] == 0 && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        });
    }
    let mut out = mask.clone();
    for (i, &v) in data.iter().enumerate() {
        if v == 0 && !outside[i] {
            out.set_index(i, fill_label);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelMap;
    use proptest::prelude::*;

    fn mask_with(dims: [usize; 3], spacing: [f64; 3], label: u8, cubes: &[([usize; 3], usize)]) -> Mask3D {
        let mut m = Mask3D::empty(Geometry::new(dims, spacing).unwrap(), LabelMap::liver_tumor_spleen());
        for &(o, s) in cubes {
            for z in o[2]..o[2] + s {
                for y in o[1]..o[1] + s {
                    for x in o[0]..o[0] + s {
                        m.set([x, y, z], label).unwrap();
                    }
                }
            }
        }
        m
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = mask_with([4, 4, 4], [1.0; 3], 2, &[]);
        assert!(connected_components(&m, 2, Connectivity::TwentySix).unwrap().is_empty());
    }

    #[test]
    fn unknown_label_rejected() {
        let m = Mask3D::empty(Geometry::new([2, 2, 2], [1.0; 3]).unwrap(), LabelMap::binary("x"));
        assert_eq!(connected_components(&m, 5, Connectivity::Six), Err(VolumeError::UnknownLabel(5)));
        assert_eq!(connected_components(&m, 0, Connectivity::Six), Err(VolumeError::UnknownLabel(0)));
    }

    #[test]
    fn two_disjoint_cubes() {
        let m = mask_with([8, 8, 8], [1.0; 3], 2, &[([0, 0, 0], 2), ([5, 5, 5], 2)]);
        let cs = connected_components(&m, 2, Connectivity::TwentySix).unwrap();
        assert_eq!(cs.len(), 2);
        for c in cs.iter() {
            assert_eq!(c.len(), 8);
            assert_eq!(c.volume_mm3(), 8.0);
        }
        assert!(cs.components[0].min_index() < cs.components[1].min_index());
        assert_eq!(cs.components[1].bbox(), ([5, 5, 5], [6, 6, 6]));
    }

    #[test]
    fn single_voxel_volume_uses_spacing() {
        let m = mask_with([3, 3, 3], [2.0; 3], 2, &[([1, 1, 1], 1)]);
        let cs = connected_components(&m, 2, Connectivity::Six).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.components[0].volume_mm3(), 8.0);
    }

    #[test]
    fn diagonal_neighbours_depend_on_connectivity() {
        let m = mask_with([3, 3, 3], [1.0; 3], 2, &[([0, 0, 0], 1), ([1, 1, 1], 1)]);
        assert_eq!(connected_components(&m, 2, Connectivity::Six).unwrap().len(), 2);
        assert_eq!(connected_components(&m, 2, Connectivity::TwentySix).unwrap().len(), 1);
    }

    #[test]
    fn diameters() {
        let g = Geometry::new([4, 4, 4], [1.0; 3]).unwrap();
        let single = Component::from_voxels(g, vec![g.index([1, 1, 1])]);
        assert_eq!(longest_diameter(&single).unwrap(), 0.0);
        let pair = Component::from_voxels(g, vec![g.index([1, 1, 1]), g.index([2, 1, 1])]);
        assert_eq!(longest_diameter(&pair).unwrap(), 1.0);

        let g2 = Geometry::new([4, 4, 4], [2.0, 1.0, 1.0]).unwrap();
        let line = Component::from_voxels(g2, (0..3).map(|x| g2.index([x, 0, 0])).collect());
        // brute force: endpoints (0,0,0) and (4,0,0) mm
        assert_eq!(longest_diameter(&line).unwrap(), 4.0);

        assert_eq!(longest_diameter(&Component::from_voxels(g, vec![])), Err(VolumeError::EmptyComponent));
    }

    #[test]
    fn remove_small_objects_cases() {
        let m = mask_with([12, 12, 12], [1.0; 3], 2, &[([0, 0, 0], 2), ([6, 6, 6], 3)]);
        assert_eq!(remove_small_objects(&m, 2, 0.0).unwrap(), m);
        assert_eq!(remove_small_objects(&m, 2, 100.0).unwrap().count(2), 0);

        let m = mask_with([12, 12, 12], [1.0; 3], 2, &[([0, 0, 0], 2), ([6, 6, 6], 5)]);
        let out = remove_small_objects(&m, 2, 100.0).unwrap();
        assert_eq!(out.count(2), 125);
        assert_eq!(out.get([0, 0, 0]), 0);
        assert_eq!(out.get([7, 7, 7]), 2);
    }

    #[test]
    fn remove_small_objects_leaves_other_labels() {
        let mut m = mask_with([6, 6, 6], [1.0; 3], 2, &[([0, 0, 0], 1)]);
        m.set([4, 4, 4], 1).unwrap();
        let out = remove_small_objects(&m, 2, 5.0).unwrap();
        assert_eq!(out.count(2), 0);
        assert_eq!(out.get([4, 4, 4]), 1);
    }

    #[test]
    fn mask_outside_cases() {
        let tumor = mask_with([6, 6, 6], [1.0; 3], 2, &[([1, 1, 1], 4)]);
        let g = tumor.geometry();
        let ones = Mask3D::new(g.dims, g.spacing, vec![1; g.len()], LabelMap::binary("liver")).unwrap();
        let zeros = Mask3D::empty(g, LabelMap::binary("liver"));
        assert_eq!(mask_outside(&tumor, &ones).unwrap(), tumor);
        assert_eq!(mask_outside(&tumor, &zeros).unwrap().count(2), 0);

        // organ occupies x < 3; the tumor spans x in 1..5
        let mut organ = Mask3D::empty(g, LabelMap::binary("liver"));
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..3 {
                    organ.set([x, y, z], 1).unwrap();
                }
            }
        }
        let out = mask_outside(&tumor, &organ).unwrap();
        assert_eq!(out.count(2), 2 * 4 * 4);
        assert_eq!(out.get([2, 2, 2]), 2);
        assert_eq!(out.get([3, 2, 2]), 0);

        let other = Mask3D::empty(Geometry::new([5, 6, 6], [1.0; 3]).unwrap(), LabelMap::binary("liver"));
        assert!(matches!(mask_outside(&tumor, &other), Err(VolumeError::GeometryMismatch(..))));
    }

    #[test]
    fn fill_holes_closes_cavity() {
        let mut m = mask_with([7, 7, 7], [1.0; 3], 1, &[([1, 1, 1], 5)]);
        m.set([3, 3, 3], 0).unwrap();
        m.set([3, 3, 4], 2).unwrap();
        let filled = fill_holes(&m, 1).unwrap();
        assert_eq!(filled.get([3, 3, 3]), 1);
        assert_eq!(filled.get([3, 3, 4]), 2);
        assert_eq!(filled.get([0, 0, 0]), 0);
    }

    fn random_mask(dims: [usize; 3], seed: u64, density: f64) -> Mask3D {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Geometry::new(dims, [1.0, 1.5, 2.0]).unwrap();
        let data = (0..g.len()).map(|_| if rng.gen_bool(density) { 2 } else { 0 }).collect();
        Mask3D::new(dims, g.spacing, data, LabelMap::liver_tumor_spleen()).unwrap()
    }

    proptest! {
        #[test]
        fn components_partition_label(seed in any::<u64>(), density in 0.05f64..0.6) {
            let m = random_mask([6, 5, 4], seed, density);
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let cs = connected_components(&m, 2, conn).unwrap();
                let mut all: Vec<usize> = cs.iter().flat_map(|c| c.voxels().to_vec()).collect();
                let total = all.len();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), total);
                prop_assert_eq!(total, m.count(2));
                prop_assert!(cs.iter().all(|c| c.volume_mm3() > 0.0));
                let mins: Vec<usize> = cs.iter().map(|c| c.min_index().unwrap()).collect();
                prop_assert!(mins.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn remove_small_objects_idempotent(seed in any::<u64>(), thr in 0.0f64..40.0) {
            let m = random_mask([6, 6, 6], seed, 0.3);
            let once = remove_small_objects(&m, 2, thr).unwrap();
            let twice = remove_small_objects(&once, 2, thr).unwrap();
            prop_assert_eq!(&once, &twice);
            let cs = connected_components(&once, 2, Connectivity::TwentySix).unwrap();
            prop_assert!(cs.iter().all(|c| c.volume_mm3() >= thr));
        }

        #[test]
        fn diameter_matches_brute_force(seed in any::<u64>()) {
            let m = random_mask([6, 5, 4], seed, 0.5);
            let cs = connected_components(&m, 2, Connectivity::TwentySix).unwrap();
            for c in cs.iter() {
                let g = c.geometry();
                let pts: Vec<[f64; 3]> = c.voxels().iter().map(|&i| {
                    let p = g.coords(i);
                    [p[0] as f64 * g.spacing[0], p[1] as f64 * g.spacing[1], p[2] as f64 * g.spacing[2]]
                }).collect();
                let mut best = 0.0f64;
                for a in &pts {
                    for b in &pts {
                        best = best.max(((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt());
                    }
                }
                prop_assert!((longest_diameter(c).unwrap() - best).abs() < 1e-12);
            }
        }

        #[test]
        fn diameter_symmetric_under_axis_relabel(seed in any::<u64>()) {
            // swap x and z together with their spacings
            let m = random_mask([5, 4, 3], seed, 0.5);
            let g = m.geometry();
            let gt = Geometry::new([3, 4, 5], [g.spacing[2], g.spacing[1], g.spacing[0]]).unwrap();
            let cs = connected_components(&m, 2, Connectivity::TwentySix).unwrap();
            for c in cs.iter() {
                let swapped: Vec<usize> = c.voxels().iter().map(|&i| {
                    let p = g.coords(i);
                    gt.index([p[2], p[1], p[0]])
                }).collect();
                let cs2 = Component::from_voxels(gt, swapped);
                prop_assert!((longest_diameter(c).unwrap() - longest_diameter(&cs2).unwrap()).abs() < 1e-12);
            }
        }
    }
}
